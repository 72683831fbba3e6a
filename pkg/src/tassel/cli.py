"""Command-line entry point: ``tassel <subcommand> --out DIR ...``.

Every subcommand writes its outputs and a ``manifest.json`` into the run
directory and prints a short human summary. Exit codes: 1 usage or
configuration, 2 data or schema, 3 numeric failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    ContractError,
    NumericError,
    ObjectError,
    TasselError,
    UnsupportedOperation,
)

log = logging.getLogger("tassel")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
DEFAULT_NC_VALUES = (2, 4, 6, 8, 10)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# run bookkeeping -----------------------------------------------------------

def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """What ran, with which resolved settings, on which inputs, producing what."""

    def __init__(self, command, out_dir):
        self.command = command
        self.out_dir = out_dir
        self.config = {}
        self.seeds = []
        self.inputs = {}
        self.outputs = []

    def add_input(self, path):
        self.inputs[os.path.basename(path)] = file_sha256(path)

    def path(self, name):
        """Absolute path for output ``name``, registered in the manifest."""
        if name not in self.outputs:
            self.outputs.append(name)
        full = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(full) or ".", exist_ok=True)
        return full

    def to_json(self):
        return {
            "command": self.command,
            "config": self.config,
            "seeds": list(self.seeds),
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "version": __version__,
        }

    def write(self):
        _write_json(os.path.join(self.out_dir, "manifest.json"), self.to_json())


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# argument plumbing -----------------------------------------------------------

_TRAIN_FLAGS = {
    "epochs": int, "batch_size": int, "lr": float, "lam": float, "n_components": int,
    "seed": int, "eval_every": int, "log_every": int, "dropout": float, "width": float,
    "beta1": float, "beta2": float, "eps": float, "kmeans_restarts": int,
    "kmeans_max_iters": int, "kmeans_tol": float,
}


def _flag(name):
    return "--lambda" if name == "lam" else "--" + name.replace("_", "-")


def _add_train_flags(p):
    g = p.add_argument_group("training options (override --config)")
    for name, typ in _TRAIN_FLAGS.items():
        g.add_argument(_flag(name), dest=name, type=typ, default=argparse.SUPPRESS)
    g.add_argument("--config", dest="config_file", help="JSON file with training options")


def resolve_train_config(args):
    """Defaults, then the JSON file, then explicit flags."""
    from .training import TrainConfig

    cfg = TrainConfig()
    if getattr(args, "config_file", None):
        cfg = TrainConfig.from_json({**cfg.to_json(), **_read_json(args.config_file)})
    overrides = {n: getattr(args, n) for n in _TRAIN_FLAGS if hasattr(args, n)}
    cfg = replace(cfg, **overrides).validate()
    log.info("resolved training config: %s", json.dumps(cfg.to_json(), sort_keys=True))
    return cfg


def _add_common(p):
    p.add_argument("--out", required=True, help="run directory (created if missing)")
    p.add_argument("--threads", type=int, help="worker cap; same as TASSEL_THREADS")
    p.add_argument("-v", "--verbose", action="store_true")


def _parse_fractions(text):
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return parts


def build_parser():
    parser = _Parser(prog="tassel", description="Object-based SITS classification from pixel components.")
    parser.add_argument("--version", action="version", version=f"tassel {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    _add_common(p)
    from .synth import SynthConfig

    for f in fields(SynthConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default), default=argparse.SUPPRESS)
    p.add_argument("--config", dest="config_file", help="JSON file with generator options")
    p.add_argument("--name", default="dataset.ndjson.gz", help="dataset file name inside --out")

    p = sub.add_parser("cluster", help="extract and cache components")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--L", dest="L", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--model", help="normalise with this checkpoint's statistics instead of the dataset's")

    p = sub.add_parser("train", help="split, train, select on validation, score on test")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("tassel", "mlp"), default="tassel")
    p.add_argument("--fractions", type=_parse_fractions, default=(0.5, 0.2, 0.3))
    _add_train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint, a prediction file, or run the multi-seed protocol")
    _add_common(p)
    p.add_argument("--data", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--predictions")
    src.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--method", choices=("tassel", "mlp"), default="tassel")
    p.add_argument("--fractions", type=_parse_fractions, default=(0.5, 0.2, 0.3))
    _add_train_flags(p)

    p = sub.add_parser("predict", help="write per-object predictions")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--components", help="component cache written by 'cluster --model'")

    p = sub.add_parser("explain", help="export per-pixel attention maps")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--ids", nargs="+", help="restrict to these object ids")
    p.add_argument("--components", help="component cache written by 'cluster --model'")

    p = sub.add_parser("sweep-nc", help="mean and std of weighted F1 per number of components")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--values", type=int, nargs="+", default=list(DEFAULT_NC_VALUES))
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    _add_train_flags(p)
    return parser


# shared steps ------------------------------------------------------------------

def _load_data(path, manifest):
    from .data import load_ndjson

    manifest.add_input(path)
    return load_ndjson(path)


def _load_model(path, manifest):
    from .training import TrainedModel

    manifest.add_input(path)
    return TrainedModel.load(path)


def _select_part(ds, model, part):
    """Subset of ``ds`` recorded in the checkpoint's split, or all of it."""
    from .data import split

    if part == "all":
        return ds
    info = getattr(model, "split", None)
    if not info:
        raise ConfigError("this checkpoint carries no split information; use --part all")
    parts = dict(zip(("train", "val", "test"), split(ds, tuple(info["fractions"]), seed=info["seed"])))
    return parts[part]


def _check_classes(ds, model):
    if list(ds.class_names) != list(model.class_names):
        raise ContractError(f"dataset classes {ds.class_names} differ from the model's {model.class_names}")


def _components_for(model, ds, cache_file, manifest):
    if model.components is None:
        return None
    if cache_file is None:
        return model.extract(ds)
    from .components import load_components

    manifest.add_input(cache_file)
    meta, comps = load_components(cache_file)
    expected = {**model.components, "norm_stats": model.norm_stats.to_json()}
    got = {k: meta.get(k) for k in expected}
    if json.dumps(got, sort_keys=True) != json.dumps(expected, sort_keys=True):
        raise ConfigError(f"{cache_file} was built with different component settings or normalisation")
    by_id = {c.object_id: c for c in comps}
    missing = [o.id for o in ds.objects if o.id not in by_id]
    if missing:
        raise ContractError(f"component cache lacks object {missing[0]!r}")
    return [by_id[o.id] for o in ds.objects]


def _write_predictions(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def read_predictions(path):
    from .errors import ParseError
    from .model import PredictionRecord

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(PredictionRecord(rec["object_id"], int(rec["label"]), rec["scores"], rec["alpha"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: bad prediction record ({exc})", line=lineno) from None
    return out


def _report_json(rep, ds):
    out = rep.to_json()
    out["class_names"] = list(ds.class_names)
    return out


# subcommands ---------------------------------------------------------------------

def cmd_synth(args, m):
    from .synth import SynthConfig, write

    base = asdict(SynthConfig())
    if args.config_file:
        base.update(_read_json(args.config_file))
    for name in list(base):
        if hasattr(args, name):
            base[name] = getattr(args, name)
    try:
        cfg = SynthConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    m.config = asdict(cfg)
    m.seeds = [cfg.seed]
    ds, truth, tpath = write(cfg, m.path(args.name))
    m.outputs.append(os.path.basename(tpath))
    print(f"wrote {len(ds)} objects ({len(ds.class_names)} classes, T={ds.T}, B={ds.B}) to {args.name}")


def cmd_cluster(args, m):
    from .components import cache_path, extract_all, save_components
    from .data import apply_normalizer, fit_normalizer

    ds = _load_data(args.data, m)
    if args.model:
        stats = _load_model(args.model, m).norm_stats
    else:
        stats = fit_normalizer(ds)
    settings = {"L": args.L, "seed": args.seed, "restarts": args.restarts, "max_iters": args.max_iters, "tol": args.tol}
    m.config = dict(settings)
    m.seeds = [args.seed]
    comps = extract_all(apply_normalizer(ds, stats), args.L, args.seed, args.max_iters, args.tol, args.restarts)
    name = os.path.basename(cache_path(args.data, args.L))
    save_components(m.path(name), comps, {**settings, "norm_stats": stats.to_json()})
    ks = np.array([c.effective_k for c in comps])
    print(f"clustered {len(comps)} objects into L={args.L} components (effective k {ks.min()}..{ks.max()}) -> {name}")


def cmd_train(args, m):
    from .data import split
    from .evaluation import evaluate, mlp_baseline_fit
    from .training import fit_tassel

    cfg = resolve_train_config(args)
    ds = _load_data(args.data, m)
    m.config = {**cfg.to_json(), "method": args.method, "fractions": list(args.fractions)}
    m.seeds = [cfg.seed]
    train, val, test = split(ds, args.fractions, seed=cfg.seed)
    if args.method == "tassel":
        model, report = fit_tassel(train, val, cfg)
    else:
        model, report = mlp_baseline_fit(train, val, cfg)
    model.split = {"seed": cfg.seed, "fractions": list(args.fractions)}
    model.save(m.path("model.ckpt"))
    trace = report.to_json()
    wall = trace.pop("wall_time")
    _write_json(m.path("fit_report.json"), trace)
    _write_text(m.path("fit_trace.csv"), report.to_csv())
    records = model.predict(test)
    rep = evaluate([r.label for r in records], test.labels, len(ds.class_names))
    _write_json(m.path("metrics.json"), _report_json(rep, ds))
    _write_predictions(m.path("predictions.ndjson"), records)
    print(
        f"{args.method}: selected epoch {report.selected_epoch} (val F1 {report.best_val_f1:.4f}); "
        f"test accuracy {rep.accuracy:.4f}, weighted F1 {rep.f1_weighted:.4f}, kappa {rep.kappa:.4f} "
        f"[{wall:.1f}s]"
    )


def cmd_eval(args, m):
    from .evaluation import csv_text, evaluate

    ds = _load_data(args.data, m)
    if args.seeds is not None:
        cfg = resolve_train_config(args)
        m.config = {**cfg.to_json(), "method": args.method, "fractions": list(args.fractions)}
        m.seeds = list(args.seeds)
        res = run_protocol_fractions(ds, cfg, args.seeds, args.method, args.fractions)
        summary = res.summary()
        rows = [{"seed": r.seed, "selected_epoch": r.selected_epoch, **r.metrics.to_json()} for r in res.runs]
        _write_json(m.path("protocol.json"), {"summary": summary, "runs": rows})
        keys = [f"{k}_{s}" for k in ("accuracy", "kappa", "f1_weighted", "f1_macro") for s in ("mean", "std")]
        _write_text(m.path("protocol.csv"), csv_text([[args.method] + [summary[k] for k in keys]], keys, ["method"]))
        print(
            f"{args.method} over seeds {list(args.seeds)}: weighted F1 "
            f"{100 * summary['f1_weighted_mean']:.2f} +- {100 * summary['f1_weighted_std']:.2f}, "
            f"accuracy {100 * summary['accuracy_mean']:.2f} +- {100 * summary['accuracy_std']:.2f}, "
            f"kappa {summary['kappa_mean']:.4f} +- {summary['kappa_std']:.4f}"
        )
        return
    if args.predictions:
        m.add_input(args.predictions)
        records = read_predictions(args.predictions)
        known = set(ds.ids)
        stray = [r.object_id for r in records if r.object_id not in known]
        if stray:
            raise ContractError(f"prediction for unknown object {stray[0]!r}")
        sel = ds.select_ids([r.object_id for r in records])
        by_id = {r.object_id: r.label for r in records}
        preds = [by_id[i] for i in sel.ids]
    else:
        model = _load_model(args.model, m)
        _check_classes(ds, model)
        sel = _select_part(ds, model, args.part)
        m.config = {"part": args.part}
        preds = [r.label for r in model.predict(sel)]
    if (sel.labels < 0).any():
        raise ContractError("evaluation needs every object to be labelled")
    rep = evaluate(preds, sel.labels, len(ds.class_names))
    _write_json(m.path("metrics.json"), _report_json(rep, ds))
    _write_text(m.path("metrics.csv"), csv_text([rep.csv_row()]))
    print(f"n={rep.n}: accuracy {rep.accuracy:.4f}, weighted F1 {rep.f1_weighted:.4f}, kappa {rep.kappa:.4f}")


def run_protocol_fractions(ds, cfg, seeds, method, fractions):
    from .evaluation import ProtocolResult, run_seed

    cache = {}
    runs = [run_seed(ds, cfg, s, method, fractions=fractions, comps_cache=cache) for s in seeds]
    return ProtocolResult(method, runs)


def cmd_predict(args, m):
    ds = _load_data(args.data, m)
    model = _load_model(args.model, m)
    _check_classes(ds, model)
    sel = _select_part(ds, model, args.part)
    m.config = {"part": args.part}
    comps = _components_for(model, sel, args.components, m)
    records = model.predict(sel, comps=comps)
    _write_predictions(m.path("predictions.ndjson"), records)
    counts = np.bincount([r.label for r in records], minlength=len(ds.class_names))
    print("predicted " + ", ".join(f"{n}: {c}" for n, c in zip(ds.class_names, counts)))


def cmd_explain(args, m):
    from .explain import build_map, export_maps

    if args.bins < 2:
        raise ConfigError("--bins must be at least 2")
    ds = _load_data(args.data, m)
    model = _load_model(args.model, m)
    if model.components is None:
        raise UnsupportedOperation("attention maps need a component model; the baseline has no attention")
    sel = _select_part(ds, model, args.part)
    if args.ids:
        sel = sel.select_ids(args.ids)
    m.config = {"part": args.part, "bins": args.bins, "ids": args.ids}
    comps = _components_for(model, sel, args.components, m)
    records = model.predict(sel, comps=comps)
    maps = [build_map(r, c, o.coords) for r, c, o in zip(records, comps, sel.objects)]
    index = export_maps(maps, m.path("maps"), args.bins)
    m.outputs.remove("maps")
    for e in index:
        for key in ("csv", "pgm", "sidecar"):
            if key in e:
                m.outputs.append("maps/" + e[key])
    m.outputs.append("maps/index.json")
    _write_predictions(m.path("predictions.ndjson"), records)
    print(f"wrote attention maps for {len(maps)} objects to maps/ ({args.bins} quantile bins)")


def cmd_sweep_nc(args, m):
    from .evaluation import run_protocol

    cfg = resolve_train_config(args)
    ds = _load_data(args.data, m)
    if any(v < 1 for v in args.values):
        raise ConfigError("component counts must be positive")
    m.config = {**cfg.to_json(), "values": list(args.values)}
    m.seeds = list(args.seeds)
    lines = ["nc,f1_weighted_mean,f1_weighted_std,n_seeds"]
    runs = {}
    for nc in args.values:
        res = run_protocol(ds, replace(cfg, n_components=nc), args.seeds, "tassel", comps_cache={})
        s = res.summary()
        runs[str(nc)] = [r.metrics.f1_weighted for r in res.runs]
        lines.append(f"{nc},{s['f1_weighted_mean']!r},{s['f1_weighted_std']!r},{len(res.runs)}")
        print(f"nc={nc}: weighted F1 {100 * s['f1_weighted_mean']:.2f} +- {100 * s['f1_weighted_std']:.2f}")
    _write_text(m.path("sweep_nc.csv"), "\n".join(lines) + "\n")
    _write_json(m.path("sweep_nc.json"), {"f1_weighted": runs})


COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "sweep-nc": cmd_sweep_nc,
}


def _exit_code(exc):
    if isinstance(exc, ObjectError):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, UnsupportedOperation)):
        return EXIT_USAGE
    return EXIT_DATA


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if args.threads is not None:
        os.environ["TASSEL_THREADS"] = str(max(1, args.threads))
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(args.command, args.out)
    try:
        COMMANDS[args.command](args, manifest)
    except (TasselError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        code = _exit_code(exc)
        print(f"tassel {args.command}: {exc}", file=sys.stderr)
        return code
    except ArithmeticError as exc:
        print(f"tassel {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest.write()
    return 0


if __name__ == "__main__":
    sys.exit(main())
