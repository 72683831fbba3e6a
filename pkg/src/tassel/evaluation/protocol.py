"""Repeated split / train / test runs, summarised as mean and standard deviation."""

import logging
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from ..components import extract_all
from ..data import apply_normalizer, fit_normalizer, split
from .metrics import evaluate

log = logging.getLogger("tassel")

METHODS = ("tassel", "mlp")


@dataclass
class SeedResult:
    seed: int
    metrics: object  # MetricReport
    selected_epoch: int
    model: object = None  # TrainedModel, kept only when asked for
    test_ids: List[str] = field(default_factory=list)
    predictions: list = field(default_factory=list)


def summarize(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=0))


@dataclass
class ProtocolResult:
    method: str
    runs: List[SeedResult]

    def summary(self):
        out = {"method": self.method, "seeds": [r.seed for r in self.runs]}
        for key in ("accuracy", "kappa", "f1_weighted", "f1_macro"):
            m, s = summarize([getattr(r.metrics, key) for r in self.runs])
            out[f"{key}_mean"] = m
            out[f"{key}_std"] = s
        return out


def run_seed(ds, config, seed, method="tassel", fractions=(0.5, 0.2, 0.3), keep_model=False, comps_cache=None):
    """Split with ``seed``, train on train/val, score on test."""
    from ..training import fit_tassel
    from .baseline import mlp_baseline_fit

    cfg = replace(config, seed=seed)
    train, val, test = split(ds, fractions, seed=seed)
    if method == "tassel":
        stats = fit_normalizer(train)
        comps = None
        if comps_cache is not None:
            key = (seed, cfg.n_components)
            if key not in comps_cache:
                comps_cache[key] = _extract_splits(train, val, test, stats, cfg)
            comps = comps_cache[key]
        model, report = fit_tassel(train, val, cfg, components=None if comps is None else comps[:2])
        records = model.predict(test, comps=None if comps is None else comps[2])
    elif method == "mlp":
        model, report = mlp_baseline_fit(train, val, cfg)
        records = model.predict(test)
    else:
        raise ValueError(f"unknown method {method!r}")
    rep = evaluate([r.label for r in records], test.labels, len(ds.class_names))
    log.info("%s seed %d: f1_weighted %.4f (epoch %d)", method, seed, rep.f1_weighted, report.selected_epoch)
    return SeedResult(seed, rep, report.selected_epoch, model if keep_model else None, test.ids, records)


def _extract_splits(train, val, test, stats, cfg):
    out = []
    for part in (train, val, test):
        out.append(
            extract_all(
                apply_normalizer(part, stats), cfg.n_components, cfg.seed,
                cfg.kmeans_max_iters, cfg.kmeans_tol, cfg.kmeans_restarts,
            )
        )
    return tuple(out)


def run_protocol(ds, config, seeds=range(5), method="tassel", keep_models=False, comps_cache=None):
    runs = [run_seed(ds, config, s, method, keep_model=keep_models, comps_cache=comps_cache) for s in seeds]
    return ProtocolResult(method, runs)
