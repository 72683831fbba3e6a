"""Adam, the epoch loop with validation-based model selection, and the
trained-model bundle that ties a network to its preprocessing."""

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from . import rng as rngmod
from .components import extract_all, stack_centroids
from .data import NormStats, apply_normalizer, fit_normalizer
from .errors import ConfigError, InternalError, NumericError
from .evaluation.metrics import evaluate
from .model import (
    ModelConfig,
    PredictionRecord,
    TasselNet,
    load_checkpoint,
    save_checkpoint,
    softmax_rows,
)

log = logging.getLogger("tassel")


@dataclass
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 32
    lr: float = 1e-4
    lam: float = 0.5
    n_components: int = 6
    seed: int = 0
    eval_every: int = 10
    log_every: int = 0
    dropout: float = 0.2
    width: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6

    # "lambda" is the public name in JSON and on the command line
    def to_json(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training option(s): {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("epochs", "batch_size", "n_components", "eval_every"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        return self


# optimiser ---------------------------------------------------------------

@dataclass
class OptimizerState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            [np.zeros_like(p.data) for p in params],
            [np.zeros_like(p.data) for p in params],
            0, lr, beta1, beta2, eps,
        )


def adam_step(params, state, grads=None):
    """One bias-corrected Adam update in place. ``grads`` defaults to ``p.grad``;
    a missing gradient counts as zero."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(state.m) or len(params) != len(state.m):
        raise InternalError("optimizer state does not match parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise InternalError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - update.astype(p.data.dtype, copy=False)


# epoch loop --------------------------------------------------------------

@dataclass
class FitReport:
    train_loss: List[float] = field(default_factory=list)
    val_epochs: List[int] = field(default_factory=list)
    val_f1: List[float] = field(default_factory=list)
    selected_epoch: int = 0
    best_val_f1: float = float("nan")
    wall_time: float = 0.0

    def to_json(self):
        return asdict(self)

    def to_csv(self):
        val = dict(zip(self.val_epochs, self.val_f1))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_f1_weighted"])
        for e, loss in enumerate(self.train_loss, start=1):
            w.writerow([e, repr(loss), repr(val[e]) if e in val else ""])
        return buf.getvalue()


def select_epoch(val_epochs, val_scores):
    """Epoch of the best score; the earliest one wins ties."""
    best = int(np.argmax(np.asarray(val_scores)))
    return val_epochs[best]


def fit_network(net, X_train, y_train, X_val, y_val, config, lam=None):
    """Train ``net`` in place and leave it holding the best-on-validation weights."""
    config.validate()
    lam = config.lam if lam is None else lam
    n = X_train.shape[0]
    if n == 0 or X_val.shape[0] == 0:
        raise ConfigError("training and validation sets must be non-empty")
    n_classes = net.config.n_classes
    shuffle = rngmod.stream(config.seed, "shuffle")
    drop = rngmod.stream(config.seed, "dropout")
    params = net.parameters()
    opt = OptimizerState.for_params(params, config.lr, config.beta1, config.beta2, config.eps)
    report = FitReport()
    best = None
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            net.zero_grad()
            loss, _ = net.loss(X_train[idx], y_train[idx], lam, drop)
            loss.backward()
            adam_step(params, opt)
            total += loss.item() * idx.size
        report.train_loss.append(total / n)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            preds = np.argmax(net.predict_logits(X_val), axis=1)
            f1 = evaluate(preds, y_val, n_classes).f1_weighted
            if not np.isfinite(f1):
                raise NumericError(f"validation F1 is not finite at epoch {epoch}")
            report.val_epochs.append(epoch)
            report.val_f1.append(f1)
            if best is None or f1 > report.best_val_f1:
                best = net.snapshot()
                report.best_val_f1 = f1
                report.selected_epoch = epoch
        if config.log_every and epoch % config.log_every == 0:
            last = report.val_f1[-1] if report.val_f1 else float("nan")
            log.info("epoch %d loss %.4f val_f1 %.4f", epoch, report.train_loss[-1], last)
    net.restore(best)
    report.wall_time = time.perf_counter() - t0
    return net, report


# trained bundle ----------------------------------------------------------

@dataclass
class TrainedModel:
    """A network plus everything needed to turn raw objects into its input."""

    net: object
    class_names: List[str]
    norm_stats: NormStats
    components: Optional[dict] = None  # L, seed, restarts, max_iters, tol
    split: Optional[dict] = None  # seed and fractions of the split it was trained on

    @property
    def kind(self):
        return self.net.kind

    def normalize(self, ds):
        return apply_normalizer(ds, self.norm_stats)

    def extract(self, ds, normalized=False):
        """ComponentSets for ``ds`` (TASSEL models only)."""
        if self.components is None:
            raise ConfigError("this model does not use components")
        nds = ds if normalized else self.normalize(ds)
        c = self.components
        return extract_all(nds, c["L"], c["seed"], c["max_iters"], c["tol"], c["restarts"])

    def features(self, ds, comps=None):
        if self.components is None:
            from .evaluation.baseline import mean_representation

            return mean_representation(self.normalize(ds))
        comps = comps if comps is not None else self.extract(ds)
        return stack_centroids(comps, self.net.dtype)

    def predict(self, ds, comps=None):
        """PredictionRecords in dataset order."""
        if self.components is None:
            logits = self.net.predict_logits(self.features(ds))
            alphas = [[] for _ in range(len(ds))]
        else:
            comps = comps if comps is not None else self.extract(ds)
            logits, raw = self.net.infer(stack_centroids(comps, self.net.dtype))
            alphas = [c.merge_alpha(a).tolist() for c, a in zip(comps, raw)]
        probs = softmax_rows(logits)
        return [
            PredictionRecord(o.id, int(np.argmax(lg)), p.tolist(), a)
            for o, lg, p, a in zip(ds.objects, logits, probs, alphas)
        ]

    def save(self, path):
        extra = {"class_names": list(self.class_names), "norm_stats": self.norm_stats.to_json()}
        if self.components is not None:
            extra["components"] = dict(self.components)
        if self.split is not None:
            extra["split"] = dict(self.split)
        save_checkpoint(path, self.net, extra)

    @classmethod
    def load(cls, path):
        net, manifest = load_checkpoint(path)
        return cls(
            net, manifest["class_names"], NormStats.from_json(manifest["norm_stats"]),
            manifest.get("components"), manifest.get("split"),
        )


def component_settings(config):
    return {
        "L": config.n_components,
        "seed": config.seed,
        "restarts": config.kmeans_restarts,
        "max_iters": config.kmeans_max_iters,
        "tol": config.kmeans_tol,
    }


def fit_tassel(train, val, config, components=None, dtype=np.float32):
    """Normalise, extract components, train; return (TrainedModel, FitReport).

    ``components`` may supply precomputed ``(train_comps, val_comps)``
    extracted from the normalised splits with the same settings.
    """
    config.validate()
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    stats = fit_normalizer(train)
    settings = component_settings(config)
    bundle_cfg = ModelConfig(
        n_bands=train.B,
        n_classes=len(train.class_names),
        n_components=config.n_components,
        width=config.width,
        dropout=config.dropout,
    )
    net = TasselNet(bundle_cfg, seed=config.seed, dtype=dtype)
    model = TrainedModel(net, list(train.class_names), stats, settings)
    if components is None:
        tr_c = model.extract(train)
        va_c = model.extract(val)
    else:
        tr_c, va_c = components
    X_tr, y_tr = stack_centroids(tr_c, net.dtype), train.labels
    X_va, y_va = stack_centroids(va_c, net.dtype), val.labels
    _, report = fit_network(net, X_tr, y_tr, X_va, y_va, config)
    return model, report
