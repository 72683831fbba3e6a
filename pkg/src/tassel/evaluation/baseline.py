"""MLP on the mean object representation, the aggregation-based competitor."""

from dataclasses import dataclass

import numpy as np

from .. import numerics as nm
from .. import rng as rngmod
from ..errors import ConfigError, ContractError, ShapeError
from ..model import Network


def mean_representation(ds, dtype=np.float32):
    """Per-object pixel mean flattened to ``T * B`` (the single k-means
    centroid for ``L = 1``)."""
    if len(ds) == 0:
        return np.zeros((0, ds.T * ds.B), dtype=dtype)
    return np.stack([o.pixels.mean(axis=0).reshape(-1) for o in ds.objects]).astype(dtype)


@dataclass
class MLPConfig:
    n_inputs: int
    n_classes: int
    hidden: int = 512
    dropout: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9


class MLPBaseline(Network):
    """Two hidden layers: dense -> ReLU -> BatchNorm -> dropout, then a linear output."""

    kind = "mlp"

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        gen = rngmod.stream(seed, "init")
        h, c = config.hidden, config.n_classes
        P = lambda shape: nm.Tensor(nm.he_uniform(gen, shape, shape[0], dtype), requires_grad=True)
        Z = lambda n: nm.Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self.W1, self.b1 = P((config.n_inputs, h)), Z(h)
        self.bn1 = nm.BatchNorm(h, config.bn_eps, config.bn_momentum, dtype)
        self.W2, self.b2 = P((h, h)), Z(h)
        self.bn2 = nm.BatchNorm(h, config.bn_eps, config.bn_momentum, dtype)
        self.W3, self.b3 = P((h, c)), Z(c)

    def named_parameters(self):
        return [
            ("W1", self.W1), ("b1", self.b1), ("bn1.gamma", self.bn1.gamma), ("bn1.beta", self.bn1.beta),
            ("W2", self.W2), ("b2", self.b2), ("bn2.gamma", self.bn2.gamma), ("bn2.beta", self.bn2.beta),
            ("W3", self.W3), ("b3", self.b3),
        ]

    def batchnorms(self):
        return [("bn1", self.bn1), ("bn2", self.bn2)]

    def forward(self, X, training=False, rng=None):
        X = nm.as_tensor(X, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != self.config.n_inputs:
            raise ShapeError(f"expected (n, {self.config.n_inputs}) input, got {X.shape}")
        rate = self.config.dropout
        z = nm.dropout(self.bn1(nm.relu(nm.dense(X, self.W1, self.b1)), training), rate, training, rng)
        z = nm.dropout(self.bn2(nm.relu(nm.dense(z, self.W2, self.b2)), training), rate, training, rng)
        return nm.dense(z, self.W3, self.b3)

    def loss(self, X, y, lam=0.0, rng=None):
        y = np.asarray(y)
        if (y < 0).any():
            raise ContractError("training batch contains an unlabelled object")
        ce = nm.cross_entropy(self.forward(X, training=True, rng=rng), y)
        return ce, {"ce": ce.item()}

    def predict_logits(self, X, batch_size=1024):
        X = np.asarray(X)
        out = [self.forward(X[i : i + batch_size]).data for i in range(0, X.shape[0], batch_size)]
        if not out:
            return np.zeros((0, self.config.n_classes), self.dtype)
        return np.concatenate(out)


def mlp_baseline_fit(train, val, config):
    """Train the baseline with the TASSEL optimiser and selection protocol.

    Returns ``(TrainedModel, FitReport)``.
    """
    from ..data import fit_normalizer
    from ..training import TrainedModel, fit_network

    config.validate()
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    stats = fit_normalizer(train)
    net = MLPBaseline(
        MLPConfig(train.T * train.B, len(train.class_names), dropout=config.dropout), seed=config.seed
    )
    model = TrainedModel(net, list(train.class_names), stats, None)
    X_tr = model.features(train)
    X_va = model.features(val)
    _, report = fit_network(net, X_tr, train.labels, X_va, val.labels, config, lam=0.0)
    return model, report


def mlp_baseline_predict(model, ds):
    from .metrics import evaluate

    records = model.predict(ds)
    preds = [r.label for r in records]
    return records, evaluate(preds, ds.labels, len(model.class_names))
