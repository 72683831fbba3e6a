"""The TASSEL network and its checkpoint format.

One CNN1D encoder (shared by every component) turns each centroid series into
a ``d``-vector, attention pooling mixes the ``L`` vectors into one object
vector, and a two-layer head classifies it. A linear auxiliary head on the
pooled vector only takes part in training.
"""

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from . import numerics as nm
from . import rng as rngmod
from .errors import ConfigError, ContractError, SchemaError, ShapeError

# (filters, kernel, stride) for blocks B1..B8; B7 and B8 both read B6.
ENCODER_BLOCKS = (
    (256, 3, 1),
    (256, 3, 1),
    (256, 3, 1),
    (256, 3, 1),
    (512, 3, 2),
    (512, 3, 1),
    (512, 1, 1),
    (512, 1, 1),
)

MIN_T = 4


@dataclass
class ModelConfig:
    n_bands: int
    n_classes: int
    n_components: int = 6
    width: float = 1.0  # scales every encoder filter count
    hidden: int = 512
    dropout: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def filters(self):
        return [max(1, int(round(f * self.width))) for f, _, _ in ENCODER_BLOCKS]

    @property
    def d(self):
        f = self.filters()
        return f[6] + f[7]


class ConvBlock:
    """conv -> ReLU -> BatchNorm -> dropout."""

    def __init__(self, cin, cout, k, stride, cfg, gen, dtype):
        self.stride = stride
        self.W = nm.Tensor(nm.he_uniform(gen, (k, cin, cout), k * cin, dtype), requires_grad=True)
        self.b = nm.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.bn = nm.BatchNorm(cout, cfg.bn_eps, cfg.bn_momentum, dtype)
        self.rate = cfg.dropout

    def __call__(self, x, training, rng):
        y = nm.conv1d(x, self.W, self.b, stride=self.stride, padding="same")
        y = self.bn(nm.relu(y), training)
        return nm.dropout(y, self.rate, training, rng)


class Network:
    """Shared bookkeeping: named parameters, BN buffers, snapshots."""

    kind = "network"

    def named_parameters(self):
        raise NotImplementedError

    def batchnorms(self):
        raise NotImplementedError

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_arrays(self):
        """Every stored array (parameters, then running statistics), in checkpoint order."""
        out = [(n, t.data) for n, t in self.named_parameters()]
        for name, bn in self.batchnorms():
            out.append((f"{name}.running_mean", bn.running_mean))
            out.append((f"{name}.running_var", bn.running_var))
        return out

    def snapshot(self):
        return [a.copy() for _, a in self.named_arrays()]

    def restore(self, arrays):
        params = self.named_parameters()
        for (_, t), a in zip(params, arrays):
            t.data = np.array(a, dtype=t.data.dtype, copy=True)
        rest = arrays[len(params):]
        for i, (_, bn) in enumerate(self.batchnorms()):
            bn.running_mean = np.array(rest[2 * i], dtype=bn.running_mean.dtype, copy=True)
            bn.running_var = np.array(rest[2 * i + 1], dtype=bn.running_var.dtype, copy=True)

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def parameter_count(self):
        return int(sum(t.size for t in self.parameters()))


class TasselNet(Network):
    kind = "tassel"

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        gen = rngmod.stream(seed, "init")
        cin = config.n_bands
        self.blocks = []
        for (_, k, s), f in zip(ENCODER_BLOCKS, config.filters()):
            src = self.blocks[5].W.shape[2] if len(self.blocks) == 7 else cin
            self.blocks.append(ConvBlock(src, f, k, s, config, gen, dtype))
            cin = f
        d = config.d
        h = config.hidden
        C = config.n_classes
        P = lambda shape, fan_in: nm.Tensor(nm.he_uniform(gen, shape, fan_in, dtype), requires_grad=True)
        Z = lambda n: nm.Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self.att_W, self.att_b, self.att_v = P((d, d), d), Z(d), P((d,), d)
        self.W1, self.b1 = P((d, h), d), Z(h)
        self.bn1 = nm.BatchNorm(h, config.bn_eps, config.bn_momentum, dtype)
        self.W2, self.b2 = P((h, h), h), Z(h)
        self.bn2 = nm.BatchNorm(h, config.bn_eps, config.bn_momentum, dtype)
        self.W3, self.b3 = P((h, C), h), Z(C)
        self.aux_W, self.aux_b = P((d, C), d), Z(C)

    def named_parameters(self):
        out = []
        for i, blk in enumerate(self.blocks, start=1):
            out += [(f"B{i}.W", blk.W), (f"B{i}.b", blk.b), (f"B{i}.gamma", blk.bn.gamma), (f"B{i}.beta", blk.bn.beta)]
        out += [("att.W", self.att_W), ("att.b", self.att_b), ("att.v", self.att_v)]
        out += [("cl.W1", self.W1), ("cl.b1", self.b1), ("cl.bn1.gamma", self.bn1.gamma), ("cl.bn1.beta", self.bn1.beta)]
        out += [("cl.W2", self.W2), ("cl.b2", self.b2), ("cl.bn2.gamma", self.bn2.gamma), ("cl.bn2.beta", self.bn2.beta)]
        out += [("cl.W3", self.W3), ("cl.b3", self.b3), ("aux.W", self.aux_W), ("aux.b", self.aux_b)]
        return out

    def batchnorms(self):
        return [(f"B{i}.bn", b.bn) for i, b in enumerate(self.blocks, start=1)] + [("cl.bn1", self.bn1), ("cl.bn2", self.bn2)]

    def aux_parameters(self):
        return [self.aux_W, self.aux_b]

    # forward pieces ------------------------------------------------------

    def encode(self, x, training=False, rng=None):
        """``(N, T, B)`` component series -> ``(N, d)`` encodings."""
        x = nm.as_tensor(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[2] != self.config.n_bands:
            raise ShapeError(f"encode expects (N, T, {self.config.n_bands}), got {x.shape}")
        if x.shape[1] < MIN_T:
            raise ShapeError(f"series length {x.shape[1]} is below the minimum of {MIN_T}")
        for blk in self.blocks[:6]:
            x = blk(x, training, rng)
        b7 = self.blocks[6](x, training, rng)
        b8 = self.blocks[7](x, training, rng)
        return nm.global_avg_pool(nm.concat_channels([b7, b8], axis=-1))

    def attend(self, H):
        """``(n, L, d)`` encodings -> pooled ``(n, d)`` and weights ``(n, L)``."""
        H = nm.as_tensor(H, dtype=self.dtype)
        n, L, d = H.shape
        act = nm.tanh(nm.add(nm.matmul(H, self.att_W), self.att_b))
        scores = nm.reshape(nm.matmul(act, nm.reshape(self.att_v, (d, 1))), (n, L))
        alpha = nm.softmax(scores, axis=1)
        pooled = nm.matmul(nm.reshape(alpha, (n, 1, L)), H)
        return nm.reshape(pooled, (n, d)), alpha

    def classify(self, h_hat, training=False):
        z = self.bn1(nm.relu(nm.dense(h_hat, self.W1, self.b1)), training)
        z = self.bn2(nm.relu(nm.dense(z, self.W2, self.b2)), training)
        return nm.dense(z, self.W3, self.b3)

    def classify_aux(self, h_hat, training=False):
        if not training:
            raise ContractError("the auxiliary classifier is only defined at training time")
        return nm.dense(h_hat, self.aux_W, self.aux_b)

    def forward(self, X, training=False, rng=None):
        """``(n, L, T, B)`` centroids -> (logits, aux logits or None, alpha)."""
        X = nm.as_tensor(X, dtype=self.dtype)
        if X.ndim != 4:
            raise ShapeError(f"expected (n, L, T, B) input, got {X.shape}")
        n, L, T, B = X.shape
        if L != self.config.n_components:
            raise ConfigError(f"model was built for L={self.config.n_components} components, input has {L}")
        H = nm.reshape(self.encode(nm.reshape(X, (n * L, T, B)), training, rng), (n, L, self.config.d))
        h_hat, alpha = self.attend(H)
        logits = self.classify(h_hat, training)
        aux = self.classify_aux(h_hat, training) if training else None
        return logits, aux, alpha

    def loss(self, X, y, lam=0.5, rng=None):
        """Training loss ``CE(main) + lam * CE(aux)``; returns (total, parts)."""
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
        y = np.asarray(y)
        if (y < 0).any():
            raise ContractError("training batch contains an unlabelled object")
        logits, aux, _ = self.forward(X, training=True, rng=rng)
        ce = nm.cross_entropy(logits, y)
        ce_aux = nm.cross_entropy(aux, y)
        total = nm.add(ce, nm.mul(ce_aux, lam))
        return total, {"ce": ce.item(), "ce_aux": ce_aux.item()}

    def infer(self, X, batch_size=256):
        """Inference-mode logits ``(n, C)`` and attention ``(n, L)`` as arrays."""
        X = np.asarray(X)
        logits, alphas = [], []
        for i in range(0, X.shape[0], batch_size):
            lg, _, a = self.forward(X[i : i + batch_size], training=False)
            logits.append(lg.data)
            alphas.append(a.data)
        C, L = self.config.n_classes, self.config.n_components
        if not logits:
            return np.zeros((0, C), self.dtype), np.zeros((0, L), self.dtype)
        return np.concatenate(logits), np.concatenate(alphas)

    def predict_logits(self, X, batch_size=256):
        return self.infer(X, batch_size)[0]


@dataclass
class PredictionRecord:
    object_id: str
    label: int
    scores: List[float]
    alpha: List[float]  # one weight per real component (padding merged)

    def to_json(self):
        return asdict(self)


def softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def predict(comps, model, batch_size=256):
    """Label, class probabilities and merged attention for each ComponentSet."""
    from .components import stack_centroids

    if not comps:
        return []
    L = comps[0].L
    if any(c.L != model.config.n_components for c in comps):
        raise ConfigError(f"model expects L={model.config.n_components}, components have L={L}")
    logits, alpha = model.infer(stack_centroids(comps, model.dtype), batch_size)
    probs = softmax_rows(logits)
    out = []
    for c, lg, p, a in zip(comps, logits, probs, alpha):
        out.append(PredictionRecord(c.object_id, int(np.argmax(lg)), p.tolist(), c.merge_alpha(a).tolist()))
    return out


# checkpoints -------------------------------------------------------------

FORMAT = "tassel-checkpoint"
FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, model, extra=None):
    """Write a zip holding ``manifest.json`` and a little-endian float32 blob.

    ``extra`` carries run metadata (class names, normalisation stats,
    component settings) into the manifest. Output bytes depend only on the
    inputs.
    """
    arrays = model.named_arrays()
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        **(extra or {}),
    }
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, payload in (
            ("manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")),
            ("weights.bin", blob),
        ):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path):
    """Return ``(manifest, list of float32 arrays)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
            blob = zf.read("weights.bin")
    except (zipfile.BadZipFile, KeyError) as exc:
        raise SchemaError(f"{path}: not a checkpoint ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise SchemaError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    arrays = []
    offset = 0
    for spec in manifest["tensors"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(spec["shape"])
        arrays.append(arr.astype(np.float32))
        offset += 4 * n
    if offset != len(blob):
        raise SchemaError(f"{path}: weight blob size does not match manifest")
    return manifest, arrays


def build_network(kind, config_dict, dtype=np.float32):
    if kind == TasselNet.kind:
        return TasselNet(ModelConfig(**config_dict), dtype=dtype)
    from .evaluation import MLPBaseline, MLPConfig

    if kind == MLPBaseline.kind:
        return MLPBaseline(MLPConfig(**config_dict), dtype=dtype)
    raise SchemaError(f"unknown network kind {kind!r}")


def load_checkpoint(path):
    """Return ``(network, manifest)``."""
    manifest, arrays = read_checkpoint(path)
    net = build_network(manifest["kind"], manifest["config"])
    names = [n for n, _ in net.named_arrays()]
    if names != [t["name"] for t in manifest["tensors"]]:
        raise SchemaError(f"{path}: tensor layout does not match a {manifest['kind']} network")
    net.restore(arrays)
    return net, manifest
