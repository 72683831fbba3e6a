"""Object-based SITS datasets: model, NDJSON storage, normalisation, splits.

An object is a bag of pixel time series sharing one label. Pixel values of an
object are kept as one ``(P, T, B)`` float64 array.
"""

import gzip
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ContractError, ParseError, SchemaError


@dataclass(frozen=True)
class ObjectSITS:
    id: str
    label: Optional[int]
    pixels: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[0] < 1 or px.shape[1] < 1 or px.shape[2] < 1:
            raise SchemaError(f"object {self.id!r}: pixels must be a non-empty (P, T, B) array")
        if not np.isfinite(px).all():
            raise SchemaError(f"object {self.id!r}: non-finite pixel value")
        object.__setattr__(self, "pixels", px)
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=np.int64)
            if c.shape != (px.shape[0], 2):
                raise SchemaError(f"object {self.id!r}: coords must be one (row, col) per pixel")
            if len({(int(r), int(q)) for r, q in c}) != len(c):
                raise SchemaError(f"object {self.id!r}: duplicate pixel coordinates")
            object.__setattr__(self, "coords", c)

    @property
    def n_pixels(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Dataset:
    objects: Tuple[ObjectSITS, ...]
    class_names: Tuple[str, ...]
    T: int
    B: int

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        n_classes = len(self.class_names)
        for obj in self.objects:
            if obj.pixels.shape[1:] != (self.T, self.B):
                raise SchemaError(
                    f"object {obj.id!r}: shape T={obj.pixels.shape[1]}, B={obj.pixels.shape[2]} "
                    f"differs from dataset T={self.T}, B={self.B}"
                )
            if obj.label is not None and not 0 <= obj.label < n_classes:
                raise SchemaError(f"object {obj.id!r}: label {obj.label} outside [0, {n_classes})")

    def __len__(self):
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)

    @property
    def labels(self):
        return np.array([-1 if o.label is None else o.label for o in self.objects], dtype=np.int64)

    @property
    def ids(self):
        return [o.id for o in self.objects]

    def subset(self, indices):
        return Dataset([self.objects[i] for i in indices], self.class_names, self.T, self.B)

    def select_ids(self, ids):
        index = {o.id: o for o in self.objects}
        missing = [i for i in ids if i not in index]
        if missing:
            raise ContractError(f"unknown object id {missing[0]!r}")
        return Dataset([index[i] for i in ids], self.class_names, self.T, self.B)


# ndjson ------------------------------------------------------------------

def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        if "r" in mode:
            return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="\n")
        raw = open(path, "wb")
        # mtime=0 and no filename keep compressed bytes reproducible
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        return _GzipText(gz, raw)
    return open(path, mode, encoding="utf-8", newline="\n")


class _GzipText(io.TextIOWrapper):
    def __init__(self, gz, raw):
        super().__init__(gz, encoding="utf-8", newline="\n")
        self._raw = raw

    def close(self):
        super().close()
        self._raw.close()


def _dumps(record):
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def save_ndjson(ds, path):
    with _open_text(path, "w") as fh:
        fh.write(_dumps({"type": "header", "T": ds.T, "B": ds.B, "class_names": list(ds.class_names)}) + "\n")
        for obj in ds.objects:
            fh.write(_dumps(object_record(obj)) + "\n")


def object_record(obj):
    return {
        "type": "object",
        "id": obj.id,
        "label": obj.label,
        "pixels": obj.pixels.tolist(),
        "coords": None if obj.coords is None else obj.coords.tolist(),
    }


def load_ndjson(path):
    """Read and validate a dataset file (plain or ``.gz``)."""
    header = None
    objects = []
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not a JSON object", line=lineno)
            kind = rec.get("type")
            if kind == "header":
                if header is not None:
                    raise SchemaError(f"line {lineno}: duplicate header record")
                header = _parse_header(rec, lineno)
            elif kind == "object":
                if header is None:
                    raise SchemaError(f"line {lineno}: object record before header")
                objects.append(_parse_object(rec, header, lineno))
            else:
                raise ParseError(f"unknown record type {kind!r}", line=lineno)
    if header is None:
        raise SchemaError(f"{path}: missing header record")
    T, B, names = header
    return Dataset(objects, names, T, B)


def _parse_header(rec, lineno):
    try:
        T, B, names = rec["T"], rec["B"], rec["class_names"]
    except KeyError as exc:
        raise SchemaError(f"line {lineno}: header missing field {exc.args[0]!r}") from None
    if not (isinstance(T, int) and isinstance(B, int) and T >= 1 and B >= 1):
        raise SchemaError(f"line {lineno}: header T and B must be positive integers")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise SchemaError(f"line {lineno}: class_names must be a list of strings")
    return T, B, names


def _parse_object(rec, header, lineno):
    T, B, names = header
    oid = rec.get("id")
    if not isinstance(oid, str):
        raise SchemaError(f"line {lineno}: object id must be a string")
    label = rec.get("label")
    if label is not None and (not isinstance(label, int) or isinstance(label, bool)):
        raise SchemaError(f"line {lineno}: object {oid!r}: label must be an integer or null")
    if label is not None and not 0 <= label < len(names):
        raise SchemaError(f"line {lineno}: object {oid!r}: label {label} outside [0, {len(names)})")
    try:
        pixels = np.array(rec.get("pixels"), dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"line {lineno}: object {oid!r}: ragged or non-numeric pixels") from None
    if pixels.ndim != 3 or pixels.shape[0] < 1:
        raise SchemaError(f"line {lineno}: object {oid!r}: pixels must be a non-empty P x T x B array")
    if pixels.shape[1:] != (T, B):
        raise SchemaError(
            f"line {lineno}: object {oid!r}: pixels have T={pixels.shape[1]}, B={pixels.shape[2]}, "
            f"header declares T={T}, B={B}"
        )
    coords = rec.get("coords")
    try:
        return ObjectSITS(oid, label, pixels, None if coords is None else np.array(coords))
    except SchemaError as exc:
        raise SchemaError(f"line {lineno}: {exc}") from None


# normalisation -----------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != hi.shape or (lo > hi).any():
            raise SchemaError("normalisation stats need min <= max per band")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def to_json(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


def fit_normalizer(train):
    if len(train) == 0:
        raise ConfigError("cannot fit normalisation on an empty training set")
    flat = np.concatenate([o.pixels.reshape(-1, train.B) for o in train.objects])
    return NormStats(flat.min(axis=0), flat.max(axis=0))


def normalize_pixels(pixels, stats):
    """Map each band to [0, 1] with the given stats; degenerate bands become 0."""
    span = stats.max - stats.min
    degenerate = span == 0
    out = (pixels - stats.min) / np.where(degenerate, 1.0, span)
    out[..., degenerate] = 0.0
    return np.clip(out, 0.0, 1.0)


def apply_normalizer(ds, stats):
    if stats.min.shape != (ds.B,):
        raise SchemaError(f"normalisation stats cover {stats.min.shape[0]} bands, dataset has {ds.B}")
    degenerate = np.flatnonzero(stats.max == stats.min)
    if degenerate.size:
        warnings.warn(f"bands {degenerate.tolist()} are constant in training data; mapped to 0", stacklevel=2)
    objs = [ObjectSITS(o.id, o.label, normalize_pixels(o.pixels, stats), o.coords) for o in ds.objects]
    return Dataset(objs, ds.class_names, ds.T, ds.B)


# splitting ---------------------------------------------------------------

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split(ds, fractions=(0.5, 0.2, 0.3), seed=0):
    """Stratified object-level split into (train, val, test).

    Per class: val and test get ``round(f * n)`` objects, train the rest.
    Classes with fewer than three objects go entirely to train. Each part
    keeps the original dataset order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    gen = rngmod.stream(seed, "split")
    labels = ds.labels
    parts = ([], [], [])
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            name = "unlabelled" if cls < 0 else ds.class_names[cls]
            warnings.warn(f"class {name!r} has {idx.size} objects; all assigned to train", stacklevel=2)
            parts[0].extend(idx.tolist())
            continue
        idx = gen.permutation(idx)
        n = idx.size
        n_val = _round_half_up(fractions[1] * n)
        n_test = _round_half_up(fractions[2] * n)
        n_train = n - n_val - n_test
        parts[0].extend(idx[:n_train].tolist())
        parts[1].extend(idx[n_train : n_train + n_val].tolist())
        parts[2].extend(idx[n_train + n_val :].tolist())
    return tuple(ds.subset(sorted(p)) for p in parts)
