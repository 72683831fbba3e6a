"""Synthetic object-based SITS with known discriminative pixels.

Each class has a smooth multi-band temporal profile (seasonal sinusoid plus a
linear trend). An object is a small raster whose pixels follow its class
profile, except a contiguous block of distractor pixels drawn from a pool of
class-independent profiles:

* ``soil``: flat in time, per-band brightness drawn per object
* ``built``: a step at a random date
* ``grass``: a seasonal cycle whose phase, band amplitudes and trends are
  all random

Only the object carries a label, so the setting is weakly supervised.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .data import Dataset, ObjectSITS, save_ndjson
from .errors import ConfigError

DISTRACTORS = ("soil", "built", "grass")


@dataclass
class SynthConfig:
    T: int = 24
    B: int = 4
    n_classes: int = 4
    objects_per_class: int = 60
    min_pixels: int = 16
    max_pixels: int = 36
    distractor_fraction: float = 0.5
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self):
        for name in ("T", "B", "n_classes", "objects_per_class", "min_pixels", "max_pixels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.min_pixels > self.max_pixels:
            raise ConfigError("min_pixels exceeds max_pixels")
        if not 0.0 <= self.distractor_fraction < 1.0:
            raise ConfigError("distractor_fraction must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


@dataclass
class SynthTruth:
    """Per object: which pixel indices follow the class profile."""

    objects: list  # dicts: id, label, discriminative, distractor, distractor_type

    def to_json(self):
        return {"objects": self.objects}

    def by_id(self):
        return {o["id"]: o for o in self.objects}


def _timeline(T):
    return np.arange(T, dtype=np.float64) / T


def class_prototypes(cfg):
    """``(C, T, B)`` class profiles; depends on the seed only."""
    gen = rngmod.stream(cfg.seed, "synth", "prototypes")
    t = _timeline(cfg.T)[:, None]
    base = np.linspace(0.3, 0.6, cfg.B)[None, :]
    protos = []
    for k in range(cfg.n_classes):
        phase = k / cfg.n_classes + gen.uniform(-0.03, 0.03)
        amp = gen.uniform(0.5, 1.0, size=cfg.B)[None, :]
        slope = gen.uniform(-0.5, 0.5, size=cfg.B)[None, :]
        protos.append(base + amp * np.sin(2 * math.pi * (t + phase)) + slope * (t - 0.5))
    return np.stack(protos)


def distractor_profile(kind, cfg, gen):
    """One class-independent ``(T, B)`` profile with per-object jitter."""
    t = _timeline(cfg.T)[:, None]
    bands = np.arange(cfg.B)[None, :]
    if kind == "soil":
        levels = gen.uniform(0.0, 1.2, size=cfg.B)[None, :]
        return np.broadcast_to(levels, (cfg.T, cfg.B)).copy()
    if kind == "built":
        at = gen.uniform(0.2, 0.8)
        low, high = gen.uniform(-0.4, 0.2), gen.uniform(0.6, 1.4)
        step = np.where(t >= at, high, low)
        return np.broadcast_to(step + 0.05 * bands, (cfg.T, cfg.B)).copy()
    if kind == "grass":
        # class-profile family with wider, randomly drawn parameters
        base = np.linspace(0.3, 0.6, cfg.B)[None, :]
        amp = gen.uniform(0.5, 1.5, size=cfg.B)[None, :]
        slope = gen.uniform(-1.0, 1.0, size=cfg.B)[None, :]
        return base + amp * np.sin(2 * math.pi * (t + gen.uniform(0.0, 1.0))) + slope * (t - 0.5)
    raise ValueError(f"unknown distractor kind {kind!r}")


def _layout(P):
    w = int(math.ceil(math.sqrt(P)))
    idx = np.arange(P)
    return np.stack([idx // w, idx % w], axis=1)


def generate(cfg=None):
    """Return ``(Dataset, SynthTruth)`` for ``cfg`` (defaults if None)."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    protos = class_prototypes(cfg)
    objects, truth = [], []
    n = 0
    for k in range(cfg.n_classes):
        for j in range(cfg.objects_per_class):
            oid = f"obj{n:05d}"
            gen = rngmod.stream(cfg.seed, "synth", n)
            P = int(gen.integers(cfg.min_pixels, cfg.max_pixels + 1))
            n_dis = int(math.floor(cfg.distractor_fraction * P + 0.5))
            n_dis = min(n_dis, P - 1)
            # distractors fill the top rows (or the bottom rows) of the raster
            from_top = bool(gen.integers(2))
            order = np.arange(P) if from_top else np.arange(P)[::-1]
            dis_idx = np.sort(order[:n_dis])
            disc_mask = np.ones(P, dtype=bool)
            disc_mask[dis_idx] = False
            scale = gen.uniform(0.9, 1.1)
            pixels = np.empty((P, cfg.T, cfg.B))
            pixels[:] = protos[k] * scale
            kind = DISTRACTORS[int(gen.integers(len(DISTRACTORS)))] if n_dis else None
            if n_dis:
                pixels[dis_idx] = distractor_profile(kind, cfg, gen)
            if cfg.noise_sigma > 0:
                pixels += gen.normal(0.0, cfg.noise_sigma, size=pixels.shape)
            objects.append(ObjectSITS(oid, k, pixels, _layout(P)))
            truth.append(
                {
                    "id": oid,
                    "label": k,
                    "discriminative": np.flatnonzero(disc_mask).tolist(),
                    "distractor": dis_idx.tolist(),
                    "distractor_type": kind,
                }
            )
            n += 1
    names = [f"class{k}" for k in range(cfg.n_classes)]
    return Dataset(objects, names, cfg.T, cfg.B), SynthTruth(truth)


def write(cfg, path):
    """Write the dataset NDJSON and its ``<name>.truth.json`` sidecar."""
    ds, truth = generate(cfg)
    save_ndjson(ds, path)
    tpath = truth_path(path)
    with open(tpath, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"config": asdict(cfg), **truth.to_json()}, fh, separators=(",", ":"))
        fh.write("\n")
    return ds, truth, tpath


def truth_path(dataset_path):
    base = str(dataset_path)
    for suffix in (".ndjson.gz", ".ndjson", ".gz"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
            break
    return base + ".truth.json"


def load_truth(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return SynthTruth(d["objects"])
