"""Per-pixel attention maps built from component weights, rendered as
quantile-binned ASCII graymaps or CSV tables."""

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, SchemaError, UnsupportedOperation

DEFAULT_BINS = 5
CSV_HEADER = ("object_id", "pixel_index", "row", "col", "alpha", "bin")


@dataclass(frozen=True)
class AttentionMap:
    object_id: str
    alpha: np.ndarray  # (P,) float64, one weight per pixel
    component_alpha: np.ndarray  # (effective_k,)
    assignment: np.ndarray  # (P,)
    coords: Optional[np.ndarray] = None  # (P, 2) row, col

    @property
    def n_pixels(self):
        return self.alpha.shape[0]


def build_map(pred, comps, coords=None):
    """Give every pixel the (merged) weight of the component it belongs to.

    ``pred.alpha`` may be per real component or per centroid slot; slot
    weights are folded onto their real component first.
    """
    if pred.object_id != comps.object_id:
        raise ContractError(f"prediction for {pred.object_id!r} paired with components of {comps.object_id!r}")
    a = np.asarray(pred.alpha, dtype=np.float64)
    if a.shape == (comps.effective_k,):
        merged = a
    elif a.shape == (comps.L,):
        merged = comps.merge_alpha(a)
    else:
        raise SchemaError(
            f"object {pred.object_id!r}: {a.size} attention weights for "
            f"{comps.effective_k} components"
        )
    assignment = np.asarray(comps.assignment, dtype=np.int64)
    if coords is not None:
        coords = np.asarray(coords, dtype=np.int64)
        if coords.shape != (assignment.size, 2):
            raise SchemaError(f"object {pred.object_id!r}: coords do not match the pixel count")
    return AttentionMap(pred.object_id, merged[assignment], merged, assignment, coords)


def quantile_edges(alpha, bins):
    """Inner bin edges at the ``i / bins`` quantiles (linear interpolation)."""
    qs = np.arange(1, bins) / bins
    return np.quantile(np.asarray(alpha, dtype=np.float64), qs)


def quantize(alpha, bins=DEFAULT_BINS):
    """Bin index per pixel; a value sitting on an edge stays in the lower bin.

    When every weight is identical all pixels land in the top bin.
    """
    if bins < 2:
        raise ContractError("bins must be at least 2")
    alpha = np.asarray(alpha, dtype=np.float64)
    edges = quantile_edges(alpha, bins)
    if alpha.size and alpha.min() == alpha.max():
        return np.full(alpha.shape, bins - 1, dtype=np.int64), edges
    idx = np.searchsorted(edges, alpha, side="left")
    return idx.astype(np.int64), edges


def _grid(amap):
    if amap.coords is None:
        raise UnsupportedOperation(
            f"object {amap.object_id!r} has no pixel coordinates; export it with export_csv instead"
        )
    origin = amap.coords.min(axis=0)
    rc = amap.coords - origin
    height, width = (rc.max(axis=0) + 1).tolist()
    return rc, int(height), int(width), origin


def render_pgm(amap, bins=DEFAULT_BINS):
    """Return ``(pgm_text, sidecar_dict)``.

    Cells of the bounding box not covered by the object hold ``maxval``; the
    sidecar lists them so they can be told apart from top-bin pixels.
    """
    levels, edges = quantize(amap.alpha, bins)
    rc, height, width, origin = _grid(amap)
    maxval = bins - 1
    grid = np.full((height, width), maxval, dtype=np.int64)
    covered = np.zeros((height, width), dtype=bool)
    grid[rc[:, 0], rc[:, 1]] = levels
    covered[rc[:, 0], rc[:, 1]] = True
    lines = [f"P2\n{width} {height}\n{maxval}"]
    lines += [" ".join(str(v) for v in row) for row in grid]
    text = "\n".join(lines) + "\n"
    outside = np.argwhere(~covered)
    sidecar = {
        "object_id": amap.object_id,
        "width": width,
        "height": height,
        "origin": [int(v) for v in origin],
        "bins": bins,
        "edges": [float(e) for e in edges],
        "outside_value": maxval,
        "outside_cells": outside.tolist(),
    }
    return text, sidecar


def export_csv(amap, bins=DEFAULT_BINS):
    """CSV text, one row per pixel in index order; row/col are blank without coords."""
    levels, _ = quantize(amap.alpha, bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i in range(amap.n_pixels):
        if amap.coords is None:
            r = c = ""
        else:
            r, c = int(amap.coords[i, 0]), int(amap.coords[i, 1])
        w.writerow([amap.object_id, i, r, c, repr(float(amap.alpha[i])), int(levels[i])])
    return buf.getvalue()


def read_csv(text):
    """Parse :func:`export_csv` output back to ``(object_id, alpha, bins)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise SchemaError("attention CSV header is missing or malformed")
    body = rows[1:]
    ids = {r[0] for r in body}
    if len(ids) > 1:
        raise SchemaError("attention CSV mixes several objects")
    alpha = np.array([float(r[4]) for r in body])
    levels = np.array([int(r[5]) for r in body], dtype=np.int64)
    return (ids.pop() if ids else None), alpha, levels


def _safe_name(object_id):
    keep = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in object_id)
    return keep or "object"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def export_maps(maps, out_dir, bins=DEFAULT_BINS):
    """Write every map as CSV (plus PGM and sidecar when coords exist) and an index."""
    os.makedirs(out_dir, exist_ok=True)
    index = []
    seen = set()
    for amap in maps:
        stem = _safe_name(amap.object_id)
        if stem in seen:
            raise ContractError(f"two maps share the file name {stem!r}")
        seen.add(stem)
        entry = {"object_id": amap.object_id, "csv": stem + ".csv"}
        _write(os.path.join(out_dir, entry["csv"]), export_csv(amap, bins))
        if amap.coords is not None:
            text, side = render_pgm(amap, bins)
            entry["pgm"] = stem + ".pgm"
            entry["sidecar"] = stem + ".pgm.json"
            _write(os.path.join(out_dir, entry["pgm"]), text)
            _write(os.path.join(out_dir, entry["sidecar"]), json.dumps(side, sort_keys=True) + "\n")
        index.append(entry)
    _write(os.path.join(out_dir, "index.json"), json.dumps({"bins": bins, "maps": index}, sort_keys=True, indent=1) + "\n")
    return index


def attention_contrast(amap, discriminative):
    """Mean pixel weight on discriminative pixels minus that on the rest.

    ``discriminative`` is a boolean mask over pixels; NaN when either side is empty.
    """
    mask = np.asarray(discriminative, dtype=bool)
    if mask.shape != amap.alpha.shape:
        raise ContractError("mask length does not match the pixel count")
    if mask.all() or not mask.any():
        return float("nan")
    return float(amap.alpha[mask].mean() - amap.alpha[~mask].mean())
