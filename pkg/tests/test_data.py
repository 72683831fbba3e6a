import gzip
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tassel.data import (
    Dataset,
    NormStats,
    ObjectSITS,
    apply_normalizer,
    fit_normalizer,
    load_ndjson,
    save_ndjson,
    split,
)
from tassel.errors import ConfigError, ContractError, ParseError, SchemaError


def obj(oid, label, pixels, coords=None):
    return ObjectSITS(oid, label, np.asarray(pixels, dtype=np.float64), coords)


def toy(n_per_class, T=3, B=2, seed=0, classes=("a", "b")):
    gen = np.random.default_rng(seed)
    objs = []
    for c in range(len(classes)):
        for i in range(n_per_class[c] if isinstance(n_per_class, (list, tuple)) else n_per_class):
            P = int(gen.integers(1, 5))
            objs.append(obj(f"o{c}_{i}", c, gen.normal(size=(P, T, B))))
    return Dataset(objs, list(classes), T, B)


def write_lines(path, lines):
    path.write_text("".join(json.dumps(x) + "\n" if not isinstance(x, str) else x + "\n" for x in lines))
    return path


HEADER = {"type": "header", "T": 3, "B": 2, "class_names": ["a", "b"]}


# ndjson ---------------------------------------------------------------------

def test_round_trip_single_object_is_bit_exact(tmp_path):
    px = np.array([[[0.1, 1e-300], [2.5, -3.0], [1 / 3, 7.0]], [[9.0, 8.0], [7.0, 6.0], [5.0, 4.0]]])
    ds = Dataset([obj("x", 1, px, [[0, 0], [0, 1]])], ["a", "b"], 3, 2)
    p = tmp_path / "d.ndjson"
    save_ndjson(ds, p)
    back = load_ndjson(p)
    assert back.ids == ["x"] and back.objects[0].label == 1
    assert back.objects[0].pixels.tobytes() == px.tobytes()
    assert back.objects[0].coords.tolist() == [[0, 0], [0, 1]]


@pytest.mark.parametrize("name", ["d.ndjson", "d.ndjson.gz"])
def test_round_trip_random_dataset(tmp_path, name):
    ds = toy(4, seed=3)
    p = tmp_path / name
    save_ndjson(ds, p)
    back = load_ndjson(p)
    assert back.class_names == ds.class_names and (back.T, back.B) == (ds.T, ds.B)
    for a, b in zip(ds.objects, back.objects):
        assert (a.id, a.label) == (b.id, b.label)
        assert np.array_equal(a.pixels, b.pixels)


def test_gzip_output_is_reproducible(tmp_path):
    ds = toy(3)
    save_ndjson(ds, tmp_path / "a.ndjson.gz")
    save_ndjson(ds, tmp_path / "b.ndjson.gz")
    assert (tmp_path / "a.ndjson.gz").read_bytes() == (tmp_path / "b.ndjson.gz").read_bytes()
    with gzip.open(tmp_path / "a.ndjson.gz", "rt") as fh:
        assert json.loads(fh.readline())["type"] == "header"


def test_header_only_file_is_empty_dataset(tmp_path):
    ds = load_ndjson(write_lines(tmp_path / "e.ndjson", [HEADER]))
    assert len(ds) == 0 and (ds.T, ds.B) == (3, 2)


def test_empty_file_without_header_is_schema_error(tmp_path):
    p = tmp_path / "e.ndjson"
    p.write_text("")
    with pytest.raises(SchemaError):
        load_ndjson(p)


def test_label_equal_to_class_count_rejected(tmp_path):
    rec = {"type": "object", "id": "o", "label": 2, "pixels": np.zeros((1, 3, 2)).tolist(), "coords": None}
    with pytest.raises(SchemaError):
        load_ndjson(write_lines(tmp_path / "d.ndjson", [HEADER, rec]))


def test_malformed_line_reports_line_number(tmp_path):
    rec = {"type": "object", "id": "o", "label": 0, "pixels": np.zeros((1, 3, 2)).tolist()}
    with pytest.raises(ParseError) as info:
        load_ndjson(write_lines(tmp_path / "d.ndjson", [HEADER, rec, "{not json"]))
    assert info.value.line == 3


def test_mixed_shapes_rejected(tmp_path):
    good = {"type": "object", "id": "o", "label": 0, "pixels": np.zeros((1, 3, 2)).tolist()}
    bad = {"type": "object", "id": "p", "label": 0, "pixels": np.zeros((1, 4, 2)).tolist()}
    with pytest.raises(SchemaError):
        load_ndjson(write_lines(tmp_path / "d.ndjson", [HEADER, good, bad]))


def test_ragged_pixels_rejected(tmp_path):
    bad = {"type": "object", "id": "p", "label": 0, "pixels": [[[0, 0], [0, 0], [0, 0]], [[0, 0]]]}
    with pytest.raises(SchemaError):
        load_ndjson(write_lines(tmp_path / "d.ndjson", [HEADER, bad]))


def test_object_invariants():
    with pytest.raises(SchemaError):
        obj("e", 0, np.zeros((0, 3, 2)))
    with pytest.raises(SchemaError):
        obj("n", 0, np.full((1, 3, 2), np.nan))
    with pytest.raises(SchemaError):
        obj("c", 0, np.zeros((2, 3, 2)), [[0, 0], [0, 0]])
    with pytest.raises(SchemaError):
        obj("c", 0, np.zeros((2, 3, 2)), [[0, 0]])


def test_select_ids_unknown():
    with pytest.raises(ContractError):
        toy(2).select_ids(["nope"])


# normalisation -----------------------------------------------------------------

def test_band_endpoints_map_to_unit_interval():
    ds = Dataset([obj("a", 0, np.array([2.0, 4.0, 6.0]).reshape(3, 1, 1))], ["x"], 1, 1)
    out = apply_normalizer(ds, fit_normalizer(ds))
    assert out.objects[0].pixels.ravel().tolist() == [0.0, 0.5, 1.0]


def test_constant_band_maps_to_zero_with_warning():
    ds = Dataset([obj("a", 0, np.full((3, 2, 1), 5.0))], ["x"], 2, 1)
    with pytest.warns(UserWarning):
        out = apply_normalizer(ds, fit_normalizer(ds))
    assert np.all(out.objects[0].pixels == 0.0)


def test_values_outside_training_range_are_clamped():
    stats = NormStats(np.array([0.0]), np.array([10.0]))
    ds = Dataset([obj("a", 0, np.array([-5.0, 5.0, 20.0]).reshape(3, 1, 1))], ["x"], 1, 1)
    assert apply_normalizer(ds, stats).objects[0].pixels.ravel().tolist() == [0.0, 0.5, 1.0]


def test_stats_json_round_trip_and_validation():
    s = NormStats(np.array([0.0, -1.0]), np.array([1.0, 2.0]))
    back = NormStats.from_json(json.loads(json.dumps(s.to_json())))
    assert np.array_equal(back.min, s.min) and np.array_equal(back.max, s.max)
    with pytest.raises(SchemaError):
        NormStats(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ConfigError):
        fit_normalizer(Dataset([], ["a"], 1, 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_training_values_fill_unit_interval(seed):
    ds = toy(3, T=4, B=3, seed=seed)
    out = apply_normalizer(ds, fit_normalizer(ds))
    flat = np.concatenate([o.pixels.reshape(-1, 3) for o in out.objects])
    assert flat.min() >= 0.0 and flat.max() <= 1.0
    assert np.all(flat.min(axis=0) == 0.0) and np.all(flat.max(axis=0) == 1.0)


# splitting -------------------------------------------------------------------------

def test_ten_objects_one_class_split_5_2_3():
    ds = toy([10], classes=("only",))
    tr, va, te = split(ds, seed=0)
    assert (len(tr), len(va), len(te)) == (5, 2, 3)


def test_split_is_deterministic():
    ds = toy([17, 9])
    a = [p.ids for p in split(ds, seed=4)]
    b = [p.ids for p in split(ds, seed=4)]
    assert a == b
    assert a != [p.ids for p in split(ds, seed=5)]


def test_balanced_classes_keep_ratio():
    ds = toy([50, 50])
    for part, target in zip(split(ds, seed=1), (50, 20, 30)):
        counts = np.bincount(part.labels, minlength=2)
        assert abs(counts[0] - counts[1]) <= 1
        assert abs(len(part) - target) <= 1


def test_tiny_class_goes_to_train_with_warning():
    ds = toy([6, 2])
    with pytest.warns(UserWarning, match="all assigned to train"):
        tr, va, te = split(ds, seed=0)
    assert sorted(i for i in tr.ids if i.startswith("o1_")) == ["o1_0", "o1_1"]


def test_bad_fractions():
    with pytest.raises(ConfigError):
        split(toy(3), fractions=(0.5, 0.5, 0.5))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=4), st.integers(0, 1000))
def test_split_partitions_and_stratifies(counts, seed):
    ds = toy(counts, classes=tuple(f"c{i}" for i in range(len(counts))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts = split(ds, seed=seed)
    ids = [i for p in parts for i in p.ids]
    assert sorted(ids) == sorted(ds.ids) and len(set(ids)) == len(ids)
    for p in parts:  # original order kept
        order = [ds.ids.index(i) for i in p.ids]
        assert order == sorted(order)
    for c, n in enumerate(counts):
        if n < 3:
            continue
        for part, f in zip(parts, (0.5, 0.2, 0.3)):
            assert abs(int((part.labels == c).sum()) - f * n) <= 1
