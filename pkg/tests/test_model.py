import numpy as np
import pytest

from tassel import numerics as nm
from tassel.components import ComponentSet
from tassel.errors import ConfigError, ContractError, SchemaError, ShapeError
from tassel.model import (
    ModelConfig,
    TasselNet,
    load_checkpoint,
    predict,
    read_checkpoint,
    save_checkpoint,
)

from gradcheck import tassel_gradient_errors
from oracles import randomize_bn

SMALL = 1 / 16


def small_net(B=3, C=4, L=3, width=SMALL, seed=0, dtype=np.float32, **kw):
    return TasselNet(ModelConfig(B, C, n_components=L, width=width, **kw), seed=seed, dtype=dtype)


# architecture -------------------------------------------------------------------

def test_full_width_dimensions():
    net = TasselNet(ModelConfig(4, 5, n_components=2), seed=0)
    assert net.config.d == 1024
    assert [b.W.shape for b in net.blocks] == [
        (3, 4, 256), (3, 256, 256), (3, 256, 256), (3, 256, 256),
        (3, 256, 512), (3, 512, 512), (1, 512, 512), (1, 512, 512),
    ]
    assert [b.stride for b in net.blocks] == [1, 1, 1, 1, 2, 1, 1, 1]
    assert net.att_W.shape == (1024, 1024) and net.att_v.shape == (1024,)
    assert net.W1.shape == (1024, 512) and net.W2.shape == (512, 512) and net.W3.shape == (512, 5)
    assert net.aux_W.shape == (1024, 5)


def test_zero_input_gives_finite_1024_vector():
    net = TasselNet(ModelConfig(2, 3, n_components=1), seed=0)
    h = net.encode(np.zeros((1, 12, 2), np.float32)).data
    assert h.shape == (1, 1024) and np.all(np.isfinite(h))


def test_doubling_series_length_keeps_d():
    net = small_net()
    assert net.encode(np.ones((1, 12, 3))).shape == net.encode(np.ones((1, 24, 3))).shape


def test_identical_components_encode_identically():
    net = small_net()
    x = np.random.default_rng(0).random((1, 10, 3)).astype(np.float32)
    h = net.encode(np.concatenate([x, x])).data
    assert h[0].tobytes() == h[1].tobytes()


def test_series_too_short():
    with pytest.raises(ShapeError):
        small_net().encode(np.ones((1, 3, 3)))


def test_parameter_count_independent_of_components():
    assert small_net(L=1).parameter_count() == small_net(L=9).parameter_count()


def test_he_uniform_init_and_zero_biases():
    net = small_net()
    assert all(np.all(b.b.data == 0) for b in net.blocks)
    W = net.blocks[1].W.data
    assert np.abs(W).max() <= np.sqrt(6 / (3 * W.shape[1]))


def test_same_seed_same_weights():
    a, b = small_net(seed=3), small_net(seed=3)
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))


# attention ------------------------------------------------------------------------

def tiny_attention_net(seed=0):
    net = small_net(width=2 / 512, seed=seed, dtype=np.float64)
    assert net.config.d == 4
    return net


def test_single_component_attention():
    net = tiny_attention_net()
    H = np.random.default_rng(0).normal(size=(2, 1, 4))
    h_hat, alpha = net.attend(H)
    assert np.all(alpha.data == 1.0)
    np.testing.assert_array_equal(h_hat.data, H[:, 0])


def test_identical_vectors_share_attention():
    net = tiny_attention_net()
    h = np.random.default_rng(1).normal(size=(1, 1, 4))
    h_hat, alpha = net.attend(np.concatenate([h, h], axis=1))
    np.testing.assert_allclose(alpha.data, [[0.5, 0.5]])
    np.testing.assert_allclose(h_hat.data, h[:, 0], rtol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_direct_formula(seed):
    net = tiny_attention_net(seed)
    gen = np.random.default_rng(seed)
    net.att_b.data = gen.normal(size=4)
    H = gen.normal(size=(1, 3, 4))
    h_hat, alpha = net.attend(H)
    W, b, v = net.att_W.data, net.att_b.data, net.att_v.data
    scores = np.array([v @ np.tanh(h @ W + b) for h in H[0]])
    a = np.exp(scores - scores.max())
    a /= a.sum()
    np.testing.assert_allclose(alpha.data[0], a, atol=1e-6)
    np.testing.assert_allclose(h_hat.data[0], (a[:, None] * H[0]).sum(axis=0), atol=1e-6)


# heads and loss --------------------------------------------------------------------

def test_aux_head_only_in_training():
    net = small_net()
    h = nm.Tensor(np.zeros((2, net.config.d), np.float32))
    with pytest.raises(ContractError):
        net.classify_aux(h, training=False)
    _, aux, _ = net.forward(np.ones((2, 3, 8, 3)), training=False)
    assert aux is None


def test_aux_with_zero_weights_returns_bias():
    net = small_net(C=3)
    net.aux_W.data[:] = 0
    net.aux_b.data = np.array([1.0, -2.0, 0.5], np.float32)
    out = net.classify_aux(nm.Tensor(np.ones((2, net.config.d), np.float32)), training=True).data
    assert out.tolist() == [[1.0, -2.0, 0.5]] * 2


def test_aux_loss_reaches_attention_weights():
    net = small_net(dtype=np.float64)
    X = np.random.default_rng(0).random((4, 3, 8, 3))
    H = nm.reshape(net.encode(nm.reshape(nm.Tensor(X), (12, 8, 3)), True, np.random.default_rng(1)), (4, 3, net.config.d))
    h_hat, _ = net.attend(H)
    nm.backward(nm.cross_entropy(net.classify_aux(h_hat, True), [0, 1, 2, 3]))
    assert np.abs(net.att_W.grad).max() > 0
    assert net.W1.grad is None  # the main head is not on this path


def test_loss_is_main_plus_weighted_aux():
    net = small_net(dtype=np.float64, dropout=0.0)
    X = np.random.default_rng(2).random((5, 3, 8, 3))
    y = np.array([0, 1, 2, 3, 0])
    total, parts = net.loss(X, y, lam=0.5)
    assert total.item() == pytest.approx(parts["ce"] + 0.5 * parts["ce_aux"], abs=1e-6)
    zero, parts0 = net.loss(X, y, lam=0.0)
    assert zero.item() == parts0["ce"]


def test_aux_parameters_get_zero_gradient_without_aux_weight():
    net = small_net(dtype=np.float64)
    total, _ = net.loss(np.random.default_rng(0).random((3, 3, 8, 3)), [0, 1, 2], lam=0.0, rng=np.random.default_rng(0))
    nm.backward(total)
    assert all(np.all(p.grad == 0) for p in net.aux_parameters())


def test_unlabelled_object_in_batch():
    net = small_net()
    with pytest.raises(ContractError):
        net.loss(np.ones((2, 3, 8, 3)), [0, -1], rng=np.random.default_rng(0))


def test_lambda_bounds():
    with pytest.raises(ConfigError):
        small_net().loss(np.ones((1, 3, 8, 3)), [0], lam=1.5, rng=np.random.default_rng(0))


def test_logit_shift_does_not_change_prediction():
    net = small_net()
    logits, _ = net.infer(np.random.default_rng(0).random((6, 3, 8, 3)))
    assert np.array_equal(np.argmax(logits, 1), np.argmax(logits + 7.0, 1))
    assert logits.shape == (6, 4)


def test_component_count_mismatch():
    with pytest.raises(ConfigError):
        small_net(L=3).forward(np.ones((1, 2, 8, 3)))


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradient(seed):
    errors = tassel_gradient_errors(seed=seed)
    assert max(errors.values()) < 1e-3, errors


# permutation invariance ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_component_permutation_invariance(seed):
    gen = np.random.default_rng(seed)
    L = int(gen.integers(1, 7))
    net = small_net(B=2, C=3, L=L, width=float(gen.choice([1 / 16, 1 / 8])), seed=seed)
    randomize_bn(net, gen)
    X = gen.random((3, L, 9, 2)).astype(np.float32)
    perm = gen.permutation(L)
    lg, a = net.infer(X)
    lg_p, a_p = net.infer(X[:, perm])
    assert np.abs(lg - lg_p).max() < 1e-5
    assert np.abs(a[:, perm] - a_p).max() < 1e-6
    assert np.abs(a.sum(axis=1) - 1).max() < 1e-6


# prediction records and checkpoints ----------------------------------------------------

def comps_for(X):
    return [ComponentSet(f"o{i}", x.astype(np.float64), np.zeros(1, np.int64), x.shape[0]) for i, x in enumerate(X)]


def test_predict_records():
    net = small_net()
    X = np.random.default_rng(0).random((4, 3, 8, 3))
    recs = predict(comps_for(X), net)
    assert [r.object_id for r in recs] == ["o0", "o1", "o2", "o3"]
    for r in recs:
        assert r.label == int(np.argmax(r.scores))
        assert sum(r.alpha) == pytest.approx(1.0, abs=1e-6)
        assert sum(r.scores) == pytest.approx(1.0, abs=1e-9)


def test_predict_merges_padded_attention():
    net = small_net(L=4)
    x = np.random.default_rng(0).random((1, 8, 3))
    comp = ComponentSet("dup", np.repeat(x, 4, axis=0), np.zeros(5, np.int64), 1)
    (rec,) = predict([comp], net)
    assert rec.alpha == pytest.approx([1.0])


def test_predict_rejects_wrong_component_count():
    net = small_net(L=3)
    with pytest.raises(ConfigError):
        predict(comps_for(np.ones((1, 2, 8, 3))), net)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    gen = np.random.default_rng(0)
    net = small_net(seed=4)
    randomize_bn(net, gen)
    X = gen.random((5, 3, 8, 3)).astype(np.float32)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, {"class_names": ["a", "b", "c", "d"]})
    back, manifest = load_checkpoint(path)
    assert manifest["class_names"] == ["a", "b", "c", "d"]
    before, after = net.infer(X), back.infer(X)
    assert before[0].tobytes() == after[0].tobytes() and before[1].tobytes() == after[1].tobytes()
    save_checkpoint(tmp_path / "again.ckpt", back, {"class_names": ["a", "b", "c", "d"]})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_unknown_version(tmp_path):
    import json
    import zipfile

    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_net())
    manifest, _ = read_checkpoint(path)
    manifest["version"] = 99
    with zipfile.ZipFile(path) as zf:
        blob = zf.read("weights.bin")
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest))
        zf.writestr("weights.bin", blob)
    with pytest.raises(SchemaError):
        load_checkpoint(path)


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"not a zip")
    with pytest.raises(SchemaError):
        load_checkpoint(p)
