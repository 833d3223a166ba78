import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncomm.compression import (QuantizedTensor, decompose_conv_lowrank, decompose_model,
                                distill_train, factorize_kernel, kmeans_quantize, lloyd_1d,
                                mixed_loss, pack_indices, prune_magnitude, quantize_fixed,
                                quantize_kmeans, retrain, teacher_outputs, unpack_indices)
from nncomm.compression.quantization import kmeans_objective
from nncomm.errors import ConfigError
from nncomm.graph import ModelGraph
from nncomm.layers import Conv2d, Dense, ReLU, Sigmoid
from nncomm.training import Schedule


def small_net(seed=0):
    m = ModelGraph([Dense(4, 16, name="fc1"), ReLU(name="r1"), Dense(16, 3, name="fc2"),
                    Sigmoid(name="out")], (4,), name="small")
    return m.init_params(np.random.default_rng(seed))


def toy_data(seed=0, n=400):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4))
    y = (x[:, :3] + 0.3 * x[:, 3:] > 0).astype(float)
    return x, y


# -- pruning ---------------------------------------------------------------------

def test_prune_fine_grained_example():
    m = ModelGraph([Dense(4, 1, name="fc")], (4,))
    m.set_param("fc.weight", [[0.3, -0.01, 0.02, -0.5]])
    m.set_param("fc.bias", [0.001])
    rep = prune_magnitude(m, 0.025)
    np.testing.assert_array_equal(m.get_param("fc.weight"), [[0.3, 0.0, 0.0, -0.5]])
    assert m.get_param("fc.bias")[0] == 0.001
    assert rep.remaining_fraction == 0.5


def test_prune_threshold_is_strict():
    m = ModelGraph([Dense(2, 1, bias=False, name="fc")], (2,))
    m.set_param("fc.weight", [[0.05, 0.0499]])
    prune_magnitude(m, 0.05)
    np.testing.assert_array_equal(m.masks["fc.weight"], [[True, False]])


def test_prune_zero_threshold_keeps_everything():
    m = small_net()
    rep = prune_magnitude(m, 0.0)
    assert rep.remaining_fraction == 1.0


def test_prune_filter_level():
    m = ModelGraph([Conv2d(1, 3, 3, name="c")], (1, 4, 4))
    w = np.zeros((3, 1, 3, 3))
    w[0] = 0.5
    w[1] = 0.01
    w[2, 0, 0, 0] = 1.0  # mean |w| = 1/9 > 0.1
    m.set_param("c.weight", w)
    prune_magnitude(m, 0.1, granularity="filter_level")
    keep = m.masks["c.weight"].reshape(3, -1).all(axis=1)
    np.testing.assert_array_equal(keep, [True, False, True])
    assert not m.get_param("c.weight")[1].any()


def test_prune_everything_warns_and_keeps_largest():
    m = ModelGraph([Dense(3, 1, bias=False, name="fc")], (3,))
    m.set_param("fc.weight", [[0.1, -0.3, 0.2]])
    with pytest.warns(UserWarning, match="removes every weight"):
        prune_magnitude(m, 10.0)
    np.testing.assert_array_equal(m.get_param("fc.weight"), [[0.0, -0.3, 0.0]])


def test_prune_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        prune_magnitude(small_net(), -1.0)
    with pytest.raises(ConfigError):
        prune_magnitude(small_net(), 0.1, granularity="kernel")


def test_remaining_fraction_monotone_in_threshold():
    fracs = []
    for t in (0.0, 0.01, 0.05, 0.1, 0.2, 0.4):
        fracs.append(prune_magnitude(small_net(3), t).remaining_fraction)
    assert all(a >= b for a, b in zip(fracs, fracs[1:]))


def test_masked_weights_stay_zero_after_retraining():
    m = small_net(1)
    x, y = toy_data(1)
    prune_magnitude(m, 0.2)
    masks = {n: k.copy() for n, k in m.masks.items()}
    retrain(m, x, y, Schedule(learning_rate=1e-2, batch_size=50, max_epochs=5), loss="bce")
    for name, mask in masks.items():
        assert np.all(m.get_param(name)[~mask] == 0.0)
        np.testing.assert_array_equal(m.masks[name], mask)


# -- k-means -----------------------------------------------------------------------

def exhaustive_two_clusters(values):
    best = None
    n = len(values)
    for bits in itertools.product((0, 1), repeat=n):
        labels = np.array(bits)
        if labels.min() == labels.max():
            continue
        cents = np.array([values[labels == c].mean() for c in (0, 1)])
        obj = kmeans_objective(values, cents, labels)
        if best is None or obj < best[0]:
            best = (obj, np.sort(cents))
    return best


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=8, unique=True),
       st.integers(0, 2**31))
def test_lloyd_objective_non_increasing_and_matches_exhaustive(vals, seed):
    values = np.array(vals)
    if np.min(np.diff(np.sort(values))) < 1e-6:
        return
    opt, opt_cents = exhaustive_two_clusters(values)
    cents, labels, objs = lloyd_1d(values, 2, np.random.default_rng(seed))
    assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))
    assert objs[-1] >= opt - 1e-9
    # the exhaustive optimum is a Lloyd fixed point
    fixed, _, _ = lloyd_1d(values, 2, np.random.default_rng(0), init=opt_cents)
    np.testing.assert_allclose(fixed, opt_cents, rtol=1e-12, atol=1e-12)
    # restarts reach the optimum
    best = min(lloyd_1d(values, 2, np.random.default_rng(s))[2][-1] for s in range(10))
    assert best == pytest.approx(opt, rel=1e-9, abs=1e-12)


def test_kmeans_quantize_distinct_values_reduce_bits():
    q = kmeans_quantize(np.array([1.0, 1.0, 2.0, 2.0, 3.0]), 4, np.random.default_rng(0))
    assert q.bits == 1
    assert len(q.codebook) == 2
    q = kmeans_quantize(np.full(6, 0.25), 3, np.random.default_rng(0))
    assert q.bits == 0
    np.testing.assert_array_equal(q.dequantize(), 0.25)


def test_kmeans_codebook_sorted_float32():
    w = np.random.default_rng(2).standard_normal(500)
    q = kmeans_quantize(w, 4, np.random.default_rng(0))
    assert len(q.codebook) == 16
    assert np.all(np.diff(q.codebook) > 0)
    np.testing.assert_array_equal(q.codebook, q.codebook.astype(np.float32))


def test_kmeans_reconstruction_error_decreases_with_bits():
    w = np.random.default_rng(5).standard_normal(2000)
    errs = []
    for b in range(1, 8):
        q = kmeans_quantize(w, b, np.random.default_rng(0))
        errs.append(np.sum((q.dequantize() - w) ** 2))
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_quantize_model_and_retrain_shares_codebook():
    m = small_net(2)
    x, y = toy_data(2)
    quantize_kmeans(m, 3, seed=1)
    before = {n: q.indices.copy() for n, q in m.quantized.items()}
    retrain(m, x, y, Schedule(learning_rate=1e-2, batch_size=50, max_epochs=5), loss="bce")
    for name, q in m.quantized.items():
        np.testing.assert_array_equal(np.unique(m.get_param(name)), np.unique(q.codebook[q.indices]))
        assert len(np.unique(m.get_param(name))) <= 8
        # indices only permute if two codebook entries cross
        assert len(np.unique(q.indices)) == len(np.unique(before[name]))


def test_quantize_rejects_pruned_and_bad_bits():
    m = small_net()
    with pytest.raises(ConfigError):
        quantize_kmeans(m, 0)
    with pytest.raises(ConfigError):
        quantize_kmeans(m, 17)
    prune_magnitude(m, 0.1)
    with pytest.raises(ConfigError, match="pruned"):
        quantize_kmeans(m, 4)


def test_codebook_gradient_is_member_mean():
    q = QuantizedTensor(1, [-1.0, 1.0], [0, 1, 1, 0, 1], (5,))
    g = np.array([1.0, 2.0, 3.0, 5.0, 4.0])
    np.testing.assert_allclose(q.codebook_gradient(g), [3.0, 3.0])


@pytest.mark.parametrize("bits", [1, 2, 3, 5, 7, 9, 12])
def test_pack_roundtrip(bits):
    idx = np.random.default_rng(bits).integers(0, 2 ** bits, 37)
    data = pack_indices(idx, bits)
    assert len(data) == -(-37 * bits // 8)
    np.testing.assert_array_equal(unpack_indices(data, 37, bits), idx)


def test_pack_b5_layout():
    # 0b00001, 0b11111 -> 00001111 11000000
    assert pack_indices([1, 31], 5) == bytes([0b00001111, 0b11000000])


def test_quantize_fixed_sign():
    q = quantize_fixed([-0.2, 0.0, 3.0])
    np.testing.assert_array_equal(q.dequantize(), [-1.0, 1.0, 1.0])


def test_quantize_fixed_round_ties_to_even():
    q = quantize_fixed([0.5, 1.5, 2.5, -0.5], mode="round", step=1.0)
    np.testing.assert_array_equal(q.dequantize(), [0.0, 2.0, 2.0, -0.0])
    assert len(q.codebook) == 2 ** q.bits


def test_stochastic_rounding_is_unbiased():
    x = np.full(200_000, 0.3)
    q = quantize_fixed(x, mode="round", step=1.0, stochastic=True, rng=np.random.default_rng(0))
    mean = q.dequantize().mean()
    assert abs(mean - 0.3) < 4 * np.sqrt(0.3 * 0.7 / x.size)


def test_quantize_fixed_bad_mode():
    with pytest.raises(ConfigError):
        quantize_fixed([1.0], mode="log")
    with pytest.raises(ConfigError):
        quantize_fixed([1.0], mode="round")


# -- low rank ---------------------------------------------------------------------

@pytest.mark.parametrize("shape,rank", [((4, 3, 3, 3), 1), ((2, 5, 3, 3), 2), ((3, 2, 5, 4), 2),
                                        ((1, 1, 3, 3), 3)])
def test_lowrank_error_equals_discarded_energy(shape, rank):
    w = np.random.default_rng(sum(shape)).standard_normal(shape)
    f = factorize_kernel(w, rank)
    err = np.sum((w - f.reconstruct()) ** 2)
    s = np.linalg.svd(w, compute_uv=False)
    discarded = np.sum(s[..., rank:] ** 2)
    assert abs(err - discarded) <= 1e-10 * max(discarded, 1e-300) or discarded < 1e-20
    if rank == min(shape[2:]):
        np.testing.assert_allclose(f.reconstruct(), w, atol=1e-12)


def test_lowrank_rank1_of_separable_kernel_is_exact():
    a, b = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 3.0])
    f = factorize_kernel(np.outer(a, b), 1)
    np.testing.assert_allclose(f.reconstruct()[0, 0], np.outer(a, b), atol=1e-14)


def test_lowrank_errors():
    with pytest.raises(ConfigError):
        factorize_kernel(np.ones((1, 1, 3, 3)), 0)
    with pytest.raises(ConfigError):
        factorize_kernel(np.ones((1, 1, 3, 3)), 4)
    with pytest.raises(ConfigError):
        factorize_kernel(np.ones((1, 1, 1, 1)), 1)


@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, 1), ((1, 2), (1, 0)), (1, "valid")])
def test_decomposed_pair_matches_lowrank_conv(stride, padding):
    rng = np.random.default_rng(7)
    conv = Conv2d(3, 4, 3, stride=stride, padding=padding, name="c")
    conv.init_params(rng)
    conv.params["bias"][...] = rng.standard_normal(4)
    x = rng.standard_normal((2, 3, 7, 6))
    for r in (1, 2, 3):
        first, second, f = decompose_conv_lowrank(conv, r)
        approx = Conv2d(3, 4, 3, stride=stride, padding=padding, name="ref")
        approx.params["weight"][...] = f.reconstruct()
        approx.params["bias"][...] = conv.params["bias"]
        np.testing.assert_allclose(second.forward(first.forward(x)), approx.forward(x), atol=1e-12)


def test_decompose_model_keeps_output_shape():
    m = ModelGraph([Conv2d(2, 4, 3, name="c1"), ReLU(name="r"), Conv2d(4, 2, 1, name="c2")],
                   (2, 8, 8)).init_params(np.random.default_rng(0))
    new, report = decompose_model(m, 3)
    assert list(report) == ["c1"]
    assert new.output_shape == m.output_shape
    x = np.random.default_rng(1).standard_normal((3, 2, 8, 8))
    np.testing.assert_allclose(new.predict(x), m.predict(x), atol=1e-12)


# -- distillation ------------------------------------------------------------------

def test_mixed_loss_endpoints():
    pred = np.array([[0.2, 0.9]])
    soft, hard = np.array([[0.3, 0.6]]), np.array([[0.0, 1.0]])
    targets = np.stack([soft, hard], axis=1)
    from nncomm.losses import bce
    assert mixed_loss("bce", 1.0)(pred, targets)[0] == pytest.approx(bce(pred, soft)[0])
    assert mixed_loss("bce", 0.0)(pred, targets)[0] == pytest.approx(bce(pred, hard)[0])


def test_ensemble_teacher_is_member_mean():
    a, b = small_net(0), small_net(1)
    x = np.random.default_rng(0).standard_normal((5, 4))
    np.testing.assert_allclose(teacher_outputs([a, b], x), 0.5 * (a.predict(x) + b.predict(x)))


def test_distill_shape_check():
    student = ModelGraph([Dense(4, 2), Sigmoid()], (4,)).init_params(np.random.default_rng(0))
    x, y = toy_data()
    with pytest.raises(ConfigError):
        distill_train(small_net(), student, x, y[:, :2])
    with pytest.raises(ConfigError):
        distill_train(small_net(), small_net(1), x, y, lam=1.5)


def test_distill_trains_student():
    x, y = toy_data(4)
    teacher = small_net(0)
    from nncomm.training import fit
    fit(teacher, x, y, Schedule(learning_rate=1e-2, batch_size=50, max_epochs=20), loss="bce")
    student = ModelGraph([Dense(4, 4, name="a"), ReLU(name="r"), Dense(4, 3, name="b"), Sigmoid()],
                         (4,)).init_params(np.random.default_rng(1))
    h = distill_train(teacher, student, x, y, 0.5,
                      Schedule(learning_rate=1e-2, batch_size=50, max_epochs=20), val=(x, y))
    assert h.best_val < h.val_loss[0]
