import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpnet import gradcore as gc
from cpnet.errors import DimMismatch, IndexOutOfRange, NearZeroNorm

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vectors(n_min=2, n_max=8):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(np.float64, n, elements=finite)).filter(
        lambda v: np.linalg.norm(v) >= 1e-6
    )


def central_diff(f, x, h=1e-5):
    """Plain finite-difference gradient of a scalar function, independent of grad_check."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_l2_normalize_examples():
    np.testing.assert_allclose(gc.l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(gc.l2_normalize([1, 0]), [1, 0])


def test_l2_normalize_rejects_near_zero():
    with pytest.raises(NearZeroNorm):
        gc.l2_normalize([1e-13, 0.0])


def test_l2_normalize_jacobian_closed_form_and_fd():
    v = np.array([3.0, 4.0])
    u = v / 5
    np.testing.assert_allclose(gc.l2_normalize_jacobian(v), (np.eye(2) - np.outer(u, u)) / 5, atol=1e-15)
    fd = np.stack([central_diff(lambda x, k=k: gc.l2_normalize(x)[k], v) for k in range(2)])
    assert np.max(np.abs(fd - gc.l2_normalize_jacobian(v)) / np.maximum(1, np.abs(fd))) <= 1e-6


def test_l2_normalize_vjp_matches_jacobian():
    rs = np.random.default_rng(1)
    v, g = rs.normal(size=6), rs.normal(size=6)
    np.testing.assert_allclose(gc.l2_normalize_vjp(v, g), gc.l2_normalize_jacobian(v).T @ g, atol=1e-14)
    V, G = rs.normal(size=(3, 6)), rs.normal(size=(3, 6))
    rows = np.stack([gc.l2_normalize_vjp(V[i], G[i]) for i in range(3)])
    np.testing.assert_allclose(gc.l2_normalize_vjp(V, G), rows, atol=1e-14)


@given(vectors())
def test_l2_normalize_unit_norm(v):
    assert abs(np.linalg.norm(gc.l2_normalize(v)) - 1.0) <= 1e-12


@given(vectors(), st.floats(1e-3, 1e3))
def test_l2_normalize_scale_invariant(v, alpha):
    np.testing.assert_allclose(gc.l2_normalize(alpha * v), gc.l2_normalize(v), atol=1e-12)


@pytest.mark.parametrize(
    "z, expected",
    [([1, 0], [0.6, 0.8]), ([1, 2], [0.6, 2.8]), ([0, 0], [0.0, 0.0])],
)
def test_weighted_sum_examples(z, expected):
    rows = np.array([[0.6, 0.8], [0.0, 1.0]])
    np.testing.assert_allclose(gc.weighted_sum(z, rows), expected, atol=1e-15)


def test_weighted_sum_dim_mismatch():
    with pytest.raises(DimMismatch):
        gc.weighted_sum([1, 2, 3], np.eye(2))


def test_weighted_sum_vjp_fd():
    rs = np.random.default_rng(2)
    z, rows, g = rs.uniform(size=4), rs.normal(size=(4, 3)), rs.normal(size=3)
    dz, drows = gc.weighted_sum_vjp(z, rows, g)
    np.testing.assert_allclose(dz, central_diff(lambda t: gc.weighted_sum(t, rows) @ g, z), atol=1e-8)
    np.testing.assert_allclose(drows, central_diff(lambda t: gc.weighted_sum(z, t) @ g, rows), atol=1e-8)


def test_cosine_examples():
    assert gc.cosine_sim([1, 0], [0, 1]) == 0.0
    assert gc.cosine_sim([1, 1], [1, 0]) == pytest.approx(0.7071067811865476, abs=1e-15)


def test_cosine_rejects_zero():
    with pytest.raises(NearZeroNorm):
        gc.cosine_sim([0, 0], [1, 0])


def test_cosine_grad_fd_random_8dim():
    rs = np.random.default_rng(3)
    a, b = rs.normal(size=8), rs.normal(size=8)
    res = gc.cosine_sim_grad(a, b)
    for got, fd in zip(res.grads, (central_diff(lambda t: gc.cosine_sim(t, b), a),
                                   central_diff(lambda t: gc.cosine_sim(a, t), b))):
        assert np.max(np.abs(got - fd) / np.maximum(1, np.abs(fd))) <= 1e-6


@given(vectors(3, 3), vectors(3, 3))
def test_cosine_symmetric_and_bounded(a, b):
    c = gc.cosine_sim(a, b)
    assert c == gc.cosine_sim(b, a)
    assert abs(c) <= 1 + 1e-12


def test_sigmoid_examples():
    assert gc.sigmoid(0.0) == 0.5
    assert 0.0 <= gc.sigmoid(-1000.0) <= 1e-300
    assert gc.sigmoid_grad(0.0).grads[0] == 0.25
    with np.errstate(over="raise"):
        assert 1.0 - 1e-12 < gc.sigmoid(700.0) < 1.0
        assert gc.sigmoid(-700.0) > 0.0
    assert 0.0 < gc.sigmoid(-1e4)


def test_softmax_xent_uniform():
    assert gc.softmax_xent(np.zeros(5), 3) == pytest.approx(np.log(5), abs=1e-15)
    _, (g,) = gc.softmax_xent_grad(np.zeros(4), 1)
    np.testing.assert_allclose(g, [0.25, -0.75, 0.25, 0.25], atol=1e-15)


def test_softmax_xent_index_error():
    with pytest.raises(IndexOutOfRange):
        gc.softmax_xent([0.0, 1.0], 2)


def test_softmax_xent_fd_random_10():
    rs = np.random.default_rng(4)
    logits = rs.normal(scale=3, size=10)
    _, (g,) = gc.softmax_xent_grad(logits, 7)
    fd = central_diff(lambda t: gc.softmax_xent(t, 7), logits)
    assert np.max(np.abs(g - fd) / np.maximum(1, np.abs(fd))) <= 1e-6


@given(arrays(np.float64, st.integers(2, 12), elements=finite), st.data())
def test_softmax_sums_to_one_and_loss_nonnegative(logits, data):
    t = data.draw(st.integers(0, logits.size - 1))
    assert abs(gc.softmax(logits).sum() - 1.0) <= 1e-12
    assert gc.softmax_xent(logits, t) >= 0.0


def test_softmax_xent_batch_matches_rowwise():
    rs = np.random.default_rng(5)
    L, t = rs.normal(size=(4, 3)), np.array([0, 2, 1, 1])
    res = gc.softmax_xent_batch(L, t)
    rows = [gc.softmax_xent_grad(L[i], t[i]) for i in range(4)]
    assert res.value == pytest.approx(np.mean([r.value for r in rows]), abs=1e-15)
    np.testing.assert_allclose(res.grads[0], np.stack([r.grads[0] for r in rows]) / 4, atol=1e-15)


def test_grad_check_examples():
    assert gc.grad_check(lambda v: (gc.l2_normalize(v), gc.l2_normalize_jacobian(v)), [3.0, 4.0]) <= 1e-6
    assert gc.grad_check(lambda v: (v.copy(), np.eye(v.size)), np.array([1.0, -2.0, 3.0])) <= 1e-10


def test_grad_check_detects_wrong_gradient():
    assert gc.grad_check(lambda v: (float(v @ v), v), np.array([1.0, 2.0])) > 0.5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_primitives_fd_at_random_points(seed):
    rs = np.random.default_rng(seed)
    v = rs.normal(size=5) + 0.1
    assert gc.grad_check(lambda t: (gc.l2_normalize(t), gc.l2_normalize_jacobian(t)), v) <= 1e-6
    a, b = rs.normal(size=5), rs.normal(size=5)
    ab = np.concatenate([a, b])
    assert gc.grad_check(lambda t: (gc.cosine_sim(t[:5], t[5:]), np.concatenate(gc.cosine_sim_grad(t[:5], t[5:]).grads)), ab) <= 1e-6
    x = rs.uniform(-20, 20)
    assert gc.grad_check(lambda t: (gc.sigmoid(t), gc.sigmoid_grad(t).grads[0]), np.array(x)) <= 1e-6
    assert gc.grad_check(lambda t: gc.softmax_xent_grad(t, 2), rs.normal(scale=3, size=6)) <= 1e-6
