import numpy as np
import pytest
from hypothesis import given, strategies as st

from equivwalk.errors import ContractError, NumericError, OnKinkError, ShapeError
from equivwalk.linalg import SymmetricEigenDecomposition
from equivwalk.metric import (IDENTITY_METRIC, CurveAccumulators, OutputMetric, analyze_point,
                              lipschitz_bound, metric_jump, pullback, split_spectrum,
                              step_increments, suggest_tau)
from equivwalk.network import Activation, Dense, NetworkSpec
from equivwalk.zoo import leaky_plane_3d, relu_axis_3d, relu_line_2d


def pullback_double_sum(J, w):
    """Entry-by-entry sum over output indices, the defining formula."""
    m, n = J.shape
    h = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            h[i, j] = sum(J[a, i] * w[a] * J[a, j] for a in range(m))
    return h


def test_relu_axis_golden():
    net = relu_axis_3d()
    active = analyze_point(net, np.array([0.5, -1.0, 2.0]))
    assert np.max(np.abs(active.h - np.diag([9.0, 0.0, 0.0]))) <= 1e-12
    negative = analyze_point(net, np.array([-0.5, -1.0, -2.0]))
    assert np.max(np.abs(negative.h)) <= 1e-12
    assert active.kernel_dim == 2 and negative.kernel_dim == 3


def test_leaky_plane_golden():
    net = leaky_plane_3d(slope=-0.1)
    below = analyze_point(net, np.array([-1.0, -0.5, 0.2])).h
    above = analyze_point(net, np.array([1.0, 0.5, 0.2])).h
    assert np.max(np.abs(below - 0.01)) <= 1e-15
    assert np.array_equal(above, np.ones((3, 3)))
    assert metric_jump(below, above, 0.1)


def test_pullback_identity_and_double_sum():
    assert np.array_equal(pullback(np.eye(4)), np.eye(4))
    rng = np.random.default_rng(0)
    for _ in range(10):
        J = rng.normal(size=(3, 5))
        w = rng.uniform(0.1, 3, size=3)
        assert np.allclose(pullback(J, OutputMetric.diagonal(w)), pullback_double_sum(J, w),
                           rtol=0, atol=1e-10)


def test_pullback_dimension_mismatch():
    with pytest.raises(ShapeError):
        pullback(np.ones((2, 3)), OutputMetric.diagonal([1.0, 2.0, 3.0]))


def test_output_metric_validation():
    with pytest.raises(ContractError):
        OutputMetric.diagonal([1.0, 0.0])
    with pytest.raises(ContractError):
        OutputMetric("hyperbolic")
    assert OutputMetric.diagonal([1.0, 2.5]).describe() == "diag:1.0,2.5"
    assert IDENTITY_METRIC.describe() == "identity"


def test_analyze_relu_line():
    net = relu_line_2d()
    active = analyze_point(net, np.array([-0.98, -2.45]), eps=1e-8)
    assert active.kernel_dim == 1
    assert np.allclose(np.abs(active.null_vectors[:, 0]), np.ones(2) / np.sqrt(2), atol=1e-14)
    assert np.allclose(active.h, [[1.0, -1.0], [-1.0, 1.0]])
    assert analyze_point(net, np.array([-1.45, 1.30])).kernel_dim == 2
    square = NetworkSpec.from_layers([Dense(np.array([[2.0, 1.0], [0.5, 3.0]]), np.zeros(2))])
    assert analyze_point(square, np.array([0.3, 0.1])).kernel_dim == 0


def test_analyze_on_kink():
    net = relu_line_2d()
    with pytest.raises(OnKinkError):
        analyze_point(net, np.array([1.0, 1.0]))
    pm = analyze_point(net, np.array([1.0, 1.0]), strict=False)
    assert pm.on_kink and pm.kernel_dim == 2
    with pytest.raises(ContractError):
        analyze_point(net, np.array([1.0, 0.0]), eps=0.0)


def test_psd_clamp():
    q = np.eye(3)
    dec, null, nonnull = split_spectrum(SymmetricEigenDecomposition(np.array([-1e-12, 0.5, 2.0]), q), 1e-8)
    assert dec.eigenvalues[0] == 0.0
    assert list(null) == [0] and list(nonnull) == [1, 2]
    with pytest.raises(NumericError):
        split_spectrum(SymmetricEigenDecomposition(np.array([-1e-6, 0.5, 2.0]), q), 1e-8)


def test_relative_eps():
    dec = SymmetricEigenDecomposition(np.array([1e-3, 1.0, 1e3]), np.eye(3))
    assert len(split_spectrum(dec, 1e-2)[1]) == 1
    assert len(split_spectrum(dec, 1e-2, relative=True)[1]) == 2


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32 - 1), st.booleans())
def test_pullback_symmetric_psd_rank(m, n, seed, weighted):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, min(m, n) + 1))
    J = rng.normal(size=(m, r)) @ rng.normal(size=(r, n))
    g = OutputMetric.diagonal(rng.uniform(0.2, 5.0, size=m)) if weighted else IDENTITY_METRIC
    h = pullback(J, g)
    assert np.max(np.abs(h - h.T)) <= 1e-12
    w = np.linalg.eigvalsh(h)
    assert w.min() >= -1e-10 * max(1.0, w.max())
    rank_h = int(np.sum(w > 1e-10 * max(1.0, w.max())))
    assert rank_h == np.linalg.matrix_rank(J)


def test_relu_metric_constant_on_signature():
    rng = np.random.default_rng(2)
    net = NetworkSpec.from_layers([Dense(rng.normal(size=(5, 3)), rng.normal(size=5), Activation.relu()),
                                   Dense(rng.normal(size=(2, 5)), np.zeros(2))])
    x = rng.normal(size=3)
    base = analyze_point(net, x)
    checked = 0
    for _ in range(500):
        y = x + 0.05 * rng.normal(size=3)
        other = analyze_point(net, y)
        if other.signature == base.signature:
            assert np.max(np.abs(other.h - base.h)) <= 1e-12
            checked += 1
    assert checked > 10


@given(st.floats(0.1, 50.0), st.integers(0, 2**32 - 1))
def test_metric_scaling(c, seed):
    rng = np.random.default_rng(seed)
    net = NetworkSpec.from_layers([Dense(rng.normal(size=(2, 4)), rng.normal(size=2), Activation("tanh"))])
    x = rng.normal(size=4)
    a = analyze_point(net, x, OutputMetric.diagonal([1.0, 1.0]), eps=1e-8)
    b = analyze_point(net, x, OutputMetric.diagonal([c, c]), eps=1e-8 * c)
    assert np.allclose(b.eigen.eigenvalues, c * a.eigen.eigenvalues, rtol=1e-10, atol=1e-12 * c)
    assert np.array_equal(a.null_indices, b.null_indices)


def test_metric_jump_boundaries():
    h = np.array([[1.0, 0.5], [0.5, 2.0]])
    assert not metric_jump(h, h, 0.1)
    assert not metric_jump(np.zeros((2, 2)), np.full((2, 2), 0.25), 0.25)
    assert metric_jump(np.zeros((2, 2)), np.full((2, 2), 0.2500001), 0.25)
    with pytest.raises(ShapeError):
        metric_jump(np.zeros((2, 2)), np.zeros((3, 3)), 0.1)
    with pytest.raises(ContractError):
        metric_jump(h, h, 0.0)


def test_suggest_tau_examples():
    delta = 1e-3
    net = NetworkSpec.from_layers([Dense(np.array([[2.0, -1.0]]), np.zeros(1), Activation.relu())])
    assert suggest_tau(net, delta) <= 2 * np.sqrt(5) * delta + 1e-18
    identity = NetworkSpec.from_layers([Dense(np.eye(3), np.zeros(3))])
    assert suggest_tau(identity, delta) == 2 * delta
    assert suggest_tau(NetworkSpec((), 2, 2), delta) == 2 * delta
    A1 = np.diag([3.0, 0.5])
    A2 = np.array([[0.0, 2.0], [2.0, 0.0]])
    two = NetworkSpec.from_layers([Dense(A1, np.zeros(2)), Dense(A2, np.zeros(2))])
    assert suggest_tau(two, delta) == pytest.approx(2 * 3.0 * 2.0 * delta)
    assert lipschitz_bound(two) == pytest.approx(6.0)
    with pytest.raises(ContractError):
        suggest_tau(two, 0.0)


def test_step_increments_examples():
    dE, dPl = step_increments(np.eye(3), np.array([0.0, 1.0, 0.0]), 0.1)
    assert dE == pytest.approx(0.01) and dPl == pytest.approx(0.1)
    h = np.array([[1.0, -1.0], [-1.0, 1.0]])
    dE, dPl = step_increments(h, np.array([1.0, -1.0]) / np.sqrt(2), 0.01)
    assert dE == pytest.approx(2e-4, rel=1e-14) and dPl == pytest.approx(np.sqrt(2) * 1e-2, rel=1e-14)
    pm = analyze_point(relu_line_2d(), np.array([0.5, -1.0]), eps=1e-8)
    dE, _ = step_increments(pm.h, pm.null_vectors[:, 0], 0.3)
    assert dE <= 1e-8 * 0.09
    assert step_increments(np.diag([-1e-14, 1.0]), np.array([1.0, 0.0]), 1.0) == (0.0, 0.0)


def test_accumulators_monotone():
    acc = CurveAccumulators()
    history = []
    for dE in (0.0, 1e-4, 3e-4, 0.0):
        acc.add(dE, np.sqrt(dE))
        history.append((acc.energy, acc.pseudolength))
    assert history == sorted(history)
