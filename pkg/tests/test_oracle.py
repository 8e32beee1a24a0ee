import numpy as np
import pytest

from equivwalk.errors import ContractError, OnKinkError, UnsupportedError
from equivwalk.metric import analyze_point
from equivwalk.network import Activation, Dense, NetworkSpec, forward
from equivwalk.oracle import (audit_invariance, brute_force_level_set, default_value_tol,
                              finite_difference_jacobian)
from equivwalk.walkers import WalkConfig, simec_nd, simexp_nd
from equivwalk.zoo import relu_line_2d


def tanh_net(seed=0, n_in=4, n_hidden=6, n_out=2):
    rng = np.random.default_rng(seed)
    return NetworkSpec.from_layers([
        Dense(rng.normal(size=(n_hidden, n_in)) * 0.5, rng.normal(size=n_hidden) * 0.1, Activation("tanh")),
        Dense(rng.normal(size=(n_out, n_hidden)) * 0.5, np.zeros(n_out), Activation("tanh")),
    ])


# ---------------------------------------------------------------- level sets


def test_relu_line_level_set_near_line():
    net = relu_line_2d()
    grid = brute_force_level_set(net, [(-3, 3), (-3, 3)], 601, [-0.98, -2.45], value_tol=0.005)
    pts = grid.points
    assert pts.shape[0] > 100
    h = grid.spacing[0]
    assert np.all(np.abs(pts[:, 0] - pts[:, 1] - 1.47) <= 2 * h)
    assert grid.contains([[-0.98, -2.45], [0.53, -0.94]]).tolist() == [True, True]
    assert not grid.contains([[2.0, 2.0]])[0]
    assert not grid.contains([[5.0, 0.0]])[0]


def test_inactive_level_set_is_half_plane():
    net = relu_line_2d()
    grid = brute_force_level_set(net, [(-1, 1), (-1, 1)], 41, [-0.5, 0.5], value_tol=0.0)
    xs, ys = np.meshgrid(*grid.axes, indexing="ij")
    assert np.array_equal(grid.mask, xs <= ys)


def test_constant_net_returns_whole_grid():
    net = NetworkSpec.from_layers([Dense(np.zeros((1, 3)), np.array([0.7]))])
    grid = brute_force_level_set(net, [(0, 1)] * 3, 11, [0.2, 0.3, 0.4], value_tol=0.0)
    assert grid.mask.all() and grid.points.shape == (11 ** 3, 3)


def test_level_set_errors():
    five = NetworkSpec.from_layers([Dense(np.ones((1, 5)), np.zeros(1))])
    with pytest.raises(UnsupportedError):
        brute_force_level_set(five, [(0, 1)] * 5, 3, np.zeros(5), 0.1)
    with pytest.raises(ContractError):
        brute_force_level_set(relu_line_2d(), [(0, 1)] * 2, 1, np.zeros(2), 0.1)
    with pytest.raises(ContractError):
        brute_force_level_set(relu_line_2d(), [(1, 0)] * 2, 5, np.zeros(2), 0.1)
    with pytest.raises(ContractError):
        brute_force_level_set(relu_line_2d(), [(0, 1)] * 3, 5, np.zeros(2), 0.1)


# ---------------------------------------------------------------- audits


def test_simec_audit_on_smooth_net():
    net = tanh_net()
    walk = simec_nd(net, np.array([0.3, -0.2, 0.5, 0.1]), WalkConfig(steps=1000, delta=1e-4))
    report = audit_invariance(net, walk, tol=1e-3)
    assert len(walk) == 1001 and report.within_tol
    assert report.series[0] == 0.0 and report.series.shape == (1001,)
    assert report.summary()["within_tol"] is True
    assert "ok" in report.describe()
    assert default_value_tol(walk) >= 0.0


def test_simexp_audit_flagged():
    net = tanh_net()
    walk = simexp_nd(net, np.array([0.3, -0.2, 0.5, 0.1]),
                     WalkConfig(mode="simexp", steps=200, delta=1e-2, seed=3))
    report = audit_invariance(net, walk, tol=1e-3)
    assert not report.within_tol
    assert "VIOLATED" in report.describe()


def test_audit_ignores_stored_outputs():
    net = tanh_net()
    walk = simec_nd(net, np.array([0.3, -0.2, 0.5, 0.1]), WalkConfig(steps=5, delta=1e-3))
    walk.outputs[:] = 1e6
    assert audit_invariance(net, walk, tol=1e-3).within_tol


def test_single_point_audit():
    class OnePoint:
        points = np.array([[0.1, 0.2, 0.3, 0.4]])
    report = audit_invariance(tanh_net(), OnePoint, tol=0.0)
    assert report.max_output_deviation == 0.0 and report.argmax_flips == 0 and report.within_tol


def test_argmax_flips_counted():
    net = NetworkSpec.from_layers([Dense(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))])

    class Crossing:
        points = np.array([[1.0, 0.0], [0.6, 0.4], [0.4, 0.6], [0.0, 1.0]])
    assert audit_invariance(net, Crossing, tol=1.0).argmax_flips == 2


# ---------------------------------------------------------------- finite differences


def test_fd_linear_exact():
    A = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]])
    net = NetworkSpec.from_layers([Dense(A, np.array([0.1, -0.2]))])
    assert np.allclose(finite_difference_jacobian(net, [0.3, 0.4, -0.5]), A, rtol=0, atol=1e-9)


def test_fd_matches_analytic_tanh():
    net = tanh_net(seed=4)
    x = np.array([0.2, -0.7, 0.4, 0.9])
    J = analyze_point(net, x).jacobian
    assert np.max(np.abs(finite_difference_jacobian(net, x) - J)) < 1e-5


def test_fd_relu_inside_region():
    net = relu_line_2d()
    assert np.allclose(finite_difference_jacobian(net, [0.5, -1.0]), [[1.0, -1.0]], atol=1e-9)
    assert np.allclose(finite_difference_jacobian(net, [-1.0, 0.5]), [[0.0, 0.0]], atol=1e-12)


def test_fd_refuses_kink():
    net = relu_line_2d()
    with pytest.raises(OnKinkError):
        finite_difference_jacobian(net, [1.0, 1.0])
    with pytest.raises(OnKinkError):
        finite_difference_jacobian(net, [1.0, 1.0 - 1e-7])
    with pytest.raises(ContractError):
        finite_difference_jacobian(net, [0.5, -1.0], step=0.0)
    assert forward(net, np.array([0.5, -1.0]))[0] == 1.5
