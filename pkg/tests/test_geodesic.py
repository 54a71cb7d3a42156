import dataclasses

import numpy as np
import pytest

from ccmnet.errors import AdmissibilityError
from ccmnet.graphs import DirectedGraph
from ccmnet.geodesic import (
    DistributedController, NodeController, NodeMetric, admissibility_audit, curve_energy,
    gain_from_certificate, network_geodesic, node_control, node_geodesic, straight_line,
)
from ccmnet.poly import PolyMatrix, parse_poly, xvar

from conftest import cubic_certificate

E2 = (np.e - 1.0) ** 2


def exp_metric(X):
    return np.exp(2.0 * np.atleast_2d(X))[:, :, None]


def dp_energy(M, a, b, S, grid):
    """Dynamic programming over curves whose interior samples lie on ``grid``."""
    g = np.asarray(grid)
    # cost of a segment between grid values p -> q
    P, Q = np.meshgrid(g, g, indexing="ij")
    seg = S * (Q - P) ** 2 * M(0.5 * (P + Q).ravel()[:, None]).reshape(P.shape)
    start = S * (g - a) ** 2 * M(0.5 * (a + g)[:, None]).ravel()
    cost = start
    for _ in range(S - 2):
        cost = (cost[:, None] + seg).min(axis=0)
    end = S * (b - g) ** 2 * M(0.5 * (g + b)[:, None]).ravel()
    return float((cost + end).min())


# ---------------------------------------------------------------- geodesics


@pytest.mark.parametrize("S", [1, 3, 16])
def test_straight_line_energies(S):
    curve, E = node_geodesic(np.eye(2), [0, 0], [3, 4], S)
    np.testing.assert_array_equal(curve, straight_line([0, 0], [3, 4], S))
    assert E == pytest.approx(25.0, rel=1e-15)
    _, E = node_geodesic(np.diag([2.0, 1.0]), [0, 0], [3, 4], S)
    assert E == pytest.approx(34.0, rel=1e-15)


def test_zero_length_curve():
    assert curve_energy(np.eye(2), np.zeros((5, 2))) == 0.0
    curve, E = node_geodesic(exp_metric, [0.3], [0.3], 8)
    assert E == 0.0


def test_exp_metric_closed_form():
    curve, E = node_geodesic(exp_metric, [0.0], [1.0], 256)
    assert abs(E - E2) <= 0.01 * E2
    assert curve[0, 0] == 0.0 and curve[-1, 0] == 1.0


def test_exp_metric_matches_dynamic_programming():
    S = 12
    _, E = node_geodesic(exp_metric, [0.0], [1.0], S)
    ref = dp_energy(lambda X: exp_metric(X)[:, 0, 0], 0.0, 1.0, S, np.linspace(-0.1, 1.1, 1201))
    # the optimizer is free to leave the grid, so it can only do better
    assert E <= ref + 1e-9
    assert abs(E - ref) <= 1e-3 * ref


def test_exp_metric_second_order_convergence():
    errs = [abs(node_geodesic(exp_metric, [0.0], [1.0], S)[1] - E2) for S in (8, 16, 32)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.5 < r < 4.5 for r in ratios)


def test_node_metric_from_polynomial():
    W = PolyMatrix([[parse_poly("1 + x[1][1]^2")]])
    M = NodeMetric(W, 1).bind([xvar(1, 1)])
    X = np.array([[0.0], [2.0]])
    np.testing.assert_allclose(M(X)[:, 0, 0], [1.0, 0.2])
    _, E = node_geodesic(M, [-1.0], [1.0], 64)
    # length of sqrt(1/(1+x^2)) over [-1, 1] is 2 asinh(1)
    assert E == pytest.approx((2 * np.arcsinh(1.0)) ** 2, rel=1e-3)


def test_energy_is_sum_separable(rng):
    metrics = [np.diag([2.0, 1.0]), exp_metric, np.array([[3.0]])]
    offsets = np.array([0, 2, 3, 4])
    xs, x = rng.normal(size=4), rng.normal(size=4)
    geo = network_geodesic(metrics, xs, x, offsets, 16)
    parts = [node_geodesic(M, xs[offsets[k]:offsets[k + 1]], x[offsets[k]:offsets[k + 1]], 16)[1]
             for k, M in enumerate(metrics)]
    assert geo.energy == pytest.approx(sum(parts), rel=1e-12)
    d = x - xs
    assert geo.energies[0] == pytest.approx(d[:2] @ np.diag([2.0, 1.0]) @ d[:2], rel=1e-14)


# ------------------------------------------------------------- controllers


def constant_certificate(rng, structure="neighbor"):
    model, cert, _ = cubic_certificate(structure)
    W = []
    for _ in range(model.N):
        R = rng.normal(size=(2, 2))
        W.append(PolyMatrix.from_array(R @ R.T + 2 * np.eye(2)))
    Y = {k: PolyMatrix.from_array(rng.normal(size=(1, 2))) for k in cert.Y}
    return model, dataclasses.replace(cert, W=W, Y=Y)


def full_K(model, cert):
    W = np.zeros((model.n, model.n))
    for i, Wi in enumerate(cert.W, start=1):
        W[model.xslice(i), model.xslice(i)] = Wi.evaluate({})
    Y = np.zeros((model.m, model.n))
    for (i, j), blk in cert.Y.items():
        Y[model.uslice(i), model.xslice(j)] = blk.evaluate({})
    return Y @ np.linalg.inv(W)


@pytest.mark.parametrize("S", [1, 2, 16])
@pytest.mark.parametrize("fused", [True, False])
def test_constant_controller_is_linear(rng, S, fused):
    model, cert = constant_certificate(rng)
    K = full_K(model, cert)
    ctrl = DistributedController.from_certificate(model, cert, S=S, fused=fused)
    for _ in range(5):
        x, xs, us = rng.normal(size=model.n), rng.normal(size=model.n), rng.normal(size=model.m)
        np.testing.assert_allclose(ctrl(x, xs, us), us + K @ (x - xs), rtol=0, atol=1e-12)


def test_identity_metric_gives_K_equal_Y(rng):
    model, cert = constant_certificate(rng)
    cert = dataclasses.replace(cert, W=[PolyMatrix.identity(2)] * model.N)
    for ctrl in gain_from_certificate(model, cert):
        for j, Yj in ctrl.Y.items():
            np.testing.assert_array_equal(ctrl.gain(j, np.zeros((1, len(ctrl.local_vars))))[0],
                                          Yj.evaluate({}))


def test_zero_error_gives_feedforward(rng):
    model, cert, _ = cubic_certificate("neighbor")
    ctrl = DistributedController.from_certificate(model, cert, fused=False)
    x, us = rng.uniform(-1, 1, model.n), rng.normal(size=model.m)
    np.testing.assert_array_equal(ctrl(x, x, us), us)


@pytest.mark.parametrize("structure", ["decentralized", "neighbor", "complete"])
def test_fused_matches_per_node(structure, rng):
    model, cert, _ = cubic_certificate(structure)
    fused = DistributedController.from_certificate(model, cert, fused=True)
    plain = DistributedController.from_certificate(model, cert, fused=False)
    for _ in range(5):
        x, xs = rng.uniform(-2, 2, model.n), rng.uniform(-2, 2, model.n)
        us = rng.normal(size=model.m)
        np.testing.assert_allclose(fused(x, xs, us), plain(x, xs, us), rtol=1e-10, atol=1e-10)


def test_quadrature_second_order():
    # K(x) = x^2 + 1 on a scalar node; the exact integral along a -> b is closed form
    ctrl_for = lambda S: NodeController(1, [1], {1: PolyMatrix([[parse_poly("x[1][1]^2 + 1")]])},  # noqa: E731
                                        {1: PolyMatrix.identity(1)}, {1: [xvar(1, 1)]}, 1, S)
    a, b = -0.5, 1.5
    exact = (b ** 3 - a ** 3) / 3 + (b - a)
    errs = []
    for S in (4, 8, 16, 32):
        u = node_control(ctrl_for(S), {1: straight_line([a], [b], S)}, [0.0])
        errs.append(abs(u[0] - exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2.0) < 0.05)


def test_missing_neighbor_curve():
    ctrl = NodeController(1, [1, 2], {1: PolyMatrix([[1.0]]), 2: PolyMatrix([[2.0]])},
                          {1: PolyMatrix.identity(1), 2: PolyMatrix.identity(1)},
                          {1: [xvar(1, 1)], 2: [xvar(2, 1)]}, 1, 4)
    with pytest.raises(AdmissibilityError):
        node_control(ctrl, {1: straight_line([0.0], [1.0], 4)}, [0.0])


def test_audit_names_foreign_state():
    g_c = DirectedGraph(3, frozenset({(2, 1)}))
    vars_ = {j: [xvar(j, 1)] for j in (1, 2, 3)}
    W = {j: PolyMatrix.identity(1) for j in (1, 2, 3)}
    bad = NodeController(1, [1, 2], {2: PolyMatrix([[parse_poly("x[3][1]")]])}, W, vars_, 1)
    ok, violations = admissibility_audit([bad], g_c)
    assert not ok
    assert any("x[3][1]" in v for v in violations)
    with pytest.raises(AdmissibilityError):
        node_control(bad, {1: straight_line([0.0], [1.0], 4), 2: straight_line([0.0], [1.0], 4)}, [0.0])


@pytest.mark.parametrize("structure", ["decentralized", "neighbor", "complete"])
def test_audit_passes_synthesized(structure):
    model, cert, _ = cubic_certificate(structure)
    ok, violations = admissibility_audit(gain_from_certificate(model, cert), model.g_c, model)
    assert ok and violations == []


@pytest.mark.parametrize("structure", ["decentralized", "neighbor"])
@pytest.mark.parametrize("fused", [True, False])
def test_invariance_to_non_permitted_states(structure, fused, rng):
    model, cert, _ = cubic_certificate(structure)
    ctrl = DistributedController.from_certificate(model, cert, fused=fused)
    x, xs, us = rng.uniform(-2, 2, model.n), rng.uniform(-2, 2, model.n), rng.normal(size=model.m)
    base = ctrl(x, xs, us)
    for i in range(1, model.N + 1):
        permitted = {i} | set(model.g_c.in_neighbors(i))
        y, ys = x.copy(), xs.copy()
        for j in range(1, model.N + 1):
            if j not in permitted:
                y[model.xslice(j)] = rng.uniform(-2, 2, 2)
                ys[model.xslice(j)] = rng.uniform(-2, 2, 2)
        np.testing.assert_allclose(ctrl(y, ys, us)[model.uslice(i)], base[model.uslice(i)],
                                   rtol=0, atol=1e-12)
