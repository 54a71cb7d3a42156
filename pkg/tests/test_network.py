import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccmnet.errors import DimensionError
from ccmnet.graphs import DirectedGraph, empty, path
from ccmnet.network import (
    NetworkModel, NodeSpec, StackedPoint, differential_matrices, stack_dynamics, validate_model,
)
from ccmnet.poly import PolyMatrix, Polynomial, parse_poly, xvar
from ccmnet.scenarios import build_cubic_network, build_platoon, platoon_state


def node(f, b, n=1, m=1):
    return NodeSpec(n, m, PolyMatrix.column([parse_poly(s) for s in f]),
                    PolyMatrix([[parse_poly(s) for s in row] for row in b], n, m))


def test_single_node_stack():
    s = node(["-x[1][1] - x[1][1]^3"], [["1"]])
    model = NetworkModel([s], empty(1), empty(1))
    f, B = stack_dynamics(model)
    assert f == s.f and B == s.b


def test_decoupled_integrators():
    model = NetworkModel([node(["0"], [["1"]]), node(["0"], [["1"]])], empty(2), empty(2))
    f, B = stack_dynamics(model)
    assert f.is_zero()
    np.testing.assert_array_equal(B.evaluate({}), np.eye(2))


def test_cubic_two_node_stack():
    model = build_cubic_network(2)
    f, B = stack_dynamics(model)
    # mirrored boundary: coupling terms cancel for N=2 except x_j^3 - x_i^3
    want1 = parse_poly("-x[1][1] - x[1][1]^3 + x[1][2]^2 + 0.01*(x[2][1]^3 - x[1][1]^3)")
    want2 = parse_poly("-x[2][1] - x[2][1]^3 + x[2][2]^2 + 0.01*(x[1][1]^3 - x[2][1]^3)")
    assert (f.entries[0][0] - want1).is_zero() or max(abs(c) for _, c in (f.entries[0][0] - want1).items()) < 1e-15
    assert max((abs(c) for _, c in (f.entries[2][0] - want2).items()), default=0.0) < 1e-15
    assert f.entries[1][0].is_zero() and f.entries[3][0].is_zero()
    np.testing.assert_array_equal(B.evaluate({}), [[0, 0], [1, 0], [0, 0], [0, 1]])


def test_differential_matrices_scalar():
    model = NetworkModel([node(["-x[1][1] - x[1][1]^3"], [["1"]])], empty(1), empty(1))
    A, B = differential_matrices(model, StackedPoint.make(model, [2.0], [0.0]))
    np.testing.assert_array_equal(A, [[-13.0]])
    np.testing.assert_array_equal(B, [[1.0]])


def test_linear_system_constant_A(rng):
    model = NetworkModel([node(["-x[1][1] + 2*x[2][1]"], [["1"]]), node(["-3*x[2][1]"], [["1"]])],
                         DirectedGraph(2, frozenset({(2, 1)})), empty(2))
    A0, _ = differential_matrices(model, StackedPoint.make(model, [0, 0], [0, 0]))
    for _ in range(5):
        A, _ = differential_matrices(model, StackedPoint.make(model, rng.normal(size=2), rng.normal(size=2)))
        np.testing.assert_array_equal(A, A0)


def test_cubic_jacobian_at_origin():
    model = build_cubic_network(2)
    A, _ = differential_matrices(model, StackedPoint.make(model, np.zeros(4)))
    want = np.zeros((4, 4))
    want[0, 0] = want[2, 2] = -1.0
    want[0, 1] = want[2, 3] = 0.0          # 2 y_i vanishes at the origin
    np.testing.assert_array_equal(A, want)


def test_dimension_mismatch():
    model = build_cubic_network(2)
    with pytest.raises(DimensionError):
        StackedPoint.make(model, np.zeros(3))
    with pytest.raises(DimensionError):
        differential_matrices(model, StackedPoint(np.zeros(3), np.zeros(2)))


def test_validate_examples():
    bad = NetworkModel([node(["x[2][1]"], [["1"]]), node(["0"], [["1"]])], empty(2), empty(2))
    problems = validate_model(bad)
    assert len(problems) == 1 and "x[2][1]" in problems[0]
    model, _ = build_platoon(4, seed=0, horizon=1)
    assert validate_model(model) == []
    zero_input = NetworkModel([node(["-x[1][1]"], [[]], m=0), node(["-x[2][1] + x[1][1]"], [["1"]])],
                              path(2), empty(2))
    assert validate_model(zero_input) == []
    f, B = stack_dynamics(zero_input)
    assert B.shape == (2, 1)
    A, Bv = differential_matrices(zero_input, StackedPoint.make(zero_input, [1.0, 2.0], [0.5]))
    np.testing.assert_array_equal(Bv, [[0.0], [1.0]])


def _fd_jacobian(model, x, u, h=1e-6):
    n = model.n
    J = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (model.vector_field(x + e, u) - model.vector_field(x - e, u)) / (2 * h)
    return J


@pytest.mark.parametrize("which", ["cubic", "platoon"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_jacobian_matches_finite_differences(which, seed):
    rng = np.random.default_rng(seed)
    if which == "cubic":
        model = build_cubic_network(4, "neighbor")
        x = rng.uniform(-2, 2, model.n)
    else:
        model, _ = build_platoon(4, seed=0, horizon=1)
        x = platoon_state(4, 0, 20.0) + rng.uniform(-5, 5, model.n)
        x[1::2] = rng.uniform(0, 50, 4)
    u = rng.uniform(-1, 1, model.m)
    A, _ = differential_matrices(model, StackedPoint.make(model, x, u))
    J = _fd_jacobian(model, x, u)
    scale = max(1.0, np.abs(A).max())
    assert np.abs(A - J).max() <= 1e-5 * scale


@pytest.mark.parametrize("build", [lambda: build_cubic_network(5, "complete"),
                                   lambda: build_platoon(5, seed=3, horizon=2)[0]])
def test_block_sparsity_follows_physical_graph(build, rng):
    model = build()
    for _ in range(10):
        x = rng.uniform(-2, 2, model.n)
        A, _ = differential_matrices(model, StackedPoint.make(model, x, rng.normal(size=model.m)))
        for j in range(1, model.N + 1):
            for k in range(1, model.N + 1):
                if not model.g_p.has_edge(k, j):
                    assert not A[model.xslice(j), model.xslice(k)].any()


def test_cubic_linearization_not_controllable():
    model = build_cubic_network(3)
    A, B = differential_matrices(model, StackedPoint.make(model, np.zeros(model.n)))
    ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(model.n)])
    assert np.linalg.matrix_rank(ctrb) < model.n


def test_platoon_equilibrium_and_positive_drive():
    model, info = build_platoon(4, seed=0)
    x = platoon_state(4, info.v_nominal, info.spacing)
    dx = model.vector_field(x, info.u_nominal)
    assert dx[0] == pytest.approx(info.v_nominal)
    np.testing.assert_allclose(dx[1:], 0.0, atol=1e-10)
    for p in info.params:
        assert all(p.drive(v) > 0 for v in np.linspace(0, 50, 101))
        assert 1800 <= p.mass <= 2000 and 1.3 <= p.k_d <= 1.6
        assert 13 <= p.alpha <= 16 and 0.28 <= p.beta <= 0.35


def test_slicing_partitions():
    model, _ = build_platoon(3)
    covered = np.concatenate([np.arange(model.n)[model.xslice(i)] for i in range(1, 4)])
    np.testing.assert_array_equal(covered, np.arange(model.n))
    assert model.breve(2) == (1,) or list(model.breve(2)) == [1]


def test_model_without_inputs():
    model = NetworkModel([node(["-x[1][1]^3"], [[]], m=0)], empty(1), empty(1))
    assert model.m == 0
    np.testing.assert_allclose(model.vector_field([2.0], []), [-8.0])
    A, B = differential_matrices(model, StackedPoint.make(model, [1.0]))
    assert A.shape == (1, 1) and B.shape == (1, 0)
