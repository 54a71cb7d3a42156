"""Per-node geodesics and the integrated distributed control law."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import AdmissibilityError, CCMError, UnboundVariableError
from .graphs import DirectedGraph
from .poly import PolyEvaluator, PolyMatrix

log = logging.getLogger(__name__)

DEFAULT_SEGMENTS = 16


# ------------------------------------------------------------------ metrics


class NodeMetric:
    """``M_i = W_i^{-1}`` for one node, constant or state dependent."""

    def __init__(self, W: PolyMatrix, node=None):
        self.node = node
        self.n = W.rows
        self.W = W
        self.constant = W.is_constant()
        if self.constant:
            Wc = W.evaluate({})
            self.M = np.linalg.inv(Wc)
            self.M = 0.5 * (self.M + self.M.T)
        else:
            self.variables = sorted(W.variables(), key=lambda v: v.sort_key)
            self._eval = PolyEvaluator([e for row in W.entries for e in row], self.variables)
            self._cols = None

    def bind(self, state_vars):
        """Record the order of the node's coordinates (needed for state-dependent blocks)."""
        if not self.constant:
            pos = {v: k for k, v in enumerate(state_vars)}
            missing = [str(v) for v in self.variables if v not in pos]
            if missing:
                raise CCMError(f"metric block depends on foreign coordinates {missing}")
            self._cols = [pos[v] for v in self.variables]
        return self

    def W_at(self, X):
        X = np.atleast_2d(X)
        if self.constant:
            return np.broadcast_to(self.W.evaluate({}), (X.shape[0], self.n, self.n))
        return self._eval(X[:, self._cols]).reshape(-1, self.n, self.n)

    def __call__(self, X):
        X = np.atleast_2d(X)
        if self.constant:
            return np.broadcast_to(self.M, (X.shape[0], self.n, self.n))
        return np.linalg.inv(self.W_at(X))


def _as_metric(M, n=None):
    if isinstance(M, NodeMetric):
        return M
    if callable(M):
        return M
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return lambda X: np.broadcast_to(M, (np.atleast_2d(X).shape[0],) + M.shape)


def _is_constant(M):
    if isinstance(M, NodeMetric):
        return M.constant
    return not callable(M)


# ---------------------------------------------------------------- geodesics


@dataclass
class GeodesicCurve:
    """Per-node curve samples ``points[i]`` of shape ``(S + 1, n_i)``."""

    points: list
    segments: int
    energies: list

    @property
    def energy(self):
        return float(sum(self.energies))


def straight_line(a, b, S):
    s = np.linspace(0.0, 1.0, S + 1)[:, None]
    a, b = np.asarray(a, float), np.asarray(b, float)
    return a[None, :] + s * (b - a)[None, :]


def curve_energy(M, curve):
    """Midpoint-rule energy ``sum_j S dγ_j^T M(mid_j) dγ_j``."""
    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    S = curve.shape[0] - 1
    if S < 1:
        return 0.0
    d = np.diff(curve, axis=0)
    mid = 0.5 * (curve[1:] + curve[:-1])
    Mv = _as_metric(M)(mid)
    return float(S * np.einsum("ji,jik,jk->", d, Mv, d))


def _energy_and_grad(inner, M, a, b, S, h=1e-6):
    n = a.size
    curve = np.vstack([a, inner.reshape(S - 1, n), b])
    d = np.diff(curve, axis=0)
    mid = 0.5 * (curve[1:] + curve[:-1])
    Mv = M(mid)
    Md = np.einsum("jik,jk->ji", Mv, d)
    E = S * float(np.einsum("ji,ji->", d, Md))
    # dM/dx_k along each coordinate by central differences
    quad = np.zeros((S, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        dM = (M(mid + e) - M(mid - e)) / (2 * h)
        quad[:, k] = np.einsum("ji,jil,jl->j", d, dM, d)
    g_seg_end = 2 * S * Md + 0.5 * S * quad     # d E_j / d γ_{j+1}
    g_seg_start = -2 * S * Md + 0.5 * S * quad  # d E_j / d γ_j
    grad = g_seg_end[:-1] + g_seg_start[1:]
    return E, grad.ravel()


def node_geodesic(M, a, b, S=DEFAULT_SEGMENTS, tol=1e-10, max_iter=500):
    """Minimal-energy discretized curve from ``a`` to ``b`` under metric ``M``.

    ``M`` is a constant matrix, a :class:`NodeMetric`, or a callable mapping
    points ``(G, n)`` to matrices ``(G, n, n)``. Constant metrics give the
    straight line exactly; otherwise the interior samples are optimized from
    the straight line with L-BFGS. Returns ``(curve, energy)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    line = straight_line(a, b, S)
    if _is_constant(M) or S < 2 or np.array_equal(a, b):
        return line, curve_energy(M, line)
    Mf = _as_metric(M)
    x0 = line[1:-1].ravel()
    res = minimize(_energy_and_grad, x0, args=(Mf, a, b, S), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12})
    if not res.success:
        log.warning("geodesic optimizer stopped early: %s", res.message)
    curve = np.vstack([a, res.x.reshape(S - 1, a.size), b])
    return curve, curve_energy(Mf, curve)


def network_geodesic(metrics, x_star, x, offsets, S=DEFAULT_SEGMENTS):
    """Concatenation of independent per-node geodesics."""
    points, energies = [], []
    for i, M in enumerate(metrics):
        sl = slice(offsets[i], offsets[i + 1])
        curve, E = node_geodesic(M, x_star[sl], x[sl], S)
        points.append(curve)
        energies.append(E)
    return GeodesicCurve(points, S, energies)


# -------------------------------------------------------------- controllers


class NodeController:
    """Differential gain blocks ``K_ij = Y_ij W_j^{-1}`` held by node ``i``.

    ``permitted`` lists node ``i`` and its communication in-neighbours; the
    gain may only read the coordinates of those nodes.
    """

    def __init__(self, node, permitted, Y: dict, W: dict, state_vars: dict, m, S=DEFAULT_SEGMENTS):
        self.node = node
        self.permitted = tuple(sorted(permitted))
        self.Y = dict(Y)
        self.W = {j: W[j] for j in self.Y}
        self.m = m
        self.S = S
        self.local_vars = [v for j in self.permitted for v in state_vars[j]]
        self.offsets = {}
        acc = 0
        for j in self.permitted:
            self.offsets[j] = (acc, acc + len(state_vars[j]))
            acc += len(state_vars[j])
        self.constant_W = all(Wj.is_constant() for Wj in self.W.values())
        self._build()

    def variables(self, j=None):
        blocks = [j] if j is not None else list(self.Y)
        out = set()
        for k in blocks:
            out |= self.Y[k].variables() | self.W[k].variables()
        return out

    def _build(self):
        self._gain_eval = {}
        self._const_K = {}
        for j in self.Y:
            try:
                self._build_block(j)
            except UnboundVariableError as exc:
                # reported by admissibility_audit; evaluating it is an error
                self._gain_eval[j] = ("bad", exc)

    def _build_block(self, j):
        Yj, Wj = self.Y[j], self.W[j]
        if Wj.is_constant():
            Kj = Yj @ PolyMatrix.from_array(np.linalg.inv(Wj.evaluate({})))
            if Kj.is_constant():
                self._const_K[j] = Kj.evaluate({}).reshape(Yj.rows, Yj.cols)
            else:
                self._gain_eval[j] = ("K", PolyEvaluator(
                    [e for row in Kj.entries for e in row], self.local_vars))
        else:
            polys = [e for row in Yj.entries for e in row] + [e for row in Wj.entries for e in row]
            self._gain_eval[j] = ("YW", PolyEvaluator(polys, self.local_vars))

    @property
    def is_linear(self):
        return not self._gain_eval

    def gain(self, j, Z):
        """``K_ij`` at the rows of ``Z`` (local coordinates); shape ``(G, m_i, n_j)``."""
        Z = np.atleast_2d(Z)
        nj = self.Y[j].cols
        if j in self._const_K:
            return np.broadcast_to(self._const_K[j], (Z.shape[0], self.m, nj))
        kind, ev = self._gain_eval[j]
        if kind == "bad":
            raise AdmissibilityError(f"node {self.node}: gain block {j} is not admissible ({ev})")
        vals = ev(Z)
        if kind == "K":
            return vals.reshape(-1, self.m, nj)
        Yv = vals[:, :self.m * nj].reshape(-1, self.m, nj)
        Wv = vals[:, self.m * nj:].reshape(-1, nj, nj)
        return np.einsum("gij,gjk->gik", Yv, np.linalg.inv(Wv))


def gain_from_certificate(model, cert, S=DEFAULT_SEGMENTS):
    """One :class:`NodeController` per node with inputs (``None`` for ``m_i = 0``)."""
    out = []
    state_vars = {j: model.state_vars(j) for j in range(1, model.N + 1)}
    W = {j: cert.W[j - 1] for j in range(1, model.N + 1)}
    for i, spec in enumerate(model.nodes, start=1):
        if spec.m == 0:
            out.append(None)
            continue
        permitted = [i] + model.g_c.in_neighbors(i)
        Y = {j: blk for (a, j), blk in cert.Y.items() if a == i}
        out.append(NodeController(i, permitted, Y, W, state_vars, spec.m, S))
    return out


def node_control(ctrl: NodeController, curves: dict, u_star):
    """``u_i = u_i* + sum_j ∫ K_ij(γ(s)) γ_j'(s) ds`` with ``S`` midpoint panels.

    ``curves`` maps permitted node ``j`` to its samples ``(S + 1, n_j)``.
    """
    u = np.array(u_star, dtype=float).reshape(ctrl.m)
    missing = [j for j in ctrl.permitted if j not in curves]
    if missing:
        raise AdmissibilityError(f"node {ctrl.node} lacks curves of permitted nodes {missing}")
    S = curves[ctrl.node].shape[0] - 1
    if any(curves[j].shape[0] - 1 != S for j in ctrl.permitted):
        raise AdmissibilityError("neighbour curves use different segment counts")
    if ctrl.is_linear:
        for j, K in ctrl._const_K.items():
            u += K @ (curves[j][-1] - curves[j][0])
        return u
    mids = np.hstack([0.5 * (curves[j][1:] + curves[j][:-1]) for j in ctrl.permitted])
    for j in ctrl.Y:
        d = np.diff(curves[j], axis=0)
        K = ctrl.gain(j, mids)
        u += np.einsum("gij,gj->i", K, d)
    return u


def admissibility_audit(controllers, g_c: DirectedGraph, model=None):
    """Static check that every gain block reads only permitted coordinates.

    Returns ``(ok, violations)`` with human-readable violation strings.
    """
    violations = []
    for ctrl in controllers:
        if ctrl is None:
            continue
        i = ctrl.node
        allowed_nodes = {i} | set(g_c.in_neighbors(i))
        for j in ctrl.Y:
            if j not in allowed_nodes:
                violations.append(f"node {i}: gain block K_{i}{j} uses node {j} without edge ({j},{i})")
            for v in sorted(ctrl.variables(j), key=lambda v: v.sort_key):
                if v.kind != "x" or v.node not in allowed_nodes:
                    violations.append(f"node {i}: K_{i}{j} depends on {v}")
    return (not violations), violations


class DistributedController:
    """Evaluates every node's law from the full state, handing each node only
    its permitted slices.

    With constant metrics all geodesics are straight lines, so the per-node
    quadratures collapse to ``u = u* + Kbar (x - x*)`` where ``Kbar`` is the
    midpoint average of ``K`` along the segment; ``fused=True`` evaluates all
    gain polynomials in one vectorized call (numerically the same law as
    :func:`node_control`).
    """

    def __init__(self, model, metrics, controllers, S=DEFAULT_SEGMENTS, fused=True):
        self.model = model
        self.metrics = metrics
        self.controllers = controllers
        self.S = S
        self.offsets = model.state_offsets
        self.constant_metric = all(_is_constant(M) for M in metrics)
        self.linear = self.constant_metric and all(c is None or c.is_linear for c in controllers)
        self.fused = fused and self.constant_metric
        if self.fused:
            self._fuse()

    @classmethod
    def from_certificate(cls, model, cert, S=DEFAULT_SEGMENTS, fused=True):
        metrics = [NodeMetric(W, i).bind(model.state_vars(i)) for i, W in enumerate(cert.W, start=1)]
        return cls(model, metrics, gain_from_certificate(model, cert, S), S, fused)

    def _fuse(self):
        model = self.model
        self._K0 = np.zeros((model.m, model.n))
        rows, cols, polys = [], [], []
        for ctrl in self.controllers:
            if ctrl is None:
                continue
            r0 = model.input_offsets[ctrl.node - 1]
            for j, Yj in ctrl.Y.items():
                c0 = model.state_offsets[j - 1]
                if j in ctrl._const_K:
                    K = ctrl._const_K[j]
                    self._K0[r0:r0 + K.shape[0], c0:c0 + K.shape[1]] += K
                    continue
                Kj = Yj @ PolyMatrix.from_array(np.linalg.inv(self.model_W(j)))
                for r in range(Kj.rows):
                    for c in range(Kj.cols):
                        if not Kj.entries[r][c].is_zero():
                            rows.append(r0 + r)
                            cols.append(c0 + c)
                            polys.append(Kj.entries[r][c])
        self._rows, self._cols = np.array(rows, int), np.array(cols, int)
        self._eval = PolyEvaluator(polys, model.state_vars()) if polys else None
        self._s_mid = (np.arange(self.S) + 0.5) / self.S

    def model_W(self, j):
        return self.metrics[j - 1].W.evaluate({})

    def gain_average(self, x, x_star):
        """Midpoint average of ``K`` along the straight segment from ``x*`` to ``x``."""
        K = self._K0.copy()
        if self._eval is not None:
            pts = x_star[None, :] + self._s_mid[:, None] * (x - x_star)[None, :]
            vals = self._eval(pts).mean(axis=0)
            np.add.at(K, (self._rows, self._cols), vals)
        return K

    def __call__(self, x, x_star, u_star):
        x = np.asarray(x, dtype=float)
        x_star = np.asarray(x_star, dtype=float)
        u = np.array(u_star, dtype=float).copy()
        if self.fused:
            return u + self.gain_average(x, x_star) @ (x - x_star)
        model = self.model
        geo = network_geodesic(self.metrics, x_star, x, self.offsets, self.S)
        for ctrl in self.controllers:
            if ctrl is None:
                continue
            curves = {j: geo.points[j - 1] for j in ctrl.permitted}
            sl = model.uslice(ctrl.node)
            u[sl] = node_control(ctrl, curves, u_star[sl])
        return u
