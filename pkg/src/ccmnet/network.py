"""Networked polynomial control systems and their differential dynamics."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError
from .graphs import DirectedGraph
from .poly import PolyEvaluator, PolyMatrix, Polynomial, jacobian, uvar, xvar


@dataclass(frozen=True)
class NodeSpec:
    """Local dynamics ``x_i' = f_i(x_i, x_breve_i) + b_i(x_i, x_breve_i) u_i``."""

    n: int
    m: int
    f: PolyMatrix
    b: PolyMatrix

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise DimensionError("node needs n >= 1 and m >= 0")
        if self.f.shape != (self.n, 1):
            raise DimensionError(f"f has shape {self.f.shape}, expected ({self.n}, 1)")
        if self.b.shape != (self.n, self.m):
            raise DimensionError(f"b has shape {self.b.shape}, expected ({self.n}, {self.m})")


@dataclass(frozen=True)
class NetworkModel:
    nodes: tuple
    g_p: DirectedGraph
    g_c: DirectedGraph
    name: str = "network"
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        N = len(self.nodes)
        if self.g_p.num_nodes != N or self.g_c.num_nodes != N:
            raise DimensionError(
                f"graphs have {self.g_p.num_nodes}/{self.g_c.num_nodes} nodes, model has {N}"
            )

    @property
    def N(self):
        return len(self.nodes)

    @cached_property
    def state_offsets(self):
        return np.concatenate([[0], np.cumsum([s.n for s in self.nodes])]).astype(int)

    @cached_property
    def input_offsets(self):
        return np.concatenate([[0], np.cumsum([s.m for s in self.nodes])]).astype(int)

    @property
    def n(self):
        return int(self.state_offsets[-1])

    @property
    def m(self):
        return int(self.input_offsets[-1])

    def xslice(self, i):
        return slice(self.state_offsets[i - 1], self.state_offsets[i])

    def uslice(self, i):
        return slice(self.input_offsets[i - 1], self.input_offsets[i])

    def state_vars(self, i=None):
        if i is None:
            return [v for k in range(1, self.N + 1) for v in self.state_vars(k)]
        return [xvar(i, k) for k in range(1, self.nodes[i - 1].n + 1)]

    def input_vars(self, i=None):
        if i is None:
            return [v for k in range(1, self.N + 1) for v in self.input_vars(k)]
        return [uvar(i, k) for k in range(1, self.nodes[i - 1].m + 1)]

    def breve(self, i):
        """Physical in-neighbors of node ``i`` (ascending)."""
        return self.g_p.in_neighbors(i)

    def vec(self, i):
        """Communication in-neighbors of node ``i`` (ascending)."""
        return self.g_c.in_neighbors(i)

    def fingerprint(self):
        h = hashlib.sha256()
        for s in self.nodes:
            h.update(f"{s.n},{s.m};".encode())
            for row in s.f.entries + s.b.entries:
                for e in row:
                    h.update((str(e) + "|").encode())
        h.update(self.g_p.fingerprint().encode())
        h.update(self.g_c.fingerprint().encode())
        return h.hexdigest()[:16]

    # numeric vector field ------------------------------------------------

    @cached_property
    def _field_evaluator(self):
        f, B = stack_dynamics(self)
        polys = [f.entries[r][0] for r in range(self.n)]
        polys += [B.entries[r][c] for r in range(self.n) for c in range(self.m)]
        return PolyEvaluator(polys, self.state_vars())

    def vector_field(self, x, u):
        """``f(x) + B(x) u`` for one state (1-D) or a batch (rows)."""
        x = np.asarray(x, dtype=float)
        vals = self._field_evaluator(np.atleast_2d(x))
        n, m = self.n, self.m
        fx = vals[:, :n]
        if m:
            Bx = vals[:, n:].reshape(-1, n, m)
            out = fx + np.einsum("gij,gj->gi", Bx, np.atleast_2d(u))
        else:
            out = fx
        return out[0] if x.ndim == 1 else out

    def input_matrix(self, x):
        vals = self._field_evaluator(np.atleast_2d(np.asarray(x, dtype=float)))
        return vals[0, self.n:].reshape(self.n, self.m) if self.m else np.zeros((self.n, 0))


@dataclass(frozen=True)
class StackedPoint:
    x: np.ndarray
    u: np.ndarray

    @classmethod
    def make(cls, model: NetworkModel, x, u=None):
        x = np.asarray(x, dtype=float).ravel()
        u = np.zeros(model.m) if u is None else np.asarray(u, dtype=float).ravel()
        if x.size != model.n or u.size != model.m:
            raise DimensionError(f"point has dims ({x.size}, {u.size}), model has ({model.n}, {model.m})")
        return cls(x, u)

    def assignment(self, model: NetworkModel):
        point = dict(zip(model.state_vars(), self.x))
        point.update(zip(model.input_vars(), self.u))
        return point


def stack_dynamics(model: NetworkModel):
    """Stacked drift ``f`` (n x 1) and block-diagonal input matrix ``B`` (n x m)."""
    f_rows = [row for s in model.nodes for row in s.f.entries]
    f = PolyMatrix(f_rows, model.n, 1)
    B = PolyMatrix.zeros(model.n, model.m)
    for i, s in enumerate(model.nodes, start=1):
        r0, c0 = model.state_offsets[i - 1], model.input_offsets[i - 1]
        for r in range(s.n):
            for c in range(s.m):
                B.entries[r0 + r][c0 + c] = s.b.entries[r][c]
    return f, B


def closed_field(model: NetworkModel) -> PolyMatrix:
    """``f + B u`` as a polynomial column in state and input variables."""
    f, B = stack_dynamics(model)
    u = PolyMatrix.column([Polynomial.var(v) for v in model.input_vars()])
    return f + (B @ u) if model.m else f


def differential_jacobian(model: NetworkModel) -> PolyMatrix:
    """Symbolic ``A(x, u) = d(f + B u)/dx``."""
    return jacobian(closed_field(model), model.state_vars())


def differential_matrices(model: NetworkModel, p: StackedPoint):
    """Numeric ``(A, B)`` of the variational dynamics at ``p``."""
    if p.x.size != model.n or p.u.size != model.m:
        raise DimensionError("point dimensions do not match the model")
    point = p.assignment(model)
    A = differential_jacobian(model).evaluate(point)
    _, B = stack_dynamics(model)
    return A, B.evaluate(point).reshape(model.n, model.m)


def validate_model(model: NetworkModel) -> list[str]:
    """List violations; an empty list means the model is consistent."""
    problems = []
    for graph, label in ((model.g_p, "physical"), (model.g_c, "communication")):
        for i in range(1, model.N + 1):
            if not graph.has_edge(i, i):
                problems.append(f"{label} graph lacks self-loop at node {i}")
    for i, s in enumerate(model.nodes, start=1):
        if s.n < 1:
            problems.append(f"node {i}: state dimension must be positive")
        allowed = {i} | set(model.breve(i))
        used = s.f.variables() | s.b.variables()
        for v in sorted(used, key=lambda v: v.sort_key):
            if v.kind != "x":
                problems.append(f"node {i}: dynamics reference non-state variable {v}")
            elif not 1 <= v.node <= model.N:
                problems.append(f"node {i}: {v} refers to a node outside 1..{model.N}")
            elif v.node not in allowed:
                problems.append(f"node {i}: dynamics reference {v} but ({v.node},{i}) is not a physical edge")
            elif v.comp > model.nodes[v.node - 1].n:
                problems.append(f"node {i}: {v} exceeds the state dimension of node {v.node}")
    return problems
