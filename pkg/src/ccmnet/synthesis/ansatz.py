"""Decision-variable templates for the dual metric W and the gain Y."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graphs import DirectedGraph
from ..poly import PolyMatrix, Polynomial, Variable, monomials_upto, pvar, uvar, xvar


class ParamRegistry:
    """Hands out decision indices and remembers what each one means."""

    def __init__(self):
        self.labels = []

    def new(self, label):
        self.labels.append(label)
        return pvar(len(self.labels) - 1)

    def __len__(self):
        return len(self.labels)

    def indices(self, prefix):
        return [k for k, lab in enumerate(self.labels) if lab[0] == prefix]


@dataclass
class Region:
    """Box of admissible values for state/input coordinates.

    ``intervals`` overrides ``default_x`` / ``default_u``. Infinite bounds
    mark unconstrained coordinates.
    """

    intervals: dict = field(default_factory=dict)
    default_x: tuple = (-np.inf, np.inf)
    default_u: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        for v, (lo, hi) in self.intervals.items():
            if lo > hi:
                raise ValueError(f"empty interval for {v}: [{lo}, {hi}]")

    def interval(self, v: Variable):
        if v in self.intervals:
            return self.intervals[v]
        return self.default_x if v.kind == "x" else self.default_u

    def is_bounded(self, v):
        lo, hi = self.interval(v)
        return np.isfinite(lo) and np.isfinite(hi)

    def points(self, v, density):
        lo, hi = self.interval(v)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"cannot grid unbounded coordinate {v}")
        if density == 1 or lo == hi:
            return np.array([(lo + hi) / 2.0])
        return np.linspace(lo, hi, density)

    def contains(self, v, value, tol=1e-9):
        lo, hi = self.interval(v)
        return lo - tol <= value <= hi + tol

    def to_json(self, model):
        out = {}
        for v in model.state_vars() + model.input_vars():
            lo, hi = self.interval(v)
            out[str(v)] = [_enc(lo), _enc(hi)]
        return out

    @classmethod
    def from_json(cls, data):
        from ..poly import parse_poly

        intervals = {}
        for name, (lo, hi) in data.items():
            (v,) = parse_poly(name).variables()
            intervals[v] = (_dec(lo), _dec(hi))
        return cls(intervals)


def _enc(x):
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


def _dec(x):
    return float(x)


@dataclass
class MetricAnsatz:
    """Block-diagonal dual metric: block ``i`` is an ``n_i x n_i`` symmetric
    polynomial matrix in ``x_i`` whose coefficients are decision variables."""

    blocks: list
    degree: int
    w_low: float
    w_high: float

    @classmethod
    def build(cls, model, registry: ParamRegistry, degree=0, w_low=1e-2, w_high=1e2):
        if not 0 < w_low <= w_high:
            raise ValueError("need 0 < w_low <= w_high")
        blocks = []
        for i, spec in enumerate(model.nodes, start=1):
            monos = monomials_upto(model.state_vars(i), degree)
            entries = [[None] * spec.n for _ in range(spec.n)]
            for r in range(spec.n):
                for c in range(r, spec.n):
                    terms = {}
                    for mono in monos:
                        p = registry.new(("W", i, r, c, mono))
                        terms[mono + ((p, 1),)] = 1.0
                    poly = Polynomial(terms)
                    entries[r][c] = entries[c][r] = poly
            blocks.append(PolyMatrix(entries, spec.n, spec.n))
        return cls(blocks, degree, w_low, w_high)


def xi_pattern(g_c: DirectedGraph, model):
    """Allowed gain blocks and the variables each may depend on.

    Block ``(i, j)`` of ``Y`` multiplies ``delta x_j`` in node ``i``'s input,
    so it is present iff node ``j`` reports to node ``i`` (edge ``(j, i)``);
    it may depend on ``x_i`` and the communicated states. Nodes without
    inputs get no blocks.
    """
    pattern = {}
    for i in range(1, g_c.num_nodes + 1):
        if model.nodes[i - 1].m == 0:
            continue
        senders = [i] + g_c.in_neighbors(i)
        variables = [v for j in sorted(senders) for v in model.state_vars(j)]
        for j in sorted(senders):
            pattern[(i, j)] = variables
    return pattern


@dataclass
class GainAnsatz:
    """Structured gain: ``blocks[(i, j)]`` is an ``m_i x n_j`` polynomial matrix."""

    blocks: dict
    pattern: dict
    degree: int

    @classmethod
    def build(cls, model, registry: ParamRegistry, degree=2, region: Region | None = None,
              bounded_only=True, zero=False):
        """``bounded_only`` drops coordinates that are unbounded in ``region``
        from the polynomial support (the synthesis matrix must only depend on
        gridded coordinates)."""
        pattern = xi_pattern(model.g_c, model)
        blocks = {}
        if zero:
            return cls(blocks, pattern, degree)
        for (i, j), variables in pattern.items():
            if bounded_only and region is not None:
                variables = [v for v in variables if region.is_bounded(v)]
            monos = monomials_upto(variables, degree)
            mi, nj = model.nodes[i - 1].m, model.nodes[j - 1].n
            entries = []
            for r in range(mi):
                row = []
                for c in range(nj):
                    terms = {}
                    for mono in monos:
                        p = registry.new(("Y", i, j, r, c, mono))
                        terms[mono + ((p, 1),)] = 1.0
                    row.append(Polynomial(terms))
                entries.append(row)
            blocks[(i, j)] = PolyMatrix(entries, mi, nj)
        return cls(blocks, pattern, degree)


def resolve_blocks(blocks, values):
    """Substitute decision values into a list/dict of polynomial blocks."""
    if isinstance(blocks, dict):
        return {k: b.substitute_params(values) for k, b in blocks.items()}
    return [b.substitute_params(values) for b in blocks]


__all__ = [
    "ParamRegistry",
    "Region",
    "MetricAnsatz",
    "GainAnsatz",
    "xi_pattern",
    "resolve_blocks",
    "xvar",
    "uvar",
]
