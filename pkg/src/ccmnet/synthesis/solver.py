"""Affine LMI feasibility / minimization over a real decision vector.

Each constraint is ``S(d) = S0 + sum_j d_j S_j <= -margin * I`` for a
symmetric ``S``. Problems are handed to Clarabel's conic interior-point
solver in its native ``A d + s = b, s in K`` form.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


def svec_index(c):
    """Row/col index arrays and scale of the column-major upper triangle."""
    rows, cols = [], []
    for j in range(c):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def svec_position(r, c):
    r, c = np.minimum(r, c), np.maximum(r, c)
    return c * (c + 1) // 2 + r


@dataclass
class LMIBatch:
    """``count`` constraints of size ``size`` sharing one sparse layout.

    ``const`` has shape ``(count, size, size)``; the coefficient of decision
    ``param[t]`` at entry ``(row[t], col[t])`` (upper triangle, row <= col)
    of constraint ``sample[t]`` is ``value[t]``.
    """

    size: int
    const: np.ndarray
    sample: np.ndarray
    param: np.ndarray
    row: np.ndarray
    col: np.ndarray
    value: np.ndarray
    margin: float = 0.0
    label: str = ""

    @property
    def count(self):
        return self.const.shape[0]


@dataclass
class LMIProblem:
    num_decisions: int
    batches: list = field(default_factory=list)
    eq_rows: list = field(default_factory=list)
    lower: dict = field(default_factory=dict)
    upper: dict = field(default_factory=dict)
    quad_weights: np.ndarray | None = None
    linear: np.ndarray | None = None

    def add_lmi(self, S0, coeffs, margin=0.0, label=""):
        """Add one dense constraint ``S0 + sum_j d_j coeffs[j] <= -margin I``.

        ``coeffs`` maps decision index -> symmetric matrix.
        """
        S0 = np.atleast_2d(np.asarray(S0, dtype=float))
        c = S0.shape[0]
        sample, param, row, col, value = [], [], [], [], []
        iu = np.triu_indices(c)
        for j, Sj in coeffs.items():
            Sj = np.atleast_2d(np.asarray(Sj, dtype=float))
            vals = Sj[iu]
            nz = vals != 0
            k = int(nz.sum())
            sample += [0] * k
            param += [j] * k
            row += list(iu[0][nz])
            col += list(iu[1][nz])
            value += list(vals[nz])
        self.batches.append(
            LMIBatch(c, S0[None], np.array(sample, int), np.array(param, int), np.array(row, int),
                     np.array(col, int), np.array(value, float), margin, label)
        )

    def add_equality(self, coeffs: dict, rhs: float):
        self.eq_rows.append((dict(coeffs), float(rhs)))

    def bound(self, j, lo=None, hi=None):
        if lo is not None:
            self.lower[j] = float(lo)
        if hi is not None:
            self.upper[j] = float(hi)


@dataclass
class LMIResult:
    status: str  # "feasible", "infeasible" or "inconclusive"
    x: np.ndarray | None
    objective: float | None = None
    solver_status: str = ""
    iterations: int = 0

    @property
    def ok(self):
        return self.status == "feasible"


def _batch_to_sparse(batch: LMIBatch, row_offset):
    c = batch.size
    tri = c * (c + 1) // 2
    r_idx, c_idx, scale = svec_index(c)
    const = batch.const[:, r_idx, c_idx] * scale  # (count, tri)
    b = -(const.reshape(-1))
    diag = r_idx == c_idx
    b -= np.tile(np.where(diag, batch.margin, 0.0), batch.count)
    pos = svec_position(batch.row, batch.col)
    w = np.where(batch.row == batch.col, 1.0, SQRT2)
    rows = row_offset + batch.sample * tri + pos
    A = (rows, batch.param, batch.value * w)
    return A, b, [clarabel.PSDTriangleConeT(c)] * batch.count


def _scalar_lmi_rows(batch: LMIBatch, row_offset):
    """1x1 constraints become nonnegative-cone rows."""
    b = -batch.const[:, 0, 0] - batch.margin
    rows = row_offset + batch.sample
    return (rows, batch.param, batch.value), b


def lmi_feasibility(problem: LMIProblem, minimize=None, settings=None) -> LMIResult:
    """Solve the LMI system.

    ``minimize`` may be a decision index (minimize that scalar); otherwise the
    problem's quadratic/linear objective is used (zero objective = pure
    feasibility, where the interior-point solver returns a central point).
    """
    n = problem.num_decisions
    triplets = []
    b_parts = []
    zero_rows = 0
    nonneg_rows = 0
    psd_cones = []
    offset = 0

    # equalities first (ZeroCone)
    for coeffs, rhs in problem.eq_rows:
        for j, v in coeffs.items():
            triplets.append((np.array([offset]), np.array([j]), np.array([v])))
        b_parts.append(np.array([rhs]))
        offset += 1
        zero_rows += 1

    # scalar constraints (NonnegativeCone): bounds and 1x1 LMIs
    for j, lo in sorted(problem.lower.items()):
        triplets.append((np.array([offset]), np.array([j]), np.array([-1.0])))
        b_parts.append(np.array([-lo]))
        offset += 1
        nonneg_rows += 1
    for j, hi in sorted(problem.upper.items()):
        triplets.append((np.array([offset]), np.array([j]), np.array([1.0])))
        b_parts.append(np.array([hi]))
        offset += 1
        nonneg_rows += 1
    for batch in problem.batches:
        if batch.size == 1:
            A, b = _scalar_lmi_rows(batch, offset)
            triplets.append(A)
            b_parts.append(b)
            offset += batch.count
            nonneg_rows += batch.count

    for batch in problem.batches:
        if batch.size > 1:
            A, b, cones = _batch_to_sparse(batch, offset)
            triplets.append(A)
            b_parts.append(b)
            offset += b.size
            psd_cones += cones

    if offset == 0:
        return LMIResult("feasible", np.zeros(n), 0.0, "trivial")

    rows = np.concatenate([t[0] for t in triplets]) if triplets else np.zeros(0, int)
    cols = np.concatenate([t[1] for t in triplets]) if triplets else np.zeros(0, int)
    vals = np.concatenate([t[2] for t in triplets]) if triplets else np.zeros(0)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(offset, n))
    A.sum_duplicates()
    b = np.concatenate(b_parts)

    q = np.zeros(n) if problem.linear is None else np.asarray(problem.linear, float).copy()
    if minimize is not None:
        q = np.zeros(n)
        q[minimize] = 1.0
        P = sp.csc_matrix((n, n))
    elif problem.quad_weights is not None:
        P = sp.diags(np.asarray(problem.quad_weights, float)).tocsc()
    else:
        P = sp.csc_matrix((n, n))
    P = sp.triu(P).tocsc()

    cones = []
    if zero_rows:
        cones.append(clarabel.ZeroConeT(zero_rows))
    if nonneg_rows:
        cones.append(clarabel.NonnegativeConeT(nonneg_rows))
    cones += psd_cones

    opts = clarabel.DefaultSettings()
    opts.verbose = False
    opts.max_iter = 200
    for key, val in (settings or {}).items():
        setattr(opts, key, val)
    solver = clarabel.DefaultSolver(P, q, A, b, cones, opts)
    sol = solver.solve()
    status = str(sol.status)
    log.debug("clarabel: %s after %d iterations", status, sol.iterations)
    x = np.array(sol.x)
    if status in ("Solved", "AlmostSolved"):
        return LMIResult("feasible", x, float(sol.obj_val), status, sol.iterations)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return LMIResult("infeasible", None, None, status, sol.iterations)
    return LMIResult("inconclusive", x if x.size == n else None, None, status, sol.iterations)


def max_violation(problem: LMIProblem, x):
    """Largest ``lambda_max(S(x)) + margin`` over all LMIs (<= 0 means satisfied)."""
    worst = -np.inf
    for batch in problem.batches:
        S = batch.const.copy()
        contrib = batch.value * x[batch.param]
        np.add.at(S, (batch.sample, batch.row, batch.col), contrib)
        off = batch.row != batch.col
        np.add.at(S, (batch.sample[off], batch.col[off], batch.row[off]), contrib[off])
        worst = max(worst, float(np.linalg.eigvalsh(S)[:, -1].max() + batch.margin))
    for coeffs, rhs in problem.eq_rows:
        worst = max(worst, abs(sum(v * x[j] for j, v in coeffs.items()) - rhs))
    return worst
