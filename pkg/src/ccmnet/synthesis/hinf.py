"""Structured state-feedback H-infinity design (bounded-real LMI).

Minimizes ``alpha`` over block-diagonal ``Q > 0`` and structured ``Z`` such
that the closed loop of ``x' = A x + B u + H w``, ``y = C x + D u`` with
``u = Z Q^{-1} x`` has L2 gain below ``alpha``. A second pass fixes a
slightly relaxed ``alpha`` and maximizes the smallest eigenvalue of ``Q``.
"""
from __future__ import annotations

import numpy as np

from ..errors import DesignFailed, DimensionError
from .solver import LMIProblem, lmi_feasibility


def _node_offsets(dims):
    return np.concatenate([[0], np.cumsum(dims)]).astype(int)


def hinf_structured(A, B, H, C, D, pattern, state_dims=None, input_dims=None,
                    alpha_max=1e12, relax=1e-2, q_floor=1e-8, z_weight=1e-6, decay=0.0, settings=None):
    """Return ``{"K", "alpha", "Q", "alpha_fixed"}``.

    ``pattern`` is an iterable of allowed node blocks ``(i, j)`` of ``K``
    (1-based, ``m_i x n_j``). ``state_dims``/``input_dims`` give the node
    partition; by default every node has one state and one input.
    ``decay > 0`` additionally requires the closed loop to decay at that
    rate (the LMI is written for ``A + decay I``).
    """
    A, B = np.atleast_2d(np.asarray(A, float)), np.atleast_2d(np.asarray(B, float))
    H, C, D = (np.atleast_2d(np.asarray(M, float)) for M in (H, C, D))
    n, m = A.shape[0], B.shape[1]
    nw, ny = H.shape[1], C.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or H.shape[0] != n or C.shape[1] != n or D.shape != (ny, m):
        raise DimensionError("inconsistent H-infinity data dimensions")
    state_dims = list(state_dims) if state_dims is not None else [1] * n
    input_dims = list(input_dims) if input_dims is not None else [1] * m
    if sum(state_dims) != n or sum(input_dims) != m or len(state_dims) != len(input_dims):
        raise DimensionError("node partition does not match the matrices")
    xo, uo = _node_offsets(state_dims), _node_offsets(input_dims)
    A = A + decay * np.eye(n)
    # normalize the performance output; alpha scales back by the same factor
    sigma = 1.0 / max(1.0, np.abs(C).max(initial=0.0), np.abs(D).max(initial=0.0))
    C, D = C * sigma, D * sigma

    # decision layout: Q block entries (upper triangles), Z allowed entries, alpha, t
    q_vars, z_vars = [], []
    for i, ni in enumerate(state_dims):
        for r in range(ni):
            for c in range(r, ni):
                q_vars.append((xo[i] + r, xo[i] + c))
    for i, j in sorted(pattern):
        for r in range(input_dims[i - 1]):
            for c in range(state_dims[j - 1]):
                z_vars.append((uo[i - 1] + r, xo[j - 1] + c))
    nq, nz = len(q_vars), len(z_vars)
    ia, it = nq + nz, nq + nz + 1
    P = nq + nz + 2
    size = n + nw + ny

    def unit(rows, cols, r, c, sym):
        E = np.zeros((rows, cols))
        E[r, c] = 1.0
        if sym and r != c:
            E[c, r] = 1.0
        return E

    S0 = np.zeros((size, size))
    S0[:n, n:n + nw] = H
    S0[n:n + nw, :n] = H.T
    coeffs = {}
    for k, (r, c) in enumerate(q_vars):
        Eq = unit(n, n, r, c, True)
        S = np.zeros((size, size))
        AQ = A @ Eq
        S[:n, :n] = AQ + AQ.T
        CQ = C @ Eq
        S[n + nw:, :n] = CQ
        S[:n, n + nw:] = CQ.T
        coeffs[k] = S
    for k, (r, c) in enumerate(z_vars):
        Ez = unit(m, n, r, c, False)
        S = np.zeros((size, size))
        BZ = B @ Ez
        S[:n, :n] = BZ + BZ.T
        DZ = D @ Ez
        S[n + nw:, :n] = DZ
        S[:n, n + nw:] = DZ.T
        coeffs[nq + k] = S
    Sa = np.zeros((size, size))
    Sa[n:, n:] = -np.eye(nw + ny)
    coeffs[ia] = Sa

    def q_lmi(problem, with_t):
        # t I - Q <= -q_floor I  (or Q >= q_floor I when t is unused)
        cq = {}
        for k, (r, c) in enumerate(q_vars):
            cq[k] = -unit(n, n, r, c, True)
        if with_t:
            cq[it] = np.eye(n)
        problem.add_lmi(np.zeros((n, n)), cq, 0.0 if with_t else q_floor, "Q")

    prob = LMIProblem(P)
    prob.add_lmi(S0, coeffs, 0.0, "bounded-real")
    q_lmi(prob, False)
    prob.bound(ia, lo=0.0, hi=alpha_max * sigma)
    prob.bound(it, lo=0.0, hi=0.0)
    res = lmi_feasibility(prob, minimize=ia, settings=settings)
    if not res.ok:
        raise DesignFailed(f"no structured controller with alpha <= {alpha_max:g} ({res.solver_status})")
    alpha = float(res.x[ia])
    if alpha > alpha_max * sigma * (1 - 1e-9):
        raise DesignFailed(f"optimal alpha reaches the bound {alpha_max:g}")

    alpha_fixed = alpha * (1.0 + relax) + 1e-12
    prob2 = LMIProblem(P)
    prob2.add_lmi(S0, coeffs, 0.0, "bounded-real")
    q_lmi(prob2, True)
    prob2.bound(ia, lo=alpha_fixed, hi=alpha_fixed)
    prob2.bound(it, lo=q_floor)
    prob2.linear = np.zeros(P)
    prob2.linear[it] = -1.0
    # a light penalty on Z keeps the gain bounded when the bound leaves it free
    prob2.quad_weights = np.zeros(P)
    prob2.quad_weights[nq:nq + nz] = z_weight
    res2 = lmi_feasibility(prob2, settings=settings)
    x = res2.x if res2.ok else res.x
    if not res2.ok:
        alpha_fixed = alpha

    Q = np.zeros((n, n))
    for k, (r, c) in enumerate(q_vars):
        Q[r, c] = Q[c, r] = x[k]
    Z = np.zeros((m, n))
    for k, (r, c) in enumerate(z_vars):
        Z[r, c] = x[nq + k]
    K = np.linalg.solve(Q.T, Z.T).T
    # exact zeros outside the pattern (Q^{-1} is block diagonal)
    mask = np.zeros((m, n), bool)
    for i, j in pattern:
        mask[uo[i - 1]:uo[i], xo[j - 1]:xo[j]] = True
    K[~mask] = 0.0
    return {"K": K, "alpha": alpha / sigma, "alpha_fixed": alpha_fixed / sigma, "Q": Q,
            "output_scale": sigma}
