"""The pointwise synthesis matrix, its clique splitting, and sampled evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import CoverageError, DimensionError
from ..graphs import CliqueTree
from ..network import NetworkModel, StackedPoint
from ..poly import MonomialBasis, PolyMatrix, Polynomial, _mono_key, directional_matrix_derivative, jacobian
from .solver import LMIBatch

# ----------------------------------------------------------- symbolic blocks


def node_fields(model: NetworkModel):
    """Per-node ``f_i + b_i u_i`` as polynomial columns."""
    out = []
    for i, spec in enumerate(model.nodes, start=1):
        F = spec.f
        if spec.m:
            u = PolyMatrix.column([Polynomial.var(v) for v in model.input_vars(i)])
            F = F + spec.b @ u
        out.append(F)
    return out


def jacobian_blocks(model: NetworkModel):
    """Nonzero blocks ``A_ab = d(f_a + b_a u_a)/dx_b``."""
    fields = node_fields(model)
    blocks = {}
    for a in range(1, model.N + 1):
        for b in [a] + model.breve(a):
            J = jacobian(fields[a - 1], model.state_vars(b))
            if not J.is_zero():
                blocks[(a, b)] = J
    return blocks


def synthesis_blocks(model: NetworkModel, W_blocks, Y_blocks, lam, A_blocks=None):
    """Upper block triangle of
    ``T = -dW/dt + A W + W A^T + B Y + (B Y)^T + 2 lam W``.

    ``W_blocks`` is the list of diagonal blocks, ``Y_blocks`` a dict
    ``(i, j) -> m_i x n_j``. Entries may carry decision variables, in which
    case the result is affine in them. Returns ``{(a, b): PolyMatrix}`` for
    ``a <= b`` with structurally nonzero blocks only.
    """
    if A_blocks is None:
        A_blocks = jacobian_blocks(model)
    fields = node_fields(model)
    pairs = {(a, a) for a in range(1, model.N + 1)}
    for a, b in list(A_blocks) + list(Y_blocks):
        pairs.add((min(a, b), max(a, b)))
    out = {}
    for a, b in sorted(pairs):
        na, nb = model.nodes[a - 1].n, model.nodes[b - 1].n
        blk = PolyMatrix.zeros(na, nb)
        if (a, b) in A_blocks:
            blk = blk + A_blocks[(a, b)] @ W_blocks[b - 1]
        if (b, a) in A_blocks:
            blk = blk + W_blocks[a - 1] @ A_blocks[(b, a)].T()
        if (a, b) in Y_blocks:
            blk = blk + model.nodes[a - 1].b @ Y_blocks[(a, b)]
        if (b, a) in Y_blocks:
            blk = blk + (model.nodes[b - 1].b @ Y_blocks[(b, a)]).T()
        if a == b:
            Wa = W_blocks[a - 1]
            blk = blk + Wa.scale(2.0 * lam)
            if not Wa.variables() <= _param_only(Wa):
                blk = blk - directional_matrix_derivative(Wa, fields[a - 1], model.state_vars(a))
        if not blk.is_zero() or a == b:
            out[(a, b)] = blk
    return out


def _param_only(M: PolyMatrix):
    return frozenset(v for v in M.variables() if v.kind == "p")


def blocks_to_full(model: NetworkModel, blocks) -> PolyMatrix:
    off = model.state_offsets
    full = PolyMatrix.zeros(model.n, model.n)
    for (a, b), blk in blocks.items():
        for r in range(blk.rows):
            for c in range(blk.cols):
                e = blk.entries[r][c]
                full.entries[off[a - 1] + r][off[b - 1] + c] = e
                full.entries[off[b - 1] + c][off[a - 1] + r] = e
    return full


def split_full_W(model, W: PolyMatrix):
    off = model.state_offsets
    return [
        PolyMatrix([row[off[i]:off[i + 1]] for row in W.entries[off[i]:off[i + 1]]])
        for i in range(model.N)
    ]


def split_full_Y(model, Y: PolyMatrix):
    xo, uo = model.state_offsets, model.input_offsets
    out = {}
    for i in range(1, model.N + 1):
        for j in range(1, model.N + 1):
            if model.nodes[i - 1].m == 0:
                continue
            blk = PolyMatrix([row[xo[j - 1]:xo[j]] for row in Y.entries[uo[i - 1]:uo[i]]])
            if not blk.is_zero():
                out[(i, j)] = blk
    return out


def assemble_T(model: NetworkModel, W, Y, lam, p: StackedPoint | None = None):
    """Synthesis matrix at ``p`` (numeric), or symbolically when ``p`` is None.

    ``W`` may be a full block-diagonal PolyMatrix or a list of node blocks;
    ``Y`` a full ``m x n`` PolyMatrix or a dict of node blocks.
    """
    if isinstance(W, PolyMatrix):
        if W.shape != (model.n, model.n):
            raise DimensionError(f"W has shape {W.shape}, expected {(model.n, model.n)}")
        W = split_full_W(model, W)
    if isinstance(Y, PolyMatrix):
        if Y.shape != (model.m, model.n):
            raise DimensionError(f"Y has shape {Y.shape}, expected {(model.m, model.n)}")
        Y = split_full_Y(model, Y)
    full = blocks_to_full(model, synthesis_blocks(model, W, Y, lam))
    if p is None:
        return full
    if p.x.size != model.n or p.u.size != model.m:
        raise DimensionError("point dimensions do not match the model")
    return full.evaluate(p.assignment(model))


# ------------------------------------------------------------ chordal split


@dataclass(frozen=True)
class CliquePiece:
    """One clique of the split: member nodes and the weight of each block."""

    nodes: tuple
    weights: dict


def chordal_split(pattern, tree: CliqueTree):
    """Allocate the blocks of a symmetric block pattern to cliques.

    ``pattern`` holds node pairs ``(a, b)``, ``a <= b``, of structurally
    nonzero blocks. Diagonal blocks are shared equally among the cliques that
    contain the node; off-diagonal blocks go to the lowest-index clique
    containing both endpoints.
    """
    pieces = [dict() for _ in tree.cliques]
    for a, b in sorted(pattern):
        if a == b:
            holders = tree.cliques_containing(a)
            if not holders:
                raise CoverageError(f"node {a} is in no clique")
            for k in holders:
                pieces[k][(a, a)] = 1.0 / len(holders)
        else:
            holders = [k for k, c in enumerate(tree.cliques) if a in c and b in c]
            if not holders:
                raise CoverageError(f"block ({a}, {b}) is not covered by any clique")
            pieces[holders[0]][(a, b)] = 1.0
    return [CliquePiece(tree.selectors[k], pieces[k]) for k in range(len(tree))]


def _offsets(dims, nodes):
    out, acc = {}, 0
    for v in nodes:
        out[v] = acc
        acc += dims[v - 1]
    return out, acc


def split_matrix(T, dims, pieces):
    """Numeric ``F_k`` of a full matrix ``T`` (node block sizes ``dims``)."""
    goff, _ = _offsets(dims, range(1, len(dims) + 1))
    out = []
    for piece in pieces:
        loff, size = _offsets(dims, piece.nodes)
        F = np.zeros((size, size))
        for (a, b), w in piece.weights.items():
            blk = w * T[goff[a]:goff[a] + dims[a - 1], goff[b]:goff[b] + dims[b - 1]]
            F[loff[a]:loff[a] + dims[a - 1], loff[b]:loff[b] + dims[b - 1]] = blk
            if a != b:
                F[loff[b]:loff[b] + dims[b - 1], loff[a]:loff[a] + dims[a - 1]] = blk.T
        out.append(F)
    return out


def selector(dims, nodes):
    """The 0/1 matrix ``E_k`` keeping the row blocks of ``nodes``."""
    goff, n = _offsets(dims, range(1, len(dims) + 1))
    rows = [goff[v] + r for v in nodes for r in range(dims[v - 1])]
    E = np.zeros((len(rows), n))
    E[np.arange(len(rows)), rows] = 1.0
    return E


def reconstruct(Fs, dims, pieces):
    n = int(sum(dims))
    T = np.zeros((n, n))
    for F, piece in zip(Fs, pieces):
        E = selector(dims, piece.nodes)
        T += E.T @ F @ E
    return T


# ------------------------------------------------------- compiled cliques


class CliqueLMI:
    """A clique matrix ``F_k(z; d)`` compiled for sampled evaluation.

    ``z`` ranges over the state/input coordinates that actually occur in the
    clique (``self.variables``); ``d`` is the global decision vector.
    """

    def __init__(self, model, blocks, piece: CliquePiece, index=0):
        self.index = index
        self.nodes = piece.nodes
        dims = [s.n for s in model.nodes]
        loff, size = _offsets(dims, piece.nodes)
        self.size = size
        entries = {}
        for (a, b), w in piece.weights.items():
            blk = blocks[(a, b)]
            for r in range(blk.rows):
                for c in range(blk.cols):
                    R, C = loff[a] + r, loff[b] + c
                    if R > C:
                        R, C = C, R
                    e = blk.entries[r][c]
                    if e.is_zero():
                        continue
                    e = e * w
                    entries[(R, C)] = entries.get((R, C), Polynomial()) + e
        self._compile(entries)

    @classmethod
    def from_entries(cls, size, entries, index=0, nodes=()):
        obj = cls.__new__(cls)
        obj.index = index
        obj.nodes = tuple(nodes)
        obj.size = size
        obj._compile(entries)
        return obj

    def _compile(self, entries):
        monos, variables = set(), set()
        rows = []
        for (R, C), poly in entries.items():
            for param, part in poly.split_linear().items():
                pidx = -1 if param is None else param.comp
                for mono, val in part.items():
                    monos.add(mono)
                    variables.update(v for v, _ in mono)
                    rows.append((mono, pidx, R, C, val))
        self.variables = sorted(variables, key=lambda v: v.sort_key)
        mono_list = sorted(monos, key=_mono_key)
        self.basis = MonomialBasis(self.variables, mono_list)
        midx = {m: k for k, m in enumerate(mono_list)}
        M = len(mono_list)
        self.num_monomials = M
        c = self.size
        const = np.zeros((M, c, c))
        keys = {}
        qm, qk, qv = [], [], []
        for mono, pidx, R, C, val in rows:
            if pidx < 0:
                const[midx[mono], R, C] += val
                if R != C:
                    const[midx[mono], C, R] += val
            else:
                key = keys.setdefault((pidx, R, C), len(keys))
                qm.append(midx[mono])
                qk.append(key)
                qv.append(val)
        self.const_coef = const.reshape(M, c * c)
        self.q_param = np.array([k[0] for k in keys], dtype=int)
        self.q_row = np.array([k[1] for k in keys], dtype=int)
        self.q_col = np.array([k[2] for k in keys], dtype=int)
        # monomial -> (param, entry) coefficients
        self.q_coef = sp.csr_matrix((np.array(qv, float), (np.array(qm, int), np.array(qk, int))),
                                    shape=(M, len(keys)))
        self.params = np.unique(self.q_param)

    def coefficient_matrix(self, d):
        """``(M, c*c)`` monomial coefficients at decision ``d``."""
        c = self.size
        C = self.const_coef.copy()
        if self.q_param.size:
            vals = self.q_coef.multiply(d[self.q_param][None, :]).tocoo()
            r, col = self.q_row[vals.col], self.q_col[vals.col]
            np.add.at(C, (vals.row, r * c + col), vals.data)
            off = r != col
            np.add.at(C, (vals.row[off], col[off] * c + r[off]), vals.data[off])
        return C

    def matrices(self, Z, d=None, coef=None):
        """``F(z; d)`` at the rows of ``Z``; shape ``(G, c, c)``."""
        if coef is None:
            coef = self.coefficient_matrix(d)
        Phi = self.basis.values(Z)
        return (Phi @ coef).reshape(-1, self.size, self.size)

    def batch(self, Z, margin=0.0, label=""):
        """Affine constraint batch ``F(z_g; d) <= -margin I`` for each row of ``Z``."""
        Z = np.atleast_2d(Z)
        G = Z.shape[0]
        Phi = self.basis.values(Z)
        const = (Phi @ self.const_coef).reshape(G, self.size, self.size)
        vals = np.asarray((self.q_coef.T @ Phi.T).T)  # (G, Q)
        g_idx, q_idx = np.nonzero(vals)
        return LMIBatch(
            self.size, const, g_idx, self.q_param[q_idx], self.q_row[q_idx], self.q_col[q_idx],
            vals[g_idx, q_idx], margin, label,
        )


# --------------------------------------------------------------- sampling


class TensorGrid:
    """Lazy tensor-product grid over a list of coordinates."""

    def __init__(self, axes):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.shape = tuple(len(a) for a in self.axes)
        self.size = int(np.prod(self.shape)) if self.axes else 1

    def points(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if not self.axes:
            return np.zeros((idx.size, 0))
        sub = np.unravel_index(idx, self.shape)
        return np.stack([a[s] for a, s in zip(self.axes, sub)], axis=1)

    def chunks(self, chunk=50_000):
        for start in range(0, self.size, chunk):
            idx = np.arange(start, min(start + chunk, self.size))
            yield idx, self.points(idx)


def gershgorin_upper(F):
    diag = np.einsum("gii->gi", F)
    radius = np.abs(F).sum(axis=2) - np.abs(diag)
    return (diag + radius).max(axis=1)


def scan_max_eig(F, threshold):
    """Exact ``lambda_max`` where it matters.

    Returns ``(worst_value, worst_index, idx, lam)`` where ``idx``/``lam``
    list every sample whose ``lambda_max`` exceeds ``threshold`` (Gershgorin
    bounds skip the eigen-solve for samples that are certainly below both the
    threshold and the running worst).
    """
    G = F.shape[0]
    if G == 0:
        return -np.inf, -1, np.zeros(0, int), np.zeros(0)
    upper = gershgorin_upper(F)
    lower = np.einsum("gii->gi", F).max(axis=1)
    cut = min(threshold, lower.max())
    cand = np.nonzero(upper >= cut)[0]
    lam = np.linalg.eigvalsh(F[cand])[:, -1] if cand.size else np.zeros(0)
    k = int(np.argmax(lam))
    worst, worst_idx = float(lam[k]), int(cand[k])
    viol = lam > threshold
    return worst, worst_idx, cand[viol], lam[viol]
