"""Sparse multivariate polynomials over named scalar coordinates.

A :class:`Variable` names one scalar: the ``comp``-th state (``kind="x"``) or
input (``kind="u"``) coordinate of node ``node`` (all 1-based). Synthesis also
uses ``kind="p"`` for decision coefficients, which lets the synthesis matrix
be built as an ordinary polynomial that is linear in the ``p`` variables.
"""
from __future__ import annotations

import ast
import itertools
import math
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, PolySyntaxError, UnboundVariableError

_KIND_RANK = {"x": 0, "u": 1, "p": 2}
_PARAM_NODE = 1 << 62


class Variable(NamedTuple):
    node: int
    kind: str
    comp: int

    @property
    def sort_key(self):
        # decision coefficients sort after every state/input coordinate
        if self.kind == "p":
            return (_PARAM_NODE, 2, self.comp)
        return (self.node, _KIND_RANK[self.kind], self.comp)

    def __str__(self):
        if self.kind == "p":
            return f"p[{self.comp}]"
        return f"{self.kind}[{self.node}][{self.comp}]"


def xvar(node, comp):
    return Variable(node, "x", comp)


def uvar(node, comp):
    return Variable(node, "u", comp)


def pvar(index):
    return Variable(0, "p", index)


def _mono_key(mono):
    degree = sum(e for _, e in mono)
    return (degree, tuple((v.sort_key, -e) for v, e in mono))


def _mono_mul(a, b):
    if not a:
        return b
    if not b:
        return a
    exps = dict(a)
    for v, e in b:
        exps[v] = exps.get(v, 0) + e
    return tuple(sorted(exps.items(), key=lambda t: t[0].sort_key))


class Polynomial:
    """Immutable sparse polynomial ``{monomial: coefficient}``.

    A monomial is a tuple of ``(Variable, exponent)`` pairs sorted by
    variable; the empty tuple is the constant monomial. Zero coefficients are
    never stored.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms=None):
        clean = {}
        if terms:
            for mono, c in terms.items():
                c = float(c)
                if c != 0.0:
                    clean[mono] = c
        self._terms = clean
        self._hash = None

    @classmethod
    def _raw(cls, terms):
        p = cls.__new__(cls)
        p._terms = terms
        p._hash = None
        return p

    @classmethod
    def constant(cls, c):
        return cls({(): c})

    @classmethod
    def var(cls, v: Variable, coeff=1.0):
        return cls({((v, 1),): coeff})

    @property
    def terms(self):
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def is_zero(self):
        return not self._terms

    def is_constant(self):
        return all(not m for m in self._terms)

    def constant_value(self):
        return self._terms.get((), 0.0)

    def variables(self):
        return frozenset(v for m in self._terms for v, _ in m)

    def degree(self):
        return max((sum(e for _, e in m) for m in self._terms), default=0)

    def sorted_terms(self):
        """Terms in graded lexicographic order (deterministic)."""
        return sorted(self._terms.items(), key=lambda t: _mono_key(t[0]))

    # arithmetic ---------------------------------------------------------

    @staticmethod
    def _coerce(other):
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            s = out.get(m, 0.0) + c
            if s == 0.0:
                out.pop(m, None)
            else:
                out[m] = s
        return Polynomial._raw(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            if other == 0:
                return Polynomial()
            return Polynomial._raw({m: c * other for m, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = _mono_mul(ma, mb)
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial({m: c for m, c in out.items()})

    __rmul__ = __mul__

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Polynomial.constant(1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self):
        return f"Polynomial({self})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for mono, c in self.sorted_terms():
            factors = [str(v) if e == 1 else f"{v}^{e}" for v, e in mono]
            if not factors:
                parts.append(repr(c))
            elif c == 1.0:
                parts.append("*".join(factors))
            elif c == -1.0:
                parts.append("-" + "*".join(factors))
            else:
                parts.append(repr(c) + "*" + "*".join(factors))
        return " + ".join(parts).replace("+ -", "- ")

    # calculus / evaluation ---------------------------------------------

    def diff(self, v: Variable):
        out = {}
        for mono, c in self._terms.items():
            for k, (w, e) in enumerate(mono):
                if w == v:
                    rest = mono[:k] + (((w, e - 1),) if e > 1 else ()) + mono[k + 1:]
                    out[rest] = out.get(rest, 0.0) + c * e
                    break
        return Polynomial(out)

    def eval(self, point):
        """Evaluate at ``point`` (mapping Variable -> float)."""
        total = 0.0
        for mono, c in self._terms.items():
            val = c
            for v, e in mono:
                try:
                    val *= point[v] ** e
                except KeyError:
                    raise UnboundVariableError(f"no value bound for {v}") from None
            total += val
        return total

    def split_linear(self, kind="p"):
        """Split into ``{param_or_None: Polynomial}`` for a polynomial linear in ``kind``.

        Raises ``ValueError`` if some monomial is nonlinear in that kind.
        """
        parts = {}
        for mono, c in self._terms.items():
            params = [(v, e) for v, e in mono if v.kind == kind]
            if len(params) > 1 or (params and params[0][1] != 1):
                raise ValueError("polynomial is not linear in the decision variables")
            key = params[0][0] if params else None
            rest = tuple((v, e) for v, e in mono if v.kind != kind)
            parts.setdefault(key, {})
            parts[key][rest] = parts[key].get(rest, 0.0) + c
        return {k: Polynomial(t) for k, t in parts.items()}

    def substitute_params(self, values, kind="p"):
        """Replace every ``kind`` variable ``p[j]`` by ``values[j]``."""
        out = {}
        for mono, c in self._terms.items():
            val = c
            rest = []
            for v, e in mono:
                if v.kind == kind:
                    val *= values[v.comp] ** e
                else:
                    rest.append((v, e))
            rest = tuple(rest)
            out[rest] = out.get(rest, 0.0) + val
        return Polynomial(out)


ZERO = Polynomial()
ONE = Polynomial.constant(1.0)


def as_poly(value):
    if isinstance(value, Polynomial):
        return value
    if isinstance(value, str):
        return parse_poly(value)
    return Polynomial.constant(float(value))


def poly_eval(p: Polynomial, point) -> float:
    return p.eval(point)


def poly_diff(p: Polynomial, v: Variable) -> Polynomial:
    return p.diff(v)


# ------------------------------------------------------------------ matrices


class PolyMatrix:
    """Rectangular matrix of polynomials (row-major list of lists)."""

    __slots__ = ("rows", "cols", "entries")

    def __init__(self, entries, rows=None, cols=None):
        entries = [[as_poly(e) for e in row] for row in entries]
        if rows is None:
            rows = len(entries)
        if cols is None:
            cols = len(entries[0]) if entries else 0
        if len(entries) != rows or any(len(r) != cols for r in entries):
            raise DimensionError("ragged polynomial matrix")
        self.rows, self.cols, self.entries = rows, cols, entries

    @classmethod
    def zeros(cls, rows, cols):
        return cls([[ZERO] * cols for _ in range(rows)], rows, cols)

    @classmethod
    def identity(cls, n, scale=1.0):
        return cls([[Polynomial.constant(scale) if i == j else ZERO for j in range(n)] for i in range(n)], n, n)

    @classmethod
    def from_array(cls, arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls([[Polynomial.constant(v) for v in row] for row in arr], *arr.shape)

    @classmethod
    def column(cls, polys):
        return cls([[p] for p in polys], len(polys), 1)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __getitem__(self, idx):
        i, j = idx
        return self.entries[i][j]

    def T(self):
        return PolyMatrix([[self.entries[i][j] for i in range(self.rows)] for j in range(self.cols)], self.cols, self.rows)

    def __add__(self, other):
        if self.shape != other.shape:
            raise DimensionError(f"shape mismatch {self.shape} vs {other.shape}")
        return PolyMatrix(
            [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)], self.rows, self.cols
        )

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, s):
        return PolyMatrix([[e * s for e in row] for row in self.entries], self.rows, self.cols)

    def __matmul__(self, other):
        if self.cols != other.rows:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = ZERO
                for k in range(self.cols):
                    a, b = self.entries[i][k], other.entries[k][j]
                    if a.is_zero() or b.is_zero():
                        continue
                    acc = acc + a * b
                row.append(acc)
            out.append(row)
        return PolyMatrix(out, self.rows, other.cols)

    def is_symmetric(self):
        return self.rows == self.cols and all(
            self.entries[i][j] == self.entries[j][i] for i in range(self.rows) for j in range(i)
        )

    def is_zero(self):
        return all(e.is_zero() for row in self.entries for e in row)

    def is_constant(self):
        return all(e.is_constant() for row in self.entries for e in row)

    def variables(self):
        out = set()
        for row in self.entries:
            for e in row:
                out |= e.variables()
        return frozenset(out)

    def evaluate(self, point):
        return np.array([[e.eval(point) for e in row] for row in self.entries], dtype=float).reshape(self.rows, self.cols)

    def substitute_params(self, values):
        return PolyMatrix([[e.substitute_params(values) for e in row] for row in self.entries], self.rows, self.cols)

    def __eq__(self, other):
        return isinstance(other, PolyMatrix) and self.shape == other.shape and self.entries == other.entries

    def __repr__(self):
        return f"PolyMatrix({[[str(e) for e in row] for row in self.entries]})"


def jacobian(F: PolyMatrix, vars_) -> PolyMatrix:
    if F.cols != 1:
        raise DimensionError("jacobian expects a column PolyMatrix")
    return PolyMatrix([[F.entries[j][0].diff(v) for v in vars_] for j in range(F.rows)], F.rows, len(vars_))


def directional_matrix_derivative(W: PolyMatrix, f: PolyMatrix, vars_) -> PolyMatrix:
    """``(i, j) -> sum_k dW_ij/dvars_k * f_k``: the time derivative of ``W`` along ``f``."""
    if f.cols != 1 or f.rows != len(vars_):
        raise DimensionError("vector field height must match the variable list")
    if W.rows != W.cols:
        raise DimensionError("W must be square")
    out = []
    for i in range(W.rows):
        row = []
        for j in range(W.cols):
            w = W.entries[i][j]
            acc = ZERO
            if not w.is_constant():
                wv = w.variables()
                for v, fk in zip(vars_, f.entries):
                    if v in wv:
                        acc = acc + w.diff(v) * fk[0]
            row.append(acc)
        out.append(row)
    return PolyMatrix(out, W.rows, W.cols)


# ----------------------------------------------------------- text syntax


def parse_poly(text: str) -> Polynomial:
    """Parse ``-x[1][1] - x[1][1]^3 + x[1][2]^2``-style strings."""
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise PolySyntaxError(f"cannot parse polynomial {text!r}: {exc.msg}") from None
    return _build(tree.body, text)


def _index(node, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, int):
        return node.value
    raise PolySyntaxError(f"variable indices must be integer literals in {text!r}")


def _build(node, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return Polynomial.constant(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _build(node.operand, text)
        return -inner if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        left = _build(node.left, text)
        if isinstance(node.op, ast.Pow):
            p = _build(node.right, text)
            if not p.is_constant() or p.constant_value() != int(p.constant_value()) or p.constant_value() < 0:
                raise PolySyntaxError(f"exponents must be non-negative integers in {text!r}")
            return left ** int(p.constant_value())
        right = _build(node.right, text)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div) and right.is_constant() and right.constant_value() != 0:
            return left * (1.0 / right.constant_value())
        raise PolySyntaxError(f"unsupported operator in {text!r}")
    if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Subscript):
        base = node.value.value
        if isinstance(base, ast.Name) and base.id in ("x", "u"):
            i = _index(node.value.slice, text)
            k = _index(node.slice, text)
            if i < 1 or k < 1:
                raise PolySyntaxError(f"indices are 1-based in {text!r}")
            return Polynomial.var(Variable(i, base.id, k))
    raise PolySyntaxError(f"unsupported expression {ast.dump(node)[:60]} in {text!r}")


# ---------------------------------------------------- vectorized evaluation


class MonomialBasis:
    """Exponent matrix for a fixed list of monomials over a fixed variable list.

    ``values(Z)`` evaluates every monomial at the rows of ``Z`` (shape
    ``(G, len(variables))``) and returns shape ``(G, len(monomials))``.
    """

    def __init__(self, variables, monomials):
        self.variables = list(variables)
        self.monomials = list(monomials)
        col = {v: k for k, v in enumerate(self.variables)}
        self.exponents = np.zeros((len(self.monomials), len(self.variables)), dtype=np.int64)
        for r, mono in enumerate(self.monomials):
            for v, e in mono:
                self.exponents[r, col[v]] = e
        self.max_exp = int(self.exponents.max()) if self.exponents.size else 0
        # (column, exponent, monomial indices) groups, fixed at construction
        self._groups = []
        for c in range(len(self.variables)):
            ecol = self.exponents[:, c]
            for e in np.unique(ecol):
                if e:
                    self._groups.append((c, int(e), np.nonzero(ecol == e)[0]))

    def values(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.ones((Z.shape[0], len(self.monomials)))
        if self.max_exp == 0:
            return out
        powers = [None, Z]
        for _ in range(1, self.max_exp):
            powers.append(powers[-1] * Z)
        for c, e, idx in self._groups:
            out[:, idx] *= powers[e][:, c:c + 1]
        return out


class PolyEvaluator:
    """Fast evaluation of a list of polynomials at many points."""

    def __init__(self, polys, variables=None):
        polys = list(polys)
        if variables is None:
            vs = set()
            for p in polys:
                vs |= p.variables()
            variables = sorted(vs, key=lambda v: v.sort_key)
        monos = sorted({m for p in polys for m in p._terms}, key=_mono_key)
        known = set(variables)
        for m in monos:
            for v, _ in m:
                if v not in known:
                    raise UnboundVariableError(f"{v} is not among the evaluator variables")
        self.basis = MonomialBasis(variables, monos)
        idx = {m: k for k, m in enumerate(monos)}
        self.coeffs = np.zeros((len(monos), len(polys)))
        for j, p in enumerate(polys):
            for m, c in p._terms.items():
                self.coeffs[idx[m], j] = c

    @property
    def variables(self):
        return self.basis.variables

    def __call__(self, Z):
        return self.basis.values(Z) @ self.coeffs


def binomial_count(nvars, degree):
    return math.comb(nvars + degree, degree)


def monomials_upto(variables, degree):
    """All monomials of total degree ``<= degree`` in ``variables`` (graded order)."""
    variables = sorted(variables, key=lambda v: v.sort_key)
    out = [()]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(variables)), d):
            exps = {}
            for k in combo:
                exps[variables[k]] = exps.get(variables[k], 0) + 1
            out.append(tuple(sorted(exps.items(), key=lambda t: t[0].sort_key)))
    return out
