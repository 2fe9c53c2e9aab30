"""Affine matrix-valued functions of matrix decision variables.

An :class:`AffineExpr` stores a constant matrix and, for every decision
variable it depends on, a stack of coefficient matrices (one per free scalar
of the variable). Numpy arrays combine with expressions through ``+``, ``-``,
scalar ``*`` and ``@`` on either side, and :func:`bmat` assembles block
matrices, which is all the LMI assembly code needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from numbers import Real

import numpy as np

SYMMETRIC = "symmetric"
DIAGONAL = "diagonal"


@dataclass(frozen=True, eq=False)
class Variable:
    """Square matrix decision variable.

    ``symmetric`` variables are parameterized by their upper triangle
    (``dim*(dim+1)/2`` scalars, row-major), ``diagonal`` ones by their
    diagonal.
    """

    name: str
    dim: int
    structure: str = SYMMETRIC

    def __post_init__(self):
        if self.structure not in (SYMMETRIC, DIAGONAL):
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.dim < 1:
            raise ValueError("variable dimension must be positive")

    @property
    def size(self) -> int:
        if self.structure == DIAGONAL:
            return self.dim
        return self.dim * (self.dim + 1) // 2

    def basis(self) -> np.ndarray:
        """Coefficient matrices, shape ``(size, dim, dim)``."""
        d = self.dim
        out = np.zeros((self.size, d, d))
        if self.structure == DIAGONAL:
            out[np.arange(d), np.arange(d), np.arange(d)] = 1.0
            return out
        for k, (i, j) in enumerate(zip(*np.triu_indices(d))):
            out[k, i, j] = 1.0
            out[k, j, i] = 1.0
        return out

    def unpack(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if self.structure == DIAGONAL:
            return np.diag(vec)
        M = np.zeros((self.dim, self.dim))
        M[np.triu_indices(self.dim)] = vec
        return M + np.triu(M, 1).T

    def pack(self, M) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if self.structure == DIAGONAL:
            return np.diag(M).copy()
        return M[np.triu_indices(self.dim)].copy()

    @property
    def expr(self) -> "AffineExpr":
        return AffineExpr(np.zeros((self.dim, self.dim)), {self: self.basis()})

    # Let variables be used directly in expressions.
    __array_ufunc__ = None

    def __add__(self, o):
        return self.expr + o

    __radd__ = __add__

    def __sub__(self, o):
        return self.expr - o

    def __rsub__(self, o):
        return o - self.expr

    def __neg__(self):
        return -self.expr

    def __mul__(self, s):
        return self.expr * s

    __rmul__ = __mul__

    def __matmul__(self, o):
        return self.expr @ o

    def __rmatmul__(self, o):
        return o @ self.expr

    @property
    def T(self):
        return self.expr.T


class AffineExpr:
    """``const + sum_v sum_k value[v][k] * coeffs[v][k]``."""

    __array_ufunc__ = None

    def __init__(self, const, coeffs: dict | None = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.coeffs = dict(coeffs or {})
        for v, A in self.coeffs.items():
            if A.shape != (v.size,) + self.const.shape:
                raise ValueError(f"coefficient stack for {v.name} has shape {A.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def variables(self) -> list[Variable]:
        return list(self.coeffs)

    @staticmethod
    def lift(o) -> "AffineExpr":
        if isinstance(o, AffineExpr):
            return o
        if isinstance(o, Variable):
            return o.expr
        return AffineExpr(o)

    def __add__(self, o):
        if isinstance(o, Real) and o == 0:
            return self
        o = AffineExpr.lift(o)
        if o.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {o.shape}")
        coeffs = dict(self.coeffs)
        for v, A in o.coeffs.items():
            coeffs[v] = coeffs[v] + A if v in coeffs else A
        return AffineExpr(self.const + o.const, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, o):
        return self + (-AffineExpr.lift(o))

    def __rsub__(self, o):
        return AffineExpr.lift(o) + (-self)

    def __mul__(self, s):
        if not isinstance(s, Real):
            return NotImplemented
        return AffineExpr(self.const * s, {v: A * s for v, A in self.coeffs.items()})

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / s)

    def __matmul__(self, B):
        if isinstance(B, (AffineExpr, Variable)):
            raise TypeError("product of two affine expressions is not affine")
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return AffineExpr(self.const @ B, {v: A @ B for v, A in self.coeffs.items()})

    def __rmatmul__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return AffineExpr(A @ self.const, {v: A @ C for v, C in self.coeffs.items()})

    @property
    def T(self):
        return AffineExpr(self.const.T, {v: A.transpose(0, 2, 1) for v, A in self.coeffs.items()})

    def evaluate(self, values: dict) -> np.ndarray:
        """Value at ``values``, a mapping from Variable to its matrix value.

        Variables missing from ``values`` are taken as zero.
        """
        out = self.const.copy()
        for v, A in self.coeffs.items():
            if v in values:
                out += np.tensordot(v.pack(values[v]), A, axes=1)
        return out


def bmat(blocks) -> AffineExpr:
    """Block matrix from a nested list of arrays, expressions or ``None`` (zero)."""
    rows = len(blocks)
    cols = len(blocks[0])
    heights = [None] * rows
    widths = [None] * cols
    for i, row in enumerate(blocks):
        if len(row) != cols:
            raise ValueError("ragged block structure")
        for j, blk in enumerate(row):
            if blk is None:
                continue
            h, w = AffineExpr.lift(blk).shape
            if heights[i] not in (None, h) or widths[j] not in (None, w):
                raise ValueError(f"block ({i}, {j}) has inconsistent shape {(h, w)}")
            heights[i], widths[j] = h, w
    if None in heights or None in widths:
        raise ValueError("every block row and column needs at least one sized block")
    r0 = np.concatenate([[0], np.cumsum(heights)])
    c0 = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((r0[-1], c0[-1]))
    coeffs: dict[Variable, np.ndarray] = {}
    for i, row in enumerate(blocks):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            e = AffineExpr.lift(blk)
            const[r0[i]:r0[i + 1], c0[j]:c0[j + 1]] = e.const
            for v, A in e.coeffs.items():
                if v not in coeffs:
                    coeffs[v] = np.zeros((v.size, r0[-1], c0[-1]))
                coeffs[v][:, r0[i]:r0[i + 1], c0[j]:c0[j + 1]] += A
    return AffineExpr(const, coeffs)


@dataclass(eq=False)
class LmiConstraint:
    """``expr >= 0`` (positive semidefinite) or ``expr > 0`` when ``strict``."""

    expr: AffineExpr
    strict: bool = False
    name: str = ""

    def __post_init__(self):
        self.expr = AffineExpr.lift(self.expr)
        r, c = self.expr.shape
        if r != c:
            raise ValueError(f"LMI {self.name!r} is not square: {self.expr.shape}")
        parts = [self.expr.const] + list(self.expr.coeffs.values())
        scale = max(np.max(np.abs(p)) for p in parts)
        for p in parts:
            if np.max(np.abs(p - np.swapaxes(p, -1, -2))) > 1e-10 * max(scale, 1.0):
                raise ValueError(f"LMI {self.name!r} is not symmetric")
        sym = lambda p: 0.5 * (p + np.swapaxes(p, -1, -2))  # noqa: E731
        self.expr = AffineExpr(sym(self.expr.const), {v: sym(A) for v, A in self.expr.coeffs.items()})

    @property
    def size(self) -> int:
        return self.expr.shape[0]

    def matrix(self, values: dict) -> np.ndarray:
        return self.expr.evaluate(values)


def psd(expr, name: str = "") -> LmiConstraint:
    return LmiConstraint(AffineExpr.lift(expr), False, name)


def pd(expr, name: str = "") -> LmiConstraint:
    return LmiConstraint(AffineExpr.lift(expr), True, name)
