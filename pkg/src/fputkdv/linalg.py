"""Gaussian elimination over the rationals.

Matrices are lists of rows of :class:`~fractions.Fraction`.  Nothing here
rounds, so ranks, kernels and determinants are exact.
"""
from __future__ import annotations

from fractions import Fraction
from typing import List, Sequence, Tuple

Matrix = List[List[Fraction]]


class SingularSystemError(ArithmeticError):
    pass


def as_matrix(rows: Sequence[Sequence]) -> Matrix:
    return [[Fraction(x) for x in row] for row in rows]


def transpose(a: Matrix) -> Matrix:
    return [list(col) for col in zip(*a)]


def matmul(a: Matrix, b: Matrix) -> Matrix:
    bt = transpose(b)
    return [[sum((x * y for x, y in zip(row, col)), Fraction(0)) for col in bt] for row in a]


def matvec(a: Matrix, v: Sequence) -> List[Fraction]:
    return [sum((x * Fraction(y) for x, y in zip(row, v)), Fraction(0)) for row in a]


def dot(u: Sequence, v: Sequence) -> Fraction:
    return sum((Fraction(x) * Fraction(y) for x, y in zip(u, v)), Fraction(0))


def rref(a: Matrix) -> Tuple[Matrix, List[int]]:
    """Reduced row echelon form and the pivot columns."""
    m = [list(row) for row in a]
    nrows = len(m)
    ncols = len(m[0]) if m else 0
    pivots: List[int] = []
    r = 0
    for c in range(ncols):
        p = next((i for i in range(r, nrows) if m[i][c] != 0), None)
        if p is None:
            continue
        m[r], m[p] = m[p], m[r]
        inv = 1 / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(nrows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == nrows:
            break
    return m, pivots


def rank(a: Matrix) -> int:
    return len(rref(a)[1])


def nullspace(a: Matrix) -> List[List[Fraction]]:
    """Basis of ``{x : a x = 0}``, one vector per free column."""
    ncols = len(a[0])
    m, pivots = rref(a)
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for f in free:
        x = [Fraction(0)] * ncols
        x[f] = Fraction(1)
        for row, pc in zip(m, pivots):
            x[pc] = -row[f]
        basis.append(x)
    return basis


def left_nullspace(a: Matrix) -> List[List[Fraction]]:
    """Basis of ``{v : v^T a = 0}``."""
    return nullspace(transpose(a))


def det(a: Matrix) -> Fraction:
    m = [list(row) for row in a]
    n = len(m)
    out = Fraction(1)
    for c in range(n):
        p = next((i for i in range(c, n) if m[i][c] != 0), None)
        if p is None:
            return Fraction(0)
        if p != c:
            m[c], m[p] = m[p], m[c]
            out = -out
        out *= m[c][c]
        for i in range(c + 1, n):
            if m[i][c] != 0:
                f = m[i][c] / m[c][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[c])]
    return out


def solve(a: Matrix, b: Sequence) -> List[Fraction]:
    """Unique solution of the square system ``a x = b``."""
    n = len(a)
    if any(len(row) != n for row in a):
        raise ValueError("solve expects a square matrix")
    aug = [list(row) + [Fraction(bi)] for row, bi in zip(a, b)]
    m, pivots = rref(aug)
    if pivots[:n] != list(range(n)) or len(pivots) > n:
        raise SingularSystemError("matrix is singular")
    return [m[i][n] for i in range(n)]


def in_span(vectors: Sequence[Sequence], target: Sequence) -> bool:
    """Whether ``target`` is a rational combination of ``vectors``."""
    base = as_matrix(vectors)
    return rank(base + [list(map(Fraction, target))]) == rank(base)
