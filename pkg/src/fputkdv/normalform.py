"""Coefficient-level normal form of the quasi-unidirectional FPUT field.

The pipeline takes a field

    U_t = C1 K1 + h^2 C3 K3 + h^4 F5 + h^6 F7 + O(h^8)

with ``F5`` and ``F7`` parametrised by the vectors ``A`` (length 4) and ``B``
(length 20), and brings it into KdV-hierarchy form with two near-identity
changes of variables generated by ``G2`` and ``G4``.

Every scalar may be a :class:`~fractions.Fraction` or a constant
:class:`~fputkdv.diffpoly.DiffPoly` carrying formal parameters, so the same
code produces numbers for a given chain and closed-form expressions for a
generic one.  All linear systems that appear have purely rational matrices
(they come from bracket tables), which is why symbolic right-hand sides can be
handled by multiplying with an exact inverse.

Each stage re-derives its claim with :mod:`fputkdv.diffpoly` and raises
:class:`VerificationError` on mismatch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Union

from . import linalg
from .diffpoly import (
    DiffPoly,
    HSeries,
    antiderivative,
    average,
    gateaux,
    hseries_compose,
    lie_bracket,
    parse,
    to_text,
)
from .fields import kdv_field, riemann_field, swap_uv
from .tables import G2_BASIS, G4_BASIS, K3

Scalar = Union[int, Fraction, DiffPoly]

__all__ = [
    "A_SLOTS",
    "B_SLOTS",
    "ConservedCoefficients",
    "FPUTParameters",
    "FirstOrderResult",
    "LinearSystem",
    "ModelCoefficients",
    "SecondOrderResult",
    "VerificationError",
    "build_linear_system",
    "compute_r6",
    "conserved_coefficients",
    "exp_ad",
    "hierarchy_field",
    "fput_to_model",
    "lambda_formulas",
    "model_field",
    "normalize",
    "obstruction",
    "orthogonality_conditions",
    "report",
    "scalar_text",
    "simplify",
    "slaving_symbolic",
    "solve_first_order",
    "solve_second_order",
    "tilde_b_formulas",
]


class VerificationError(RuntimeError):
    """A symbolic cross-check failed; this indicates a bug, not bad input."""


# Monomials multiplying A1..A4 in F5 and B1..B20 in F7.
A_SLOTS = ["u_x*u_2x", "u*u_3x", "u^2*u_x", "av(u^2)*u_x"]
B_SLOTS = [
    "u_2x*u_3x", "u_x*u_4x", "u*u_5x", "u_x^3", "u*u_x*u_2x", "u^2*u_3x", "u^3*u_x",
    "av(u)*u_5x", "av(u)*u_x*u_2x", "av(u)*u*u_3x", "av(u)*u^2*u_x",
    "av(u^2)*u_3x", "av(u^2)*u*u_x", "av(u)^2*u_3x", "av(u)^2*u*u_x",
    "av(u^3)*u_x", "av(u_x^2)*u_x", "av(u)*av(u^2)*u_x", "av(u)^3*u_x", "av(u_x^3)",
]
# The seven-slot basis of the order-h^4 normal form problem.
_N5_SLOTS = ["u_x*u_2x", "u*u_3x", "u^2*u_x", "av(u^2)*u_x", "av(u)^2*u_x",
             "av(u)*u*u_x", "av(u)*u_3x"]

W0 = [70, 42, 14, 70, 280, 70, 140] + [0] * 13
# Directions of lam1..lam7 inside the 20-slot target vector.
LAMBDA_DIRECTIONS = {
    1: {7: 1, 8: 20, 9: 10, 10: 30},
    2: {11: 1, 12: 6},
    3: {13: 1, 14: 6},
    4: {15: -2, 16: 1},
    5: {17: 1},
    6: {18: 1},
    7: {19: 1},
}
RESIDUAL_SLOT = 6  # U^3 U_x

M_PRINTED = [
    [60, -6, -3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [24, 0, -3, 0, 0, -3, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, -3, 0, 0, 0, 0, 0, 0, 0],
    [0, 6, 0, -6, -3, -18, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 12, -18, -6, -72, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, -3, -21, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, -6, -2, -18, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 54, 12, -6, -3, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 24, 0, 0, -3, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 36, 0, -6, -3, 0, 0, 0, 0],
    [0, 0, 0, 0, 3, -3, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 6, -18, 0, 0, 0, 0, -6, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 6, -6, 0, 0, 0],
    [0, 0, 0, 6, -10, -18, 0, 0, 0, 0, 0, 0, -6],
    [0, 6, -6, 0, 3, 6, 0, 0, 0, 0, 0, -6, 0],
    [0, 0, 0, 0, 6, 18, 0, 6, -9, 0, 6, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 6, 6, 0, 0, 0],
    [0, -6, 6, -3, 3, 3, 0, 0, 0, 0, 0, 6, 3],
]

V_PRINTED = [
    [0, 0, -14, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 3, 6, 0, 0, 6],
    [0, 0, 32, 0, 0, 0, 0, 0, 0, 4, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0],
    [0, 0, -48, 0, 0, 4, 0, 0, 0, -4, 1, 0, 1, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 8, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
    [0, 0, -8, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [24, -60, 170, 24, -9, -8, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
]


# ---------------------------------------------------------------------------
# scalar helpers

def _p(x: Scalar) -> DiffPoly:
    return x if isinstance(x, DiffPoly) else DiffPoly.constant(x)


def simplify(x: Scalar) -> Scalar:
    """Return a Fraction when ``x`` is a parameter-free constant."""
    if isinstance(x, DiffPoly):
        if not x.parameters() and x.is_constant():
            return x.rational()
        return x
    return Fraction(x)


def scalar_text(x: Scalar) -> str:
    x = simplify(x)
    return str(x) if isinstance(x, Fraction) else to_text(x)


def _is_zero(x: Scalar) -> bool:
    return not _p(x)


def _coordinates(poly: DiffPoly, slots: Sequence[str]) -> List[DiffPoly]:
    """Coefficients of ``poly`` on single-monomial ``slots``; raise on leftovers."""
    groups = poly.split_parameters()
    out = []
    for text in slots:
        ((sig, c),) = parse(text).items()
        out.append(groups.pop(sig, DiffPoly()) / c)
    if groups:
        rest = sum((coef * DiffPoly({sig: 1}) for sig, coef in groups.items()), DiffPoly())
        raise VerificationError(f"terms outside the slot basis: {to_text(rest)}")
    return out


def _inverse(a: Sequence[Sequence]) -> List[List[Fraction]]:
    n = len(a)
    m = linalg.as_matrix(a)
    cols = [linalg.solve(m, [int(i == j) for i in range(n)]) for j in range(n)]
    return linalg.transpose(cols)


def _apply(inv: Sequence[Sequence[Fraction]], rhs: Sequence[Scalar]) -> List[DiffPoly]:
    return [sum((c * _p(r) for c, r in zip(row, rhs) if c), DiffPoly()) for row in inv]


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class FPUTParameters:
    """Taylor coefficients of ``W(z) = z^2/2 + alpha z^3/3 + beta z^4/4 + gamma z^5/5``.

    Entries are rationals or constant DiffPolys (formal parameters).
    """

    alpha: Scalar
    beta: Scalar = Fraction(0)
    gamma: Scalar = Fraction(0)

    def __post_init__(self):
        if _is_zero(self.alpha):
            raise ValueError("alpha must be nonzero")

    @classmethod
    def toda(cls, alpha: Scalar) -> "FPUTParameters":
        """The Toda chain ``W(z) = (exp(2 alpha z) - 1 - 2 alpha z) / (4 alpha^2)``."""
        a = _p(alpha)
        return cls(alpha, simplify(2 * a ** 2 / 3), simplify(a ** 3 / 3))

    @classmethod
    def symbolic(cls) -> "FPUTParameters":
        return cls(DiffPoly.param("alpha"), DiffPoly.param("beta"), DiffPoly.param("gamma"))

    @property
    def toda_defect(self) -> Scalar:
        """``14 alpha^3 - 27 alpha beta + 12 gamma``; zero on the Toda family."""
        a, b, g = _p(self.alpha), _p(self.beta), _p(self.gamma)
        return simplify(14 * a ** 3 - 27 * a * b + 12 * g)


@dataclass(frozen=True)
class ModelCoefficients:
    """Scalar coefficients ``A`` (4), ``B`` (20) and ``C = (C1, C3, C5, C7)``."""

    A: tuple
    B: tuple
    C: tuple

    def __post_init__(self):
        if len(self.A) != 4 or len(self.B) != 20 or len(self.C) != 4:
            raise ValueError("expected 4 A, 20 B and 4 C coefficients")
        if any(_is_zero(c) for c in self.C[1:]):
            raise ValueError("C3, C5 and C7 must be nonzero")

    @classmethod
    def symbolic(cls) -> "ModelCoefficients":
        return cls(
            tuple(DiffPoly.param(f"A{i}") for i in range(1, 5)),
            tuple(DiffPoly.param(f"B{i}") for i in range(1, 21)),
            tuple(DiffPoly.param(f"C{i}") for i in (1, 3, 5, 7)),
        )

    @property
    def kappa(self) -> Scalar:
        """``C5^2 / (C3 C7)``, the weight of the generated order-h^6 terms."""
        _, c3, c5, c7 = map(_p, self.C)
        return simplify(c5 ** 2 / (c3 * c7))


def fput_to_model(p: FPUTParameters) -> ModelCoefficients:
    """Coefficients of the reduced FPUT field in the generic normal form problem."""
    a, b, g = _p(p.alpha), _p(p.beta), _p(p.gamma)
    if not a:
        raise ValueError("alpha must be nonzero")
    b2 = b / a ** 2
    g3 = g / a ** 3
    A = (60, 20, 90 * (2 * b2 - 1), 30)
    B = (420, 210, 42, 315 * (8 * b2 - 5), 630 * (12 * b2 - 7), 630 * (2 * b2 - 1),
         210 * (48 * g3 - 60 * b2 + 23), 0, 0, 0, 0, 210, 210 * (18 * b2 - 9), 0, 0,
         105 * (12 * b2 - 10), 315, 0, 0, 0)
    C = (Fraction(1), Fraction(1, 24), Fraction(1, 1920), Fraction(1, 322560))
    return ModelCoefficients(tuple(map(simplify, A)), tuple(map(simplify, B)), C)


def model_field(m: ModelCoefficients) -> HSeries:
    """``F = F1 + h^2 F3 + h^4 F5 + h^6 F7`` as an h-series."""
    c1, c3, c5, c7 = map(_p, m.C)
    f5 = parse("u_5x") + sum((_p(a) * parse(s) for a, s in zip(m.A, A_SLOTS)), DiffPoly())
    f7 = parse("u_7x") + sum((_p(b) * parse(s) for b, s in zip(m.B, B_SLOTS)), DiffPoly())
    return HSeries({0: c1 * parse("u_x"), 2: c3 * parse(K3), 4: c5 * f5, 6: c7 * f7})


# ---------------------------------------------------------------------------
# first order

@dataclass
class FirstOrderResult:
    a: list
    tildeA: list
    G2: DiffPoly
    N5: DiffPoly


def first_order_formulas(A: Sequence[Scalar]):
    """Closed forms for ``a1..a4`` and ``(tildeA4, tildeA5, tildeA6)``."""
    A1, A2, A3, A4 = map(_p, A)
    a = [(A3 - A1 - 10) / 12, (A3 - A2 - 20) / 6, (A2 - 10) / 3, 2 * (10 - A2) / 3]
    tilde = [A3 + A4 - 4 * A2 + 10, 20 - 2 * A2, A2 - 10]
    return [simplify(x) for x in a], [simplify(x) for x in tilde]


def n5_target(m: ModelCoefficients, tildeA: Sequence[Scalar]) -> DiffPoly:
    t4, t5, t6 = map(_p, tildeA)
    body = (kdv_field(5) + t4 * parse("av(u^2)*u_x") + t5 * parse("av(u)^2*u_x")
            + t6 * parse("av(u)") * kdv_field(3))
    return _p(m.C[2]) * body


def solve_first_order(m: ModelCoefficients) -> FirstOrderResult:
    """Find ``G2`` with ``F5 + [G2, F3]`` in the hierarchy up to averages.

    The seven unknowns ``a1..a4, tildeA4..tildeA6`` are solved from the bracket
    table and then compared with their closed forms.

    Raises
    ------
    VerificationError
        If the solved values disagree with the closed forms or the resulting
        ``N5`` is not of the required shape.
    """
    _, c3, c5, _ = map(_p, m.C)
    f5 = model_field(m)[4] / c5
    k3 = parse(K3)
    brackets = [lie_bracket(parse(x), k3) for x in G2_BASIS]
    extra = [parse(s) for s in ("av(u^2)*u_x", "av(u)^2*u_x", "av(u)*(u_3x + 6*u*u_x)")]
    columns = [_coordinates(b, _N5_SLOTS) for b in brackets]
    columns += [_coordinates(-e, _N5_SLOTS) for e in extra]
    matrix = linalg.transpose([[c.rational() for c in col] for col in columns])
    rhs = _coordinates(kdv_field(5) - f5, _N5_SLOTS)
    x = _apply(_inverse(matrix), rhs)
    a, tilde = [simplify(v) for v in x[:4]], [simplify(v) for v in x[4:]]
    a_formula, tilde_formula = first_order_formulas(m.A)
    if [_p(v) for v in a] != [_p(v) for v in a_formula] or \
            [_p(v) for v in tilde] != [_p(v) for v in tilde_formula]:
        raise VerificationError("first-order coefficients disagree with closed forms")

    G2 = (c5 / c3) * sum((_p(ai) * parse(x) for ai, x in zip(a, G2_BASIS)), DiffPoly())
    N5 = model_field(m)[4] + lie_bracket(G2, model_field(m)[2])
    if N5 != n5_target(m, tilde):
        raise VerificationError("F5 + [G2, F3] is not in normal form")
    if average(G2):
        raise VerificationError("G2 has nonzero average")
    return FirstOrderResult(a, tilde, G2, N5)


# ---------------------------------------------------------------------------
# order h^6 before the second step

def tilde_b_formulas(A: Sequence[Scalar], a: Sequence[Scalar]) -> List[Scalar]:
    """The twenty closed-form coefficients of ``R6`` in units of ``C5^2/C3``."""
    A1, A2, A3, A4 = map(_p, A)
    a1, a2, a3, a4 = map(_p, a)
    S = A3 + 2 * A4 - 4 * A2 + 10
    tb = [
        a1 * (A1 + 20) - 20 * a2 - 15 * a3,
        a1 * (A2 + 10) - 10 * a2 - 10 * a3,
        -5 * a3,
        a1 * (A3 + 30) - a2 * (A1 + 20) - (a3 / 4) * (A1 + A2 + 30),
        2 * a1 * (A3 + 30) - a2 * (A1 + 3 * A2 + 50) - (3 * a3 / 2) * (A1 + A2 + 30),
        -(a2 + 3 * a3) * (A2 + 10) / 2,
        -(a2 + a3 / 3) * (A3 + 30),
        5 * a3,
        (6 * a1 - 3 * a2) * (A2 - 10) + 3 * a3 * (A1 - A2 + 30) / 2 - a4 * (A1 + 20) / 2,
        30 * a3 - a4 * (A2 + 10) / 2,
        (6 * a2 + 3 * a3) * (10 - A2) / 2 + (a3 - 2 * a4) * (A3 + 30) / 2,
        (a2 - a3) * (A2 + 10) / 2,
        (a2 - a3) * (A3 + 30),
        a3 * (2 * A2 - 10) + a4 * (A2 + 10) / 2,
        (a3 + a4) * (A3 + 30) + 3 * (a3 - a4) * (A2 - 10),
        (a3 / 2 - a2) * S - a3 * (A3 + 30) / 6,
        a1 * S + a3 * (3 * A2 - A1 + 10) / 4,
        (a2 - Fraction(3, 2) * a3 - a4) * S + (3 * a2 - Fraction(9, 2) * a3) * (A2 - 10),
        (a3 + a4) * (A3 + 2 * A4 - A2 - 20),
        (a2 - a3) * (A1 - 2 * A2) / 2,
    ]
    return [simplify(x) for x in tb]


def compute_r6(m: ModelCoefficients, first: FirstOrderResult) -> List[Scalar]:
    """``tildeB`` such that ``R6 = 1/2 [G2, F5 + N5] = (C5^2/C3) sum tildeB_i slot_i``.

    Raises
    ------
    VerificationError
        If the bracket disagrees with the closed forms.
    """
    _, c3, c5, _ = map(_p, m.C)
    r6 = lie_bracket(first.G2, model_field(m)[4] + first.N5) / 2
    got = [simplify(v) for v in _coordinates(r6 / (c5 ** 2 / c3), B_SLOTS)]
    formula = tilde_b_formulas(m.A, first.a)
    if [_p(v) for v in got] != [_p(v) for v in formula]:
        bad = [i + 1 for i, (x, y) in enumerate(zip(got, formula)) if _p(x) != _p(y)]
        raise VerificationError(f"tildeB entries {bad} disagree with the bracket")
    return formula


# ---------------------------------------------------------------------------
# second order

@dataclass
class LinearSystem:
    """The order-h^6 linear algebra: ``B + kappa tildeB + M b = w(lambda)``."""

    M: List[List[Fraction]]
    v: List[List[Fraction]]
    rank: int
    M_from_brackets: List[List[Fraction]] = field(repr=False, default_factory=list)

    def w(self, lam: Dict[int, Scalar]) -> List[Scalar]:
        """Target vector for the hierarchy form with scalars ``lam[1..7]``."""
        out: List[Scalar] = [Fraction(x) for x in W0]
        for j, dirs in LAMBDA_DIRECTIONS.items():
            for slot, c in dirs.items():
                out[slot] = simplify(_p(out[slot]) + c * _p(lam.get(j, 0)))
        return out

    @property
    def kernel_is_basis(self) -> bool:
        """Whether ``v1..v7`` are independent and span ``ker M^T``."""
        dim = len(self.M) - self.rank
        return linalg.rank(self.v) == len(self.v) == dim and all(
            not any(linalg.matvec(linalg.transpose(self.M), vi)) for vi in self.v)


def build_linear_system() -> LinearSystem:
    """Transcribed ``M`` and ``v1..v7``, checked against the bracket table.

    Raises
    ------
    VerificationError
        If the printed matrix differs from the one computed from brackets, or
        a kernel vector is not annihilated.
    """
    k3 = parse(K3)
    cols = [[c.rational() for c in _coordinates(lie_bracket(parse(x), k3), B_SLOTS)]
            for x in G4_BASIS]
    computed = linalg.transpose(cols)
    M = linalg.as_matrix(M_PRINTED)
    if computed != M:
        raise VerificationError("printed M differs from the bracket table")
    v = linalg.as_matrix(V_PRINTED)
    mt = linalg.transpose(M)
    if any(any(linalg.matvec(mt, vi)) for vi in v):
        raise VerificationError("a kernel vector is not orthogonal to ran M")
    return LinearSystem(M, v, linalg.rank(M), computed)


def _square_system(ls: LinearSystem):
    """Columns for ``b1..b13, lam1, lam2, lam3, lam5, lam6, lam7, rho``."""
    cols = [list(col) for col in linalg.transpose(ls.M)]
    for j in (1, 2, 3, 5, 6, 7):
        col = [Fraction(0)] * 20
        for slot, c in LAMBDA_DIRECTIONS[j].items():
            col[slot] = Fraction(-c)
        cols.append(col)
    col = [Fraction(0)] * 20
    col[RESIDUAL_SLOT] = Fraction(-1)
    cols.append(col)
    return linalg.transpose(cols)


@dataclass
class SecondOrderResult:
    tildeB: list
    b: list
    lam: Dict[int, Scalar]
    rho: Scalar
    r: Scalar
    G4: DiffPoly
    N7: DiffPoly

    @property
    def G4_average(self) -> DiffPoly:
        """``<G4>``; only the two pure-average generator terms contribute."""
        return average(self.G4)


def lambda_formulas(m: ModelCoefficients, lambda4: Scalar = 0) -> Dict[int, Scalar]:
    """Closed forms for ``lam1..lam7`` in terms of ``A``, ``B`` and ``C``."""
    A1, A2, A3, A4 = map(_p, m.A)
    B = [None] + [_p(x) for x in m.B]
    k = _p(m.kappa)
    lam = {
        1: -14 + B[3] + B[8],
        2: 42 + B[12] - 8 * B[3] + B[6] - 2 * k / 3 * (A2 - 10) ** 2,
        3: 28 + B[10] + B[14] - 2 * B[3] - 10 * B[8] + 2 * k / 3 * (100 - 20 * A2 + A2 ** 2),
        4: _p(lambda4),
        5: (10 * B[3] - 2 * B[6] + 10 * B[8] - 4 * B[10] + B[11] - 6 * B[12] + B[13] + B[18]
            + k * (-100 + 40 * A2 - A2 ** 2 - 10 * A3 - Fraction(2, 3) * A2 * A3
                   + A3 ** 2 / 3 - 10 * A4 + A3 * A4 / 3)),
        6: (-56 + 4 * B[3] + 20 * B[8] - 2 * B[10] - 6 * B[14] + B[15] + B[19]
            + 2 * k / 3 * (-100 + A2 ** 2 + 10 * A3 - A2 * A3 + 10 * A4 - A2 * A4)),
        7: (Fraction(28, 3) + B[16] / 2 + B[17] + B[20] - 7 * B[3] / 3 + B[6] / 3
            + k / 18 * (-300 + 70 * A2 - A2 ** 2 - A2 * A3 - 3 * A1 * A4 + 6 * A2 * A4)),
    }
    return {j: simplify(v) for j, v in lam.items()}


def obstruction(m: ModelCoefficients, printed: bool = False,
                first: Optional[FirstOrderResult] = None) -> Scalar:
    """The scalar ``r`` whose vanishing allows ``R(U) = 0`` at order h^6.

    By default ``r = -3 v7 . (B + kappa tildeB - w)``, the seventh solvability
    condition.  With ``printed=True`` the closed form is evaluated literally as
    it is usually quoted, including its doubled ``B3`` and ``B5`` terms; that
    version disagrees with the solvability condition whenever
    ``-72 B3 + 27 B5 != 0``.
    """
    A1, A2, A3, _ = map(_p, m.A)
    B = [None] + [_p(x) for x in m.B]
    k = _p(m.kappa)
    if printed:
        r = (1680 - 72 * B[1] + 180 * B[2] - 510 * B[3] - 72 * B[3] + 27 * B[5]
             - 72 * B[4] + 27 * B[5] + 24 * B[6] - 9 * B[7]
             + k * (-2400 + 6 * A1 ** 2 + 670 * A2 - 30 * A1 * A2 - 4 * A2 ** 2
                    - 60 * A3 + 3 * A1 * A3 - A2 * A3))
        return simplify(r)
    first = first or solve_first_order(m)
    tb = tilde_b_formulas(m.A, first.a)
    total = sum((c * (B[i + 1] + k * _p(tb[i]) - W0[i]) for i, c in enumerate(V_PRINTED[6])),
                DiffPoly())
    return simplify(-3 * total)


def orthogonality_conditions(m: ModelCoefficients, tildeB: Sequence[Scalar],
                             lam: Dict[int, Scalar]) -> List[Scalar]:
    """``(B + kappa tildeB - w(lam)) . v_j`` for ``j = 1..7``."""
    ls = LinearSystem(linalg.as_matrix(M_PRINTED), linalg.as_matrix(V_PRINTED), 13)
    w = ls.w(lam)
    k = _p(m.kappa)
    diff = [_p(b) + k * _p(t) - _p(wi) for b, t, wi in zip(m.B, tildeB, w)]
    return [simplify(sum((c * d for c, d in zip(vj, diff) if c), DiffPoly()))
            for vj in ls.v]


def n7_target(m: ModelCoefficients, lam: Dict[int, Scalar], rho: Scalar) -> DiffPoly:
    L = {j: _p(v) for j, v in lam.items()}
    k3 = kdv_field(3)
    body = (kdv_field(7) + L[1] * parse("av(u)") * kdv_field(5)
            + L[2] * parse("av(u^2)") * k3 + L[3] * parse("av(u)^2") * k3
            + L[4] * parse("(av(u_x^2) - 2*av(u^3))*u_x")
            + L[5] * parse("av(u)*av(u^2)*u_x") + L[6] * parse("av(u)^3*u_x")
            + L[7] * parse("av(u_x^3)") + _p(rho) * parse("u^3*u_x"))
    return _p(m.C[3]) * body


def solve_second_order(m: ModelCoefficients, first: Optional[FirstOrderResult] = None,
                       lambda4: Scalar = 0, system: Optional[LinearSystem] = None
                       ) -> SecondOrderResult:
    """Find ``G4`` and the hierarchy scalars at order h^6.

    The obstruction is parked on ``U^3 U_x`` with coefficient ``rho``, which
    makes the system square and uniquely solvable for every input.

    Raises
    ------
    VerificationError
        If the solved ``lam`` differ from their closed forms, ``rho`` is not
        ``-r/9``, or ``N7`` does not have the expected shape.
    """
    first = first or solve_first_order(m)
    system = system or build_linear_system()
    tb = compute_r6(m, first)
    sq = _square_system(system)
    if linalg.det(sq) == 0:
        raise linalg.SingularSystemError("augmented order-h^6 system is singular")
    k = _p(m.kappa)
    w = system.w({4: lambda4})
    rhs = [_p(wi) - _p(b) - k * _p(t) for wi, b, t in zip(w, m.B, tb)]
    x = [simplify(v) for v in _apply(_inverse(sq), rhs)]
    b = x[:13]
    lam = dict(zip((1, 2, 3, 5, 6, 7), x[13:19]))
    lam[4] = simplify(_p(lambda4))
    lam = dict(sorted(lam.items()))
    rho = x[19]

    formulas = lambda_formulas(m, lambda4)
    bad = [j for j in lam if _p(lam[j]) != _p(formulas[j])]
    if bad:
        raise VerificationError(f"lambda {bad} disagree with closed forms")
    r = obstruction(m, first=first)
    if _p(rho) != -_p(r) / 9:
        raise VerificationError("rho is not proportional to the obstruction")

    _, c3, _, c7 = map(_p, m.C)
    G4 = (c7 / c3) * sum((_p(bi) * parse(x) for bi, x in zip(b, G4_BASIS)), DiffPoly())
    F = model_field(m)
    r6 = lie_bracket(first.G2, F[4] + first.N5) / 2
    N7 = F[6] + r6 + lie_bracket(G4, F[2])
    if N7 != n7_target(m, lam, rho):
        raise VerificationError("F7 + R6 + [G4, F3] is not in normal form")
    return SecondOrderResult(tb, b, lam, rho, r, G4, N7)


# ---------------------------------------------------------------------------
# constants of motion

@dataclass
class ConservedCoefficients:
    """Scalar prefactors of ``K1, K3, K5, K7`` in the normal form."""

    C1: HSeries
    C3: HSeries
    C5: HSeries
    C7: HSeries

    def as_dict(self) -> Dict[str, HSeries]:
        return {"C1": self.C1, "C3": self.C3, "C5": self.C5, "C7": self.C7}

    def is_average_only(self) -> bool:
        return all(c.is_average_only() for s in self.as_dict().values()
                   for c in s.coeffs.values())


def conserved_coefficients(m: ModelCoefficients, first: FirstOrderResult,
                           second: SecondOrderResult, printed: bool = False
                           ) -> ConservedCoefficients:
    """Prefactors ``calC_j(U, h)`` of the hierarchy fields.

    By default the prefactors are read off the normalised field, so that
    ``calC1 K1 + h^2 calC3 K3 + h^4 calC5 K5 + h^6 calC7 K7`` equals it up to the
    ``<U_x^3>`` and ``U^3 U_x`` terms.  Corrections generated at order ``h^4``
    carry ``C5`` and those at ``h^6`` carry ``C7``.

    With ``printed=True`` every correction is instead scaled by the leading
    coefficient of its own series (``C1 (1 + h^4 (...))`` and so on), which is
    how the closed forms are usually written.  The two agree only when
    ``C1 = C3 = C5 = C7``.
    """
    c1, c3, c5, c7 = map(_p, m.C)
    t4, t5, t6 = map(_p, first.tildeA)
    L = {j: _p(v) for j, v in second.lam.items()}
    avg = {s: parse(s) for s in ("av(u)", "av(u^2)", "av(u)^2", "av(u)^3",
                                 "av(u)*av(u^2)", "av(u_x^2) - 2*av(u^3)")}
    one4 = t4 * avg["av(u^2)"] + t5 * avg["av(u)^2"]
    one6 = (L[4] * avg["av(u_x^2) - 2*av(u^3)"] + L[5] * avg["av(u)*av(u^2)"]
            + L[6] * avg["av(u)^3"])
    three2 = t6 * avg["av(u)"]
    three4 = L[2] * avg["av(u^2)"] + L[3] * avg["av(u)^2"]
    five2 = L[1] * avg["av(u)"]
    if printed:
        return ConservedCoefficients(
            HSeries({0: c1, 4: c1 * one4, 6: c1 * one6}),
            HSeries({0: c3, 2: c3 * three2, 4: c3 * three4}),
            HSeries({0: c5, 2: c5 * five2}),
            HSeries({0: c7}),
        )
    return ConservedCoefficients(
        HSeries({0: c1, 4: c5 * one4, 6: c7 * one6}),
        HSeries({0: c3, 2: c5 * three2, 4: c7 * three4}),
        HSeries({0: c5, 2: c7 * five2}),
        HSeries({0: c7}),
    )


def hierarchy_field(cc: ConservedCoefficients, m: ModelCoefficients,
                    second: SecondOrderResult) -> HSeries:
    """Recombine the prefactors with ``K1..K7`` plus the non-hierarchy remainder."""
    out = HSeries({})
    for j, s in zip((1, 3, 5, 7), (cc.C1, cc.C3, cc.C5, cc.C7)):
        out = out + HSeries({j - 1: kdv_field(j)}) * s
    tail = _p(m.C[3]) * (_p(second.lam[7]) * parse("av(u_x^3)")
                         + _p(second.rho) * parse("u^3*u_x"))
    return out + HSeries({6: tail})


# ---------------------------------------------------------------------------
# transformations

def exp_ad(G: DiffPoly, F: HSeries, power: int) -> HSeries:
    """``exp(h^power [G, .]) F`` truncated at the order of ``F``."""
    out = F
    term = F
    n = 1
    while n * power < F.order:
        # brackets landing beyond the truncation order are never formed
        term = HSeries({e + power: lie_bracket(G, c) / n for e, c in term.coeffs.items()
                        if e + power < F.order}, F.order)
        if not term.coeffs:
            break
        out = out + term
        n += 1
    return out


def normalize(m: ModelCoefficients, lambda4: Scalar = 0):
    """Run both stages; returns ``(first, second, transformed_field)``."""
    first = solve_first_order(m)
    second = solve_second_order(m, first, lambda4)
    F = exp_ad(second.G4, exp_ad(first.G2, model_field(m), 2), 4)
    return first, second, F


# ---------------------------------------------------------------------------
# slaving function

def slaving_symbolic(order: int = 4):
    """Derive the slaving function ``c(U, h)`` and the reduced field.

    The invariance equation of the graph ``V = c(U, h)`` is solved order by
    order in the zero-average gauge.  At order ``h^(2k)`` the unknown ``c_2k``
    enters only through ``2 d/dx c_2k``; every other contribution is known, so
    ``c_2k`` is minus half the zero-average antiderivative of the rest.

    Returns
    -------
    c : HSeries
        ``c_2 h^2 + c_4 h^4`` (up to ``order``).
    reduced : HSeries
        ``F(U, c(U, h), h)`` through ``h^6``.

    Raises
    ------
    VerificationError
        If a candidate has nonzero average or the invariance residual does not
        vanish at the solved orders.
    """
    F = riemann_field()
    G = F.map(swap_uv)  # the V equation, V_t = -D_h[V + f(U + V)]
    c = HSeries({})
    for e in range(2, order + 1, 2):
        rest = invariance_residual(c, F, G)[e]
        ce = -antiderivative(rest) / 2
        if average(ce):
            raise VerificationError(f"gauge violation at order h^{e}")
        c = c + HSeries({e: ce})
    residual = invariance_residual(c, F, G)
    for e in range(0, order + 1, 2):
        if residual[e]:
            raise VerificationError(f"invariance residual at h^{e}: {to_text(residual[e])}")
    return c, hseries_compose(F, c)


def invariance_residual(c: HSeries, F: Optional[HSeries] = None,
                        G: Optional[HSeries] = None) -> HSeries:
    """``c'(U) F(U, c) + F(c, U)`` (zero on an invariant graph)."""
    F = F if F is not None else riemann_field()
    G = G if G is not None else F.map(swap_uv)
    reduced = hseries_compose(F, c)
    drift = HSeries({})
    for e, ce in c.coeffs.items():
        drift = drift + HSeries({e: 1}) * reduced.map(lambda p, ce=ce: gateaux(ce, p))
    return drift + hseries_compose(G, c)




# ---------------------------------------------------------------------------
# reporting

def report(m: ModelCoefficients, first: FirstOrderResult, second: SecondOrderResult,
           params: Optional[FPUTParameters] = None) -> dict:
    """JSON-ready summary with exact rational strings and canonical texts."""
    t = scalar_text
    out = {
        "A": [t(x) for x in m.A],
        "B": [t(x) for x in m.B],
        "C": [t(x) for x in m.C],
        "a": [t(x) for x in first.a],
        "tildeA": [t(x) for x in first.tildeA],
        "tildeB": [t(x) for x in second.tildeB],
        "b": [t(x) for x in second.b],
        "lambda": [t(second.lam[j]) for j in range(1, 8)],
        "rho": t(second.rho),
        "r": t(second.r),
        "r_printed": t(obstruction(m, printed=True)),
        "G4_average": to_text(second.G4_average),
        "G2": to_text(first.G2),
        "G4": to_text(second.G4),
        "N5": to_text(first.N5),
        "N7": to_text(second.N7),
    }
    if params is not None:
        out["parameters"] = {"alpha": t(params.alpha), "beta": t(params.beta),
                             "gamma": t(params.gamma)}
    return out
