"""Symbolic vector fields of the FPUT continuum problem.

Everything is an exact :class:`~fputkdv.diffpoly.DiffPoly` or
:class:`~fputkdv.diffpoly.HSeries` in the formal parameters ``alpha``,
``beta`` and ``gamma`` of the potential ``W(z) = z^2/2 + alpha z^3/3 +
beta z^4/4 + gamma z^5/5``.  Two kinds of objects live here: the closed-form
expressions as they are usually quoted (``*_printed``), and constructions that
derive the same objects from the difference operator and the force law.
"""
from __future__ import annotations

from fractions import Fraction

from .diffpoly import DiffPoly, HSeries, dx, parse

KDV_TEXT = {
    1: "u_x",
    3: "u_3x + 6*u*u_x",
    5: "u_5x + 20*u_x*u_2x + 10*u*u_3x + 30*u^2*u_x",
    7: "u_7x + 70*u_2x*u_3x + 42*u_x*u_4x + 14*u*u_5x + 70*u_x^3"
       " + 280*u*u_x*u_2x + 70*u^2*u_3x + 140*u^3*u_x",
}

# Taylor coefficients of D_h = sum_k DH_COEFFS[k] h^(2k) d^(2k+1)/dx^(2k+1)
DH_COEFFS = [Fraction(1, 4 ** k * _f) for k, _f in enumerate((1, 6, 120, 5040))]


def kdv_field(j: int) -> DiffPoly:
    """``K_j`` for ``j`` in 1, 3, 5, 7."""
    return parse(KDV_TEXT[j])


def kdv_integrals():
    """The three KdV integrals ``<U>``, ``<U^2>`` and ``<U_x^2 - 2 U^3>``."""
    return parse("av(u)"), parse("av(u^2)"), parse("av(u_x^2 - 2*u^3)")


def apply_dh(series: HSeries) -> HSeries:
    """Apply the truncated expansion of ``D_h`` to an h-series."""
    out = HSeries({}, series.order)
    for k, d in enumerate(DH_COEFFS):
        shift = HSeries({2 * k: d}, series.order)
        out = out + shift * series.map(lambda p, k=k: dx(p, 2 * k + 1))
    return out


def force_nonlinearity(z: DiffPoly) -> HSeries:
    """Expansion of the rescaled nonlinear force ``f(z, h)``."""
    a = DiffPoly.param("alpha")
    b = DiffPoly.param("beta")
    g = DiffPoly.param("gamma")
    return HSeries({
        2: z ** 2 / 8,
        4: b / (32 * a ** 2) * z ** 3,
        6: g / (128 * a ** 3) * z ** 4,
    })


def riemann_field() -> HSeries:
    """``F(U, V, h) = D_h[U + f(U + V, h)]`` expanded through ``h^6``.

    ``U`` is the variable ``u`` and ``V`` the variable ``v``.
    """
    u = parse("u")
    v = parse("v")
    return apply_dh(HSeries({0: u}) + force_nonlinearity(u + v))


def swap_uv(p: DiffPoly) -> DiffPoly:
    """Exchange the roles of ``u`` and ``v`` in a two-variable polynomial."""
    out = {}
    for (derivs, avgs, prims, params), c in p.items():
        if avgs or prims:
            raise ValueError("swap_uv expects a local polynomial")
        swapped = tuple(sorted((o, "v" if n == "u" else "u") for o, n in derivs))
        out[(swapped, avgs, prims, params)] = c
    return DiffPoly(out)


def riemann_field_printed() -> HSeries:
    """The expanded two-wave field in its usual closed form."""
    s = "(u + v)"
    return HSeries({
        0: parse("u_x"),
        2: parse("1/24*u_3x") + dx(parse(f"1/8*{s}^2")),
        4: parse("1/1920*u_5x") + dx(parse(f"1/192*{s}^2"), 3)
           + dx(parse(f"1/32*beta*alpha^-2*{s}^3")),
        6: parse("1/322560*u_7x") + dx(parse(f"1/15360*{s}^2"), 5)
           + dx(parse(f"1/768*beta*alpha^-2*{s}^3"), 3)
           + dx(parse(f"1/128*gamma*alpha^-3*{s}^4")),
    })


def lattice_force_expansion() -> HSeries:
    """``v_t = h^-2 D_h W'(h^2 D_h u)`` expanded through ``h^6``.

    Built from ``W'(z) = z + alpha z^2 + beta z^3 + gamma z^4``.
    """
    du = apply_dh(HSeries({0: parse("u")}))
    out = du
    for power, (e, name) in enumerate(((2, "alpha"), (4, "beta"), (6, "gamma")), start=2):
        out = out + HSeries({e: DiffPoly.param(name)}) * _power(du, power)
    return apply_dh(out)


def _power(s: HSeries, n: int) -> HSeries:
    out = HSeries({0: 1}, s.order)
    for _ in range(n):
        out = out * s
    return out


def lattice_force_printed() -> HSeries:
    """The perturbed wave equation for ``v_t`` in its usual closed form."""
    return HSeries({
        0: parse("u_2x"),
        2: parse("1/12*u_4x + 2*alpha*u_x*u_2x"),
        4: parse("1/360*u_6x + 1/3*alpha*u_2x*u_3x + 1/6*alpha*u_x*u_4x + 3*beta*u_x^2*u_2x"),
        6: parse("1/20160*u_8x + 1/36*alpha*u_3x*u_4x + 1/60*alpha*u_2x*u_5x"
                 " + 1/180*alpha*u_x*u_6x + 1/4*beta*u_2x^3 + beta*u_x*u_2x*u_3x"
                 " + 1/4*beta*u_x^2*u_4x + 4*gamma*u_x^3*u_2x"),
    })


def slaving_printed() -> HSeries:
    """The slaving function ``c(U, h)`` through ``h^4`` in closed form."""
    return HSeries({
        2: parse("1/16*(av(u^2) - u^2)"),
        4: parse("(5/384 - 1/64*beta*alpha^-2)*(u^3 - av(u^3))"
                 " - 1/128*av(u^2)*(u - av(u)) - 1/256*(u_x^2 - av(u_x^2))"),
    })


def reduced_field_printed() -> HSeries:
    """The reduced field on the quasi-unidirectional manifold, through ``h^6``."""
    b2 = "beta*alpha^-2"
    g3 = "gamma*alpha^-3"
    return HSeries({
        0: parse("u_x"),
        2: parse("1/24*(u_3x + 6*u*u_x)"),
        4: parse(f"1/1920*(u_5x + 60*u_x*u_2x + 20*u*u_3x + 90*(2*{b2} - 1)*u^2*u_x"
                 " + 30*av(u^2)*u_x)"),
        6: parse(f"1/322560*(u_7x + 420*u_2x*u_3x + 210*u_x*u_4x + 42*u*u_5x"
                 f" + 315*(8*{b2} - 5)*u_x^3 + 630*(12*{b2} - 7)*u*u_x*u_2x"
                 f" + 630*(2*{b2} - 1)*u^2*u_3x + 210*(48*{g3} - 60*{b2} + 23)*u^3*u_x"
                 f" + 210*av(u^2)*(u_3x + (18*{b2} - 9)*u*u_x)"
                 f" + 105*(3*av(u_x^2) + (12*{b2} - 10)*av(u^3) + 6*av(u^2)*av(u))*u_x)"),
    })
