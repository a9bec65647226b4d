"""Pseudo-spectral realisation of the continuum FPUT fields on the circle.

Functions live on the uniform grid ``x_k = k/N`` of ``[0, 1)`` and are plain
float arrays (a :class:`GridFunction` is accepted wherever an array is).  All
derivatives, the half-step difference ``D_h`` and shifts are Fourier
multipliers, so they are exact for trigonometric polynomials below the Nyquist
mode.  The small parameter ``h`` is independent of the grid spacing.

Everything here is float64.  Closed-form fields are written out by hand so
that they can serve as an independent check on the exact symbolic engine; the
bridge between the two worlds is :func:`evaluate`.
"""
from __future__ import annotations

import csv
import json
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .lattice import BlowUpError, Potential

__all__ = [
    "FlowSpec",
    "FlowResult",
    "GridFunction",
    "RiemannState",
    "SlopeFit",
    "apply_dh",
    "apply_normal_coordinates",
    "deriv",
    "directional",
    "evaluate",
    "fit_slope",
    "from_riemann",
    "g6_drift_rate",
    "generator_g2",
    "generator_g4",
    "grid",
    "integrate_flow",
    "integrate_uv",
    "invariance_residual",
    "kdv_field",
    "kdv_integrals",
    "lattice_force_expanded",
    "lie_bracket_numeric",
    "model_field_numeric",
    "primitive",
    "random_bandlimited",
    "rhs_exact",
    "rhs_expanded",
    "rhs_normalized",
    "rhs_reduced",
    "rhs_uv",
    "shift",
    "slaving_c",
    "slaving_c_derivative",
    "to_riemann",
]

DH_TAYLOR = (1.0, 1 / 24, 1 / 1920, 1 / 322560)


# ---------------------------------------------------------------------------
# grid and spectral operators

@dataclass(frozen=True)
class GridFunction:
    """Samples of a real periodic function at ``x_k = k/N``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def N(self) -> int:
        return self.values.size

    @classmethod
    def from_function(cls, fn: Callable, N: int) -> "GridFunction":
        return cls(fn(grid(N)))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def grid(N: int) -> np.ndarray:
    return np.arange(N) / N


def _a(f) -> np.ndarray:
    return np.asarray(getattr(f, "values", f), dtype=float)


def _k(N: int) -> np.ndarray:
    """Integer wavenumbers of the real FFT."""
    return np.fft.rfftfreq(N, 1.0 / N)


def _symbol_power(N: int, m: int) -> np.ndarray:
    s = (2j * np.pi * _k(N)) ** m
    if m % 2 and N % 2 == 0:
        s[-1] = 0.0  # an odd operator has no real Nyquist image
    return s


def deriv(f, m: int = 1) -> np.ndarray:
    """``m``-th spectral derivative."""
    if m < 0:
        raise ValueError("derivative order must be non-negative")
    f = _a(f)
    if m == 0:
        return f.copy()
    return np.fft.irfft(np.fft.rfft(f) * _symbol_power(f.size, m), f.size)


def dh_symbol(N: int, h: float) -> np.ndarray:
    """Fourier multiplier ``2i sin(pi k h)/h`` of ``D_h``."""
    s = 2j * np.sin(np.pi * _k(N) * h) / h
    if N % 2 == 0:
        s[-1] = 0.0
    return s


def apply_dh(f, h: float) -> np.ndarray:
    """``(f(x + h/2) - f(x - h/2)) / h`` for band-limited ``f``."""
    if h <= 0:
        raise ValueError("h must be positive")
    f = _a(f)
    return np.fft.irfft(np.fft.rfft(f) * dh_symbol(f.size, h), f.size)


def shift(f, s: float) -> np.ndarray:
    """``f(x + s)``; a plain roll when ``s`` is a multiple of the grid spacing."""
    f = _a(f)
    N = f.size
    steps = s * N
    if abs(steps - round(steps)) < 1e-12:
        return np.roll(f, -int(round(steps)))
    m = np.exp(2j * np.pi * _k(N) * s)
    if N % 2 == 0:
        m[-1] = np.cos(np.pi * N * s)
    return np.fft.irfft(np.fft.rfft(f) * m, N)


def primitive(f) -> np.ndarray:
    """Zero-mean primitive of ``f - mean(f)``."""
    f = _a(f)
    N = f.size
    fh = np.fft.rfft(f)
    s = _symbol_power(N, 1)
    out = np.zeros_like(fh)
    nz = s != 0
    out[nz] = fh[nz] / s[nz]
    return np.fft.irfft(out, N)


def dealias(f) -> np.ndarray:
    """Zero every mode with ``|k| > N/3``."""
    f = _a(f)
    fh = np.fft.rfft(f)
    fh[_k(f.size) > f.size / 3] = 0
    return np.fft.irfft(fh, f.size)


def random_bandlimited(N: int, rng: np.random.Generator, kmax: int = 4,
                       amplitude: float = 0.5) -> np.ndarray:
    """Random real trigonometric polynomial with modes ``1..kmax`` and no mean."""
    x = grid(N)
    out = np.zeros(N)
    for k in range(1, kmax + 1):
        a, b = rng.normal(size=2) / k
        out += a * np.cos(2 * np.pi * k * x) + b * np.sin(2 * np.pi * k * x)
    return amplitude * out / max(np.max(np.abs(out)), 1e-300)


# ---------------------------------------------------------------------------
# Riemann invariants

@dataclass
class RiemannState:
    U: np.ndarray
    V: np.ndarray
    h: float
    alpha: float
    u_mean: float = 0.0


def to_riemann(u, v, h: float, alpha: float) -> RiemannState:
    """``U = 2 alpha (D_h u + v)``, ``V = 2 alpha (D_h u - v)``."""
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    u, v = _a(u), _a(v)
    du = apply_dh(u, h)
    return RiemannState(2 * alpha * (du + v), 2 * alpha * (du - v), h, alpha, float(u.mean()))


def from_riemann(s: RiemannState) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`to_riemann`; ``u`` gets back its carried mean."""
    U, V = _a(s.U), _a(s.V)
    v = (U - V) / (4 * s.alpha)
    du = (U + V) / (4 * s.alpha)
    N = U.size
    sym = dh_symbol(N, s.h)
    fh = np.fft.rfft(du)
    top = N // 2 if N % 2 == 0 else N // 2 + 1  # the Nyquist entry is zeroed by design
    if np.any(np.abs(sym[1:top]) < 1e-14 * np.abs(sym).max()):
        raise ValueError("D_h is not invertible for this h on this grid")
    out = np.zeros_like(fh)
    out[1:] = fh[1:] / np.where(sym[1:] == 0, 1, sym[1:])
    if N % 2 == 0:
        out[-1] = 0
    return np.fft.irfft(out, N) + s.u_mean, v


# ---------------------------------------------------------------------------
# exact and expanded two-wave fields

def _alpha(W: Potential) -> float:
    a = W.taylor[0]
    if a == 0:
        raise ValueError("alpha must be nonzero")
    return a


def force_f(z, h: float, W: Potential) -> np.ndarray:
    """``f(z, h) = 2 alpha h^-2 [W'(h^2 z/(4 alpha)) - h^2 z/(4 alpha)]``."""
    a = _alpha(W)
    out = 2 * a / h ** 2 * W.nonlinear_force(h * h * _a(z) / (4 * a))
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite value in the force law")
    return out


def _f_taylor(W: Potential) -> List[float]:
    """Coefficients of ``z^2 h^2``, ``z^3 h^4`` and ``z^4 h^6`` in ``f``."""
    a, b, g = W.taylor
    return [1 / 8, b / (32 * a * a), g / (128 * a ** 3)]


def rhs_exact(U, V, h: float, W: Potential) -> Tuple[np.ndarray, np.ndarray]:
    """``(D_h[U + f(U+V)], -D_h[V + f(U+V)])``."""
    U, V = _a(U), _a(V)
    f = force_f(U + V, h, W)
    return apply_dh(U + f, h), -apply_dh(V + f, h)


def _expanded_u(U, V, h, W, order):
    z = U + V
    coeffs = _f_taylor(W)
    out = np.zeros_like(U)
    for a in range(order // 2 + 1):
        out += DH_TAYLOR[a] * h ** (2 * a) * deriv(U, 2 * a + 1)
        for b in range(1, order // 2 - a + 1):
            out += DH_TAYLOR[a] * coeffs[b - 1] * h ** (2 * a + 2 * b) * deriv(z ** (b + 1), 2 * a + 1)
    return out


def rhs_expanded(U, V, h: float, W: Potential, order: int = 6):
    """Two-wave field expanded through ``h**order``, order in 0, 2, 4, 6."""
    if order not in (0, 2, 4, 6):
        raise ValueError("order must be 0, 2, 4 or 6")
    U, V = _a(U), _a(V)
    return _expanded_u(U, V, h, W, order), -_expanded_u(V, U, h, W, order)


def rhs_uv(u, v, h: float, W: Potential, form: str = "shift"):
    """Right-hand side of the interpolating system in ``(u, v)``.

    ``form="shift"`` evaluates ``h^-3 [W'(h(u(x+h) - u)) - W'(h(u - u(x-h)))]``
    literally.  ``form="dh"`` uses ``D_h D_h u + h^-2 D_h g(h^2 D_h u)`` with
    ``g(z) = W'(z) - z``, which avoids the ``h^-2`` cancellation in the linear
    part.
    """
    u, v = _a(u), _a(v)
    if form == "shift":
        up, um = shift(u, h), shift(u, -h)
        vt = (W.dW(h * (up - u)) - W.dW(h * (u - um))) / h ** 3
    elif form == "dh":
        du = apply_dh(u, h)
        vt = apply_dh(du, h) + apply_dh(W.nonlinear_force(h * h * du), h) / h ** 2
    else:
        raise ValueError(f"unknown form {form!r}")
    return v.copy(), vt


def integrate_uv(u0, v0, T: float, h: float, W: Potential, dt: float,
                 form: str = "shift") -> Tuple[np.ndarray, np.ndarray]:
    """Classical RK4 for the interpolating ``(u, v)`` system up to time ``T``."""
    if dt <= 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    u, v = _a(u0).copy(), _a(v0).copy()
    steps = max(int(round(T / dt)), 1) if T > 0 else 0
    dt = T / steps if steps else dt
    f = lambda a, b: rhs_uv(a, b, h, W, form)  # noqa: E731
    for _ in range(steps):
        k1 = f(u, v)
        k2 = f(u + dt / 2 * k1[0], v + dt / 2 * k1[1])
        k3 = f(u + dt / 2 * k2[0], v + dt / 2 * k2[1])
        k4 = f(u + dt * k3[0], v + dt * k3[1])
        u = u + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise BlowUpError("non-finite state in the (u, v) flow")
    return u, v


def lattice_force_expanded(u, h: float, W: Potential, order: int = 6) -> np.ndarray:
    """The perturbed wave equation for ``v_t``, truncated at ``h**order``."""
    a, b, g = W.taylor
    d = {k: deriv(u, k) for k in range(1, 9)}
    terms = {
        0: d[2],
        2: d[4] / 12 + 2 * a * d[1] * d[2],
        4: d[6] / 360 + a / 3 * d[2] * d[3] + a / 6 * d[1] * d[4] + 3 * b * d[1] ** 2 * d[2],
        6: (d[8] / 20160 + a / 36 * d[3] * d[4] + a / 60 * d[2] * d[5] + a / 180 * d[1] * d[6]
            + b / 4 * d[2] ** 3 + b * d[1] * d[2] * d[3] + b / 4 * d[1] ** 2 * d[4]
            + 4 * g * d[1] ** 3 * d[2]),
    }
    return sum(h ** e * t for e, t in terms.items() if e <= order)


# ---------------------------------------------------------------------------
# slaving relation and reduced field

def _c4_coeff(W: Potential) -> float:
    a, b, _ = W.taylor
    return 5 / 384 - b / (64 * a * a)


def slaving_c(U, h: float, W: Potential, order: int = 4) -> np.ndarray:
    """``c(U, h) = h^2 c_2(U) + h^4 c_4(U)`` (``order`` 2 drops ``c_4``)."""
    U = _a(U)
    m2 = np.mean(U * U)
    c = h * h * (m2 - U * U) / 16
    if order >= 4:
        Ux = deriv(U)
        c4 = (_c4_coeff(W) * (U ** 3 - np.mean(U ** 3)) - m2 * (U - U.mean()) / 128
              - (Ux * Ux - np.mean(Ux * Ux)) / 256)
        c = c + h ** 4 * c4
    return c


def slaving_c_derivative(U, H, h: float, W: Potential, order: int = 4) -> np.ndarray:
    """Gateaux derivative ``c'(U) H``, written out by hand."""
    U, H = _a(U), _a(H)
    out = h * h * (np.mean(U * H) - U * H) / 8
    if order >= 4:
        Ux, Hx = deriv(U), deriv(H)
        d4 = (3 * _c4_coeff(W) * (U * U * H - np.mean(U * U * H))
              - (2 * np.mean(U * H) * (U - U.mean()) + np.mean(U * U) * (H - H.mean())) / 128
              - (Ux * Hx - np.mean(Ux * Hx)) / 128)
        out = out + h ** 4 * d4
    return out


def rhs_reduced(U, h: float, W: Potential, order: int = 6) -> np.ndarray:
    """Closed evolution of ``U`` on the quasi-unidirectional manifold."""
    if order not in (0, 2, 4, 6):
        raise ValueError("order must be 0, 2, 4 or 6")
    a, b, g = W.taylor
    b2, g3 = b / a ** 2, g / a ** 3
    U = _a(U)
    d = {k: deriv(U, k) for k in range(1, 8)}
    m1, m2, m3 = U.mean(), np.mean(U * U), np.mean(U ** 3)
    mx2 = np.mean(d[1] ** 2)
    out = d[1].copy()
    if order >= 2:
        out += h ** 2 / 24 * (d[3] + 6 * U * d[1])
    if order >= 4:
        out += h ** 4 / 1920 * (d[5] + 60 * d[1] * d[2] + 20 * U * d[3]
                                + 90 * (2 * b2 - 1) * U * U * d[1] + 30 * m2 * d[1])
    if order >= 6:
        out += h ** 6 / 322560 * (
            d[7] + 420 * d[2] * d[3] + 210 * d[1] * d[4] + 42 * U * d[5]
            + 315 * (8 * b2 - 5) * d[1] ** 3 + 630 * (12 * b2 - 7) * U * d[1] * d[2]
            + 630 * (2 * b2 - 1) * U * U * d[3] + 210 * (48 * g3 - 60 * b2 + 23) * U ** 3 * d[1]
            + 210 * m2 * (d[3] + (18 * b2 - 9) * U * d[1])
            + 105 * (3 * mx2 + (12 * b2 - 10) * m3 + 6 * m2 * m1) * d[1])
    return out


def invariance_residual(U, h: float, W: Potential, c_order: int = 4,
                        field: str = "expanded", norm: str = "sup") -> float:
    """Norm of ``c'(U) F(U, c) + F(c, U)`` on the candidate invariant graph.

    ``field`` selects the two-wave field: ``"expanded"`` (through ``h^6``) or
    ``"exact"``.  ``norm`` is ``"sup"`` or ``"l2"``.
    """
    U = _a(U)
    c = slaving_c(U, h, W, c_order)
    if field == "expanded":
        Ut, ct = rhs_expanded(U, c, h, W, 6)
    elif field == "exact":
        Ut, ct = rhs_exact(U, c, h, W)
    else:
        raise ValueError(f"unknown field {field!r}")
    # ct is -F(c, U); the invariance equation reads c'(U) U_t = ct
    r = slaving_c_derivative(U, Ut, h, W, c_order) - ct
    if norm == "sup":
        return float(np.max(np.abs(r)))
    return float(np.sqrt(np.mean(r * r)))


# ---------------------------------------------------------------------------
# KdV hierarchy

def kdv_field(U, which: int, linear: bool = True) -> np.ndarray:
    """``K_1``, ``K_3``, ``K_5`` or ``K_7``; ``linear=False`` drops the top derivative."""
    if which not in (1, 3, 5, 7):
        raise ValueError("which must be 1, 3, 5 or 7")
    U = _a(U)
    d = {k: deriv(U, k) for k in range(1, which)}
    d[which] = deriv(U, which) if linear else np.zeros_like(U)
    if which == 1:
        return d[1]
    if which == 3:
        return d[3] + 6 * U * d[1]
    if which == 5:
        return d[5] + 20 * d[1] * d[2] + 10 * U * d[3] + 30 * U * U * d[1]
    return (d[7] + 70 * d[2] * d[3] + 42 * d[1] * d[4] + 14 * U * d[5] + 70 * d[1] ** 3
            + 280 * U * d[1] * d[2] + 70 * U * U * d[3] + 140 * U ** 3 * d[1])


def kdv_integrals(U) -> Tuple[float, float, float]:
    """``(<U>, <U^2>, <U_x^2 - 2 U^3>)``."""
    U = _a(U)
    Ux = deriv(U)
    return float(U.mean()), float(np.mean(U * U)), float(np.mean(Ux * Ux - 2 * U ** 3))


# ---------------------------------------------------------------------------
# symbolic bridge

def evaluate(p, U, V=None, params: Optional[Mapping[str, float]] = None) -> np.ndarray:
    """Evaluate a :class:`~fputkdv.diffpoly.DiffPoly` on grid data.

    ``u``-factors read ``U``, ``v``-factors read ``V``; formal parameters are
    looked up in ``params``.  Averages are grid means and primitives are
    spectral antiderivatives, both exact for band-limited integrands below the
    Nyquist mode.
    """
    U = _a(U)
    data = {"u": U, "v": _a(V) if V is not None else None}
    params = dict(params or {})
    cache: Dict[Tuple[int, str], np.ndarray] = {}

    def factor(o, name):
        if (o, name) not in cache:
            if data[name] is None:
                raise ValueError(f"expression needs the variable {name!r}")
            cache[(o, name)] = deriv(data[name], o)
        return cache[(o, name)]

    def product(derivs):
        out = np.ones_like(U)
        for o, name in derivs:
            out = out * factor(o, name)
        return out

    total = np.zeros_like(U)
    for (derivs, avgs, prims, pars), c in p.items():
        s = float(c)
        for name, e in pars:
            if name not in params:
                raise KeyError(f"no value for parameter {name!r}")
            s *= float(params[name]) ** e
        for m in avgs:
            s *= float(np.mean(product(m)))
        arr = product(derivs)
        for m in prims:
            arr = arr * primitive(product(m))
        total = total + s * arr
    return total


def evaluate_series(series, h: float, U, V=None, params=None) -> np.ndarray:
    """Sum ``h^e * evaluate(coeff)`` over an :class:`~fputkdv.diffpoly.HSeries`."""
    return sum((h ** e * evaluate(c, U, V, params) for e, c in series.coeffs.items()),
               np.zeros_like(_a(U)))


def potential_params(W: Potential) -> Dict[str, float]:
    a, b, g = W.taylor
    return {"alpha": a, "beta": b, "gamma": g}


# ---------------------------------------------------------------------------
# hand-coded model fields and generators

def directional(fn: Callable[[np.ndarray], np.ndarray], U, H) -> np.ndarray:
    """``fn'(U) H`` by a five-point stencil, exact for maps of degree at most 4."""
    U, H = _a(U), _a(H)
    scale = np.max(np.abs(H))
    if scale == 0:
        return np.zeros_like(U)
    eps = max(np.max(np.abs(U)), 1.0) / scale
    f = lambda s: fn(U + s * eps * H)  # noqa: E731
    return (8 * (f(1) - f(-1)) - (f(2) - f(-2))) / (12 * eps)


def lie_bracket_numeric(f: Callable, g: Callable, U) -> np.ndarray:
    """``f'(U) g(U) - g'(U) f(U)`` for polynomial maps of degree at most 4."""
    return directional(f, U, g(U)) - directional(g, U, f(U))


def model_field_numeric(U, A: Sequence[float], B: Sequence[float], C: Sequence[float],
                        part: int) -> np.ndarray:
    """``F1``, ``F3``, ``F5`` or ``F7`` of the generic model, by hand."""
    U = _a(U)
    d = {k: deriv(U, k) for k in range(1, 8)}
    m1, m2, m3 = U.mean(), np.mean(U * U), np.mean(U ** 3)
    if part == 1:
        return C[0] * d[1]
    if part == 3:
        return C[1] * (d[3] + 6 * U * d[1])
    if part == 5:
        return C[2] * (d[5] + A[0] * d[1] * d[2] + A[1] * U * d[3] + A[2] * U * U * d[1]
                       + A[3] * m2 * d[1])
    if part == 7:
        B = [None] + list(B)
        return C[3] * (
            d[7] + B[1] * d[2] * d[3] + B[2] * d[1] * d[4] + B[3] * U * d[5] + B[4] * d[1] ** 3
            + B[5] * U * d[1] * d[2] + B[6] * U * U * d[3] + B[7] * U ** 3 * d[1]
            + m1 * (B[8] * d[5] + B[9] * d[1] * d[2] + B[10] * U * d[3] + B[11] * U * U * d[1])
            + m2 * (B[12] * d[3] + B[13] * U * d[1]) + m1 ** 2 * (B[14] * d[3] + B[15] * U * d[1])
            + (B[16] * m3 + B[17] * np.mean(d[1] ** 2) + B[18] * m1 * m2 + B[19] * m1 ** 3) * d[1]
            + B[20] * np.mean(d[1] ** 3))
    raise ValueError("part must be 1, 3, 5 or 7")


def generator_g2(U, a: Sequence[float], C3: float, C5: float) -> np.ndarray:
    """First normalising generator, by hand."""
    U = _a(U)
    m1, m2 = U.mean(), np.mean(U * U)
    return C5 / C3 * (a[0] * deriv(U, 2) + a[1] * (U * U - m2)
                      + a[2] * (deriv(U) * primitive(U) + m2 - m1 * m1)
                      + a[3] * m1 * (U - m1))


def generator_g4(U, b: Sequence[float], C3: float, C7: float) -> np.ndarray:
    """Second normalising generator, by hand."""
    U = _a(U)
    d1, d2 = deriv(U), deriv(U, 2)
    m1, m2, m3 = U.mean(), np.mean(U * U), np.mean(U ** 3)
    mx2 = np.mean(d1 * d1)
    pu = primitive(U)
    k3 = deriv(U, 3) + 6 * U * d1
    X = [
        deriv(U, 4),
        d1 * d1 - mx2,
        U * d2 + mx2,
        U ** 3 - m3,
        d1 * primitive(U * U) + m3 - m1 * m2,
        k3 * pu + 3 * m3 - mx2 - 3 * m2 * m1,
        m1 * d2,
        m1 * (U * U - m2),
        m1 * (d1 * pu + m2 - m1 * m1),
        m1 * m1 * (U - m1),
        m2 * (U - m1),
        mx2 + 0 * U,
        m3 + 0 * U,
    ]
    return C7 / C3 * sum(bi * x for bi, x in zip(b, X))


# ---------------------------------------------------------------------------
# normal form on the grid

def _hseries_value(series, h, U, params):
    return float(np.mean(evaluate_series(series, h, U, None, params)))


def rhs_normalized(U, h: float, cc, rho: float = 0.0, lam7: float = 0.0,
                   params: Optional[Mapping[str, float]] = None) -> np.ndarray:
    """``calC1 K1 + h^2 calC3 K3 + h^4 calC5 K5 + h^6 calC7 (K7 + rho U^3 U_x)``.

    ``cc`` is a :class:`~fputkdv.normalform.ConservedCoefficients`; its
    averages are evaluated on ``U``.  ``lam7`` adds the spatially constant
    ``h^6 calC7 lam7 <U_x^3>`` term, which the time-dependent final change of
    variables removes; leave it at zero to integrate the fully reduced form.
    """
    U = _a(U)
    vals = [_hseries_value(s, h, U, params) for s in (cc.C1, cc.C3, cc.C5, cc.C7)]
    out = (vals[0] * kdv_field(U, 1) + h ** 2 * vals[1] * kdv_field(U, 3)
           + h ** 4 * vals[2] * kdv_field(U, 5)
           + h ** 6 * vals[3] * (kdv_field(U, 7) + rho * U ** 3 * deriv(U)))
    if lam7:
        out = out + h ** 6 * vals[3] * lam7 * np.mean(deriv(U) ** 3)
    return out


def g6_drift_rate(U, h: float, C7: float, lam7: float) -> float:
    """Rate ``-h^6 C7 lam7 <U_x^3>`` of the spatially constant final correction."""
    return float(-h ** 6 * C7 * lam7 * np.mean(deriv(U) ** 3))


def apply_normal_coordinates(U, G2: Callable, G4: Callable, h: float,
                             direction: str = "forward") -> np.ndarray:
    """Near-identity map ``U + h^2 G2 + h^4 (G4 + G2' G2 / 2)`` or its inverse.

    ``G2`` and ``G4`` are callables on grid arrays (for example
    ``lambda U: evaluate(first.G2, U, params=...)``).  The inverse is the
    truncated series ``W - h^2 G2(W) + h^4 (G2'(W) G2(W) / 2 - G4(W))``.
    """
    U = _a(U)
    g2 = G2(U)
    dd = directional(G2, U, g2)
    if direction == "forward":
        return U + h ** 2 * g2 + h ** 4 * (G4(U) + 0.5 * dd)
    if direction == "inverse":
        return U - h ** 2 * g2 + h ** 4 * (0.5 * dd - G4(U))
    raise ValueError("direction must be 'forward' or 'inverse'")


# ---------------------------------------------------------------------------
# time integration

@dataclass
class FlowSpec:
    """Which field to integrate and how.

    Parameters
    ----------
    field : {"exact", "expanded", "reduced", "kdv", "normalized"}
    h : float
    potential : Potential
    order : int
        Truncation order for ``expanded`` and ``reduced``.
    which : int
        Hierarchy member for ``kdv``.
    dt : float
    dealias : bool
        Apply the 2/3 rule to nonlinear terms.
    scheme : {"gauss6", "gauss4", "etdrk4"}
        Time stepper, see :func:`integrate_flow`.
    normal : dict, optional
        For ``normalized``: ``{"cc": ConservedCoefficients, "rho": float,
        "lam7": float, "params": dict}``.
    """

    field: str = "kdv"
    h: float = 0.1
    potential: Potential = dataclasses.field(default_factory=Potential)
    order: int = 6
    which: int = 3
    dt: float = 1e-4
    dealias: bool = True
    normal: Optional[dict] = None
    scheme: str = "gauss6"

    def describe(self) -> str:
        if self.field in ("expanded", "reduced"):
            return f"{self.field}{self.order}"
        if self.field == "kdv":
            return f"K{self.which}"
        return self.field


@dataclass
class FlowResult:
    t: np.ndarray
    U: np.ndarray
    V: Optional[np.ndarray]
    integrals: np.ndarray
    means: np.ndarray
    meta: dict = dataclasses.field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "I1", "I2", "I3", "mean_U", "mean_V"])
            for t, I, m in zip(self.t, self.integrals, self.means):
                w.writerow([repr(float(t)), *map(lambda x: repr(float(x)), I),
                            *map(lambda x: repr(float(x)), m)])
        path.with_suffix(".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        return path


def _taylor_dh_symbol(N: int, h: float, order: int) -> np.ndarray:
    return sum(DH_TAYLOR[a] * h ** (2 * a) * _symbol_power(N, 2 * a + 1)
               for a in range(order // 2 + 1))


def _splitting(spec: FlowSpec, N: int, U0: np.ndarray):
    """Linear Fourier symbols and the matching nonlinear remainders."""
    h, W = spec.h, spec.potential
    if spec.field == "exact":
        L = dh_symbol(N, h)

        def nl(U, V):
            f = force_f(U + V, h, W)
            fd = apply_dh(f, h)
            return fd, -fd
        return (L, -L), nl
    if spec.field == "expanded":
        L = _taylor_dh_symbol(N, h, spec.order)

        def nl(U, V):
            Ut, Vt = rhs_expanded(U, V, h, W, spec.order)
            lin = np.fft.irfft(np.fft.rfft(U) * L, N), np.fft.irfft(np.fft.rfft(V) * L, N)
            return Ut - lin[0], Vt + lin[1]
        return (L, -L), nl
    if spec.field == "reduced":
        L = _taylor_dh_symbol(N, h, spec.order)

        def nl(U):
            return rhs_reduced(U, h, W, spec.order) - np.fft.irfft(np.fft.rfft(U) * L, N)
        return (L,), nl
    if spec.field == "kdv":
        L = _symbol_power(N, spec.which)

        def nl(U):
            return kdv_field(U, spec.which, linear=False)
        return (L,), nl
    if spec.field == "normalized":
        nm = spec.normal or {}
        cc, rho, lam7, params = nm["cc"], nm.get("rho", 0.0), nm.get("lam7", 0.0), nm.get("params")
        vals = [_hseries_value(s, h, U0, params) for s in (cc.C1, cc.C3, cc.C5, cc.C7)]
        L = sum(h ** (j - 1) * c * _symbol_power(N, j) for j, c in zip((1, 3, 5, 7), vals))

        def nl(U):
            full = rhs_normalized(U, h, cc, rho, lam7, params)
            return full - np.fft.irfft(np.fft.rfft(U) * L, N)
        return (L,), nl
    raise ValueError(f"unknown field {spec.field!r}")


def _etd_coefficients(L: np.ndarray, dt: float, M: int = 64):
    """ETDRK4 weights by contour averaging, free of cancellation for small ``L dt``."""
    roots = np.exp(2j * np.pi * (np.arange(M) + 0.5) / M)
    z = L[:, None] * dt + roots[None, :]
    ez = np.exp(z)
    Q = dt * np.mean((np.exp(z / 2) - 1) / z, axis=1)
    f1 = dt * np.mean((-4 - z + ez * (4 - 3 * z + z * z)) / z ** 3, axis=1)
    f2 = dt * np.mean((2 + z + ez * (z - 2)) / z ** 3, axis=1)
    f3 = dt * np.mean((-4 - 3 * z - z * z + ez * (4 - z)) / z ** 3, axis=1)
    return np.exp(L * dt), np.exp(L * dt / 2), Q, f1, f2, f3


def _gauss_tableau(stages: int):
    """Butcher tableau ``(A, b, c)`` of the ``stages``-stage Gauss-Legendre method."""
    x, w = np.polynomial.legendre.leggauss(stages)
    c, b = (x + 1) / 2, w / 2
    # collocation: A[i, j] is the integral over [0, c_i] of the j-th Lagrange basis polynomial
    V = np.vander(c, stages, increasing=True)
    powers = np.arange(1, stages + 1)
    A = (c[:, None] ** powers[None, :] / powers[None, :]) @ np.linalg.inv(V)
    return A, b, c


_GAUSS_STAGES = {"gauss4": 2, "gauss6": 3}


def _gauss_factors(symbols, dt, stages):
    """Tableau and phase factors of the integrating-factor Gauss-Legendre step."""
    A, b, c = _gauss_tableau(stages)
    Ec = [[np.exp(L * ci * dt) for L in symbols] for ci in c]
    Eij = [[[np.exp(L * (c[i] - c[j]) * dt) for L in symbols] for j in range(stages)]
           for i in range(stages)]
    Eb = [[np.exp(L * (1 - ci) * dt) for L in symbols] for ci in c]
    return A, b, Ec, Eij, Eb, [np.exp(L * dt) for L in symbols]


def _gauss_step(y, factors, dt, N_hat, K, tol):
    """One integrating-factor Gauss-Legendre step, stages by fixed point."""
    A, b, Ec, Eij, Eb, E = factors
    s = len(b)
    m_range = range(len(y))
    for _ in range(100):
        Y = [[Ec[i][m] * y[m] + dt * sum(A[i, j] * Eij[i][j][m] * K[j][m] for j in range(s))
              for m in m_range] for i in range(s)]
        Kn = [N_hat(Yi) for Yi in Y]
        delta = max(float(np.max(np.abs(Kn[i][m] - K[i][m]))) for i in range(s) for m in m_range)
        K = Kn
        if delta <= tol:
            break
    else:
        raise BlowUpError("Gauss-Legendre stage iteration did not converge; reduce dt")
    out = [E[m] * y[m] + dt * sum(b[i] * Eb[i][m] * K[i][m] for i in range(s)) for m in m_range]
    return out, K


def _etd_step(y, coef, N_hat):
    Nv = N_hat(y)
    a = [E2 * v + Q * nv for (E, E2, Q, *_), v, nv in zip(coef, y, Nv)]
    Na = N_hat(a)
    b = [E2 * v + Q * na for (E, E2, Q, *_), v, na in zip(coef, y, Na)]
    Nb = N_hat(b)
    c = [E2 * ai + Q * (2 * nb - nv) for (E, E2, Q, *_), ai, nb, nv in zip(coef, a, Nb, Nv)]
    Nc = N_hat(c)
    return [E * v + f1 * nv + 2 * f2 * (na + nb) + f3 * nc
            for (E, _, _, f1, f2, f3), v, nv, na, nb, nc in zip(coef, y, Nv, Na, Nb, Nc)]


def integrate_flow(U0, T: float, spec: FlowSpec, V0=None, record_every: int = 0,
                   max_norm: float = 1e8) -> FlowResult:
    """Fixed-step integration in Fourier space.

    The stiff linear part of each field is integrated exactly.  The nonlinear
    remainder is handled by one of three Runge-Kutta schemes:

    * ``gauss6`` (default) and ``gauss4``: implicit three- and two-stage
      Gauss-Legendre in integrating-factor variables, of order 6 and 4.  Both
      keep quadratic invariants such as ``<U^2>`` of the KdV flows to rounding;
      the higher order matters for the cubic integral ``I3``.
    * ``etdrk4``: the explicit Cox-Matthews exponential scheme, cheaper per
      step but with a visibly larger drift of the integrals.

    With ``dealias`` on, nonlinear terms lose every mode above ``N/3``.

    Records ``kdv_integrals(U)`` and the means of ``U`` and ``V`` every
    ``record_every`` steps (and at both ends).
    """
    if spec.dt <= 0:
        raise ValueError("dt must be positive")
    if T <= 0:
        raise ValueError("T must be positive")
    if spec.scheme not in ("gauss4", "gauss6", "etdrk4"):
        raise ValueError(f"unknown scheme {spec.scheme!r}")
    U0 = _a(U0).copy()
    N = U0.size
    two = spec.field in ("exact", "expanded")
    if two:
        V0 = np.zeros(N) if V0 is None else _a(V0).copy()
    symbols, nl = _splitting(spec, N, U0)
    steps = max(int(round(T / spec.dt)), 1)
    dt = T / steps
    mask = _k(N) <= N / 3 if spec.dealias else np.ones(N // 2 + 1, dtype=bool)
    symbols = [np.asarray(L, dtype=complex) for L in symbols]
    if spec.scheme == "etdrk4":
        coef = [_etd_coefficients(L, dt) for L in symbols]
    else:
        factors = _gauss_factors(symbols, dt, _GAUSS_STAGES[spec.scheme])

    def N_hat(states_hat):
        out = nl(*[np.fft.irfft(s, N) for s in states_hat])
        out = out if isinstance(out, tuple) else (out,)
        return [np.fft.rfft(o) * mask for o in out]

    y = [np.fft.rfft(U0)] + ([np.fft.rfft(V0)] if two else [])
    rec_t, rec_I, rec_m = [], [], []

    def record(t):
        U = np.fft.irfft(y[0], N)
        V = np.fft.irfft(y[1], N) if two else None
        rec_t.append(t)
        rec_I.append(kdv_integrals(U))
        rec_m.append((U.mean(), V.mean() if two else 0.0))

    record(0.0)
    every = record_every or steps
    K = None
    for n in range(1, steps + 1):
        if spec.scheme in _GAUSS_STAGES:
            if K is None:
                K = [N_hat(y)] * _GAUSS_STAGES[spec.scheme]
            scale = max(float(np.max(np.abs(k))) for Ki in K for k in Ki)
            y, K = _gauss_step(y, factors, dt, N_hat, K, 1e-14 * max(scale, 1.0))
        else:
            y = _etd_step(y, coef, N_hat)
        if n % every == 0 or n == steps:
            big = max(float(np.max(np.abs(s))) for s in y) / N
            if not np.isfinite(big) or big > max_norm:
                raise BlowUpError(f"spectral amplitude {big:.3g} exceeded {max_norm:g} "
                                  f"at t = {n * dt:.6g} in the {spec.describe()} flow")
            record(n * dt)
    U = np.fft.irfft(y[0], N)
    V = np.fft.irfft(y[1], N) if two else None
    meta = {"N": N, "dt": dt, "steps": steps, "T": T, "dealias": spec.dealias,
            "field": spec.describe(), "h": spec.h, "scheme": spec.scheme,
            "potential": {"kind": spec.potential.kind, "alpha": spec.potential.alpha,
                          "beta": spec.potential.beta, "gamma": spec.potential.gamma}}
    return FlowResult(np.array(rec_t), U, V, np.array(rec_I), np.array(rec_m), meta)


# ---------------------------------------------------------------------------
# convergence diagnostics

@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    h_range: Tuple[float, float]
    stderr: float = 0.0

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "h_range": list(self.h_range), "stderr": self.stderr}


def fit_slope(hs: Sequence[float], errors: Sequence[float]) -> SlopeFit:
    """Least-squares fit of ``log(error)`` against ``log(h)``."""
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    if len(hs) < 2 or np.any(errors <= 0):
        raise ValueError("need at least two positive errors")
    res = stats.linregress(np.log(hs), np.log(errors))
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2),
                    (float(hs.min()), float(hs.max())), float(res.stderr))


def write_scan(path, hs: Sequence[float], columns: Mapping[str, Sequence[float]],
               meta: Mapping) -> Path:
    """CSV with ``h`` first, then one column per observable, plus JSON metadata."""
    path = Path(path)
    names = list(columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", *names])
        for i, h in enumerate(hs):
            w.writerow([repr(float(h)), *(repr(float(columns[n][i])) for n in names)])
    path.with_suffix(".json").write_text(json.dumps(dict(meta), indent=2, sort_keys=True))
    return path
