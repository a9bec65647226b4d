"""The periodic FPUT chain and its Toda special case.

``q_j`` are positions, ``p_j`` momenta, indices are periodic modulo ``n`` and

    dq_j/dt = p_j,   dp_j/dt = W'(q_{j+1} - q_j) - W'(q_j - q_{j-1}).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

__all__ = [
    "BlowUpError",
    "ChainState",
    "Potential",
    "Trajectory",
    "energy",
    "integrate",
    "rhs",
    "sample_from_profile",
]


class BlowUpError(FloatingPointError):
    """Raised when a trajectory leaves the admissible range."""


def _expm1_minus_x(x):
    """``exp(x) - 1 - x`` without cancellation near zero."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.expm1(x) - x
    small = np.abs(x) < 0.1
    if np.any(small):
        xs = x[small]
        term = xs * xs / 2
        total = term.copy()
        for k in range(3, 14):
            term = term * xs / k
            total = total + term
        out[small] = total
    return out[0] if scalar else out


@dataclass(frozen=True)
class Potential:
    """Nearest-neighbour interaction.

    Parameters
    ----------
    kind : {"polynomial", "toda"}
        ``polynomial`` is ``z^2/2 + alpha z^3/3 + beta z^4/4 + gamma z^5/5``;
        ``toda`` is ``(exp(2 alpha z) - 1 - 2 alpha z) / (4 alpha^2)``.
    alpha, beta, gamma : float
        Taylor coefficients.  ``beta`` and ``gamma`` are ignored for ``toda``.
    """

    kind: str = "polynomial"
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "toda"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "toda" and self.alpha == 0:
            raise ValueError("the Toda potential needs alpha != 0")

    @classmethod
    def toda(cls, alpha: float = 1.0) -> "Potential":
        return cls("toda", alpha)

    @property
    def taylor(self):
        """``(alpha, beta, gamma)`` of the expansion of ``W``."""
        if self.kind == "toda":
            a = self.alpha
            return a, 2 * a * a / 3, a ** 3 / 3
        return self.alpha, self.beta, self.gamma

    def W(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "toda":
            a = self.alpha
            return _expm1_minus_x(2 * a * z) / (4 * a * a)
        return z ** 2 / 2 + self.alpha * z ** 3 / 3 + self.beta * z ** 4 / 4 + self.gamma * z ** 5 / 5

    def dW(self, z):
        """``W'(z)``."""
        return np.asarray(z, dtype=float) + self.nonlinear_force(z)

    def nonlinear_force(self, z):
        """``W'(z) - z``, computed without cancellation."""
        z = np.asarray(z, dtype=float)
        if self.kind == "toda":
            a = self.alpha
            return _expm1_minus_x(2 * a * z) / (2 * a)
        return z * z * (self.alpha + z * (self.beta + z * self.gamma))


@dataclass
class ChainState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape or self.q.ndim != 1:
            raise ValueError("q and p must be 1-d arrays of equal length")

    @property
    def n(self) -> int:
        return self.q.size

    def copy(self) -> "ChainState":
        return ChainState(self.q.copy(), self.p.copy())


def _force(q: np.ndarray, W: Potential) -> np.ndarray:
    f = W.dW(np.roll(q, -1) - q)
    return f - np.roll(f, 1)


def rhs(s: ChainState, W: Potential):
    """Time derivative ``(dq, dp)`` of a chain state."""
    if s.n < 2:
        raise ValueError("a chain needs at least two particles")
    if not (np.all(np.isfinite(s.q)) and np.all(np.isfinite(s.p))):
        raise BlowUpError("non-finite chain state")
    return s.p.copy(), _force(s.q, W)


def energy(s: ChainState, W: Potential) -> float:
    """Total energy ``sum_j p_j^2/2 + W(q_{j+1} - q_j)``."""
    return float(np.sum(s.p ** 2) / 2 + np.sum(W.W(np.roll(s.q, -1) - s.q)))


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    meta: dict = field(default_factory=dict)

    def final(self) -> ChainState:
        return ChainState(self.q[-1].copy(), self.p[-1].copy())

    def to_csv(self, path) -> Path:
        """Write ``t, j, q, p`` rows and a JSON sidecar next to it."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "j", "q", "p"])
            for k, t in enumerate(self.t):
                for j in range(self.q.shape[1]):
                    w.writerow([repr(float(t)), j, repr(float(self.q[k, j])), repr(float(self.p[k, j]))])
        sidecar = dict(self.meta)
        sidecar["energy"] = [float(e) for e in self.energy]
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        return path


def integrate(s: ChainState, W: Potential, dt: float, steps: int, scheme: str = "verlet",
              stride: Optional[int] = None, max_norm: float = 1e6) -> Trajectory:
    """Fixed-step integration of the chain.

    Parameters
    ----------
    s : ChainState
        Initial state (not modified).
    W : Potential
    dt : float
        Time step, positive.
    steps : int
        Number of steps.
    scheme : {"verlet", "rk4"}
        Velocity Verlet (symplectic, default) or classical Runge-Kutta.
    stride : int, optional
        Record every ``stride`` steps; defaults to recording only the ends.
    max_norm : float
        Abort with :class:`BlowUpError` when ``max |q|, |p|`` exceeds this.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in ("verlet", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    stride = stride or max(steps, 1)
    q, p = s.q.copy(), s.p.copy()
    ts: List[float] = [0.0]
    qs, ps, es = [q.copy()], [p.copy()], [energy(ChainState(q, p), W)]
    f = _force(q, W)
    for k in range(1, steps + 1):
        if scheme == "verlet":
            p_half = p + 0.5 * dt * f
            q = q + dt * p_half
            f = _force(q, W)
            p = p_half + 0.5 * dt * f
        else:
            k1q, k1p = p, _force(q, W)
            k2q, k2p = p + 0.5 * dt * k1p, _force(q + 0.5 * dt * k1q, W)
            k3q, k3p = p + 0.5 * dt * k2p, _force(q + 0.5 * dt * k2q, W)
            k4q, k4p = p + dt * k3p, _force(q + dt * k3q, W)
            q = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
            p = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        if k % stride == 0 or k == steps:
            big = max(np.max(np.abs(q)), np.max(np.abs(p)))
            if not np.isfinite(big) or big > max_norm:
                raise BlowUpError(f"state norm {big:.3g} exceeded {max_norm:g} at step {k}")
            ts.append(k * dt)
            qs.append(q.copy())
            ps.append(p.copy())
            es.append(energy(ChainState(q, p), W))
    meta = {"n": s.n, "h": 1.0 / s.n, "potential": W.__dict__.copy(), "scheme": scheme,
            "dt": dt, "steps": steps}
    return Trajectory(np.array(ts), np.array(qs), np.array(ps), np.array(es), meta)


def sample_from_profile(u, v, h: float) -> ChainState:
    """Chain state ``q_j = h u(h j)``, ``p_j = h^2 v(h j)`` from grid profiles.

    ``u`` and ``v`` are arrays on the uniform grid ``x_k = k/N`` (or objects
    with a ``values`` attribute).  ``n = 1/h`` must be an integer dividing ``N``.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    v = np.asarray(getattr(v, "values", v), dtype=float)
    n = round(1 / h)
    if n < 1 or abs(n * h - 1) > 1e-12:
        raise ValueError("1/h must be a positive integer")
    N = u.size
    if v.size != N or N % n:
        raise ValueError(f"grid of size {N} is incommensurate with n = {n}")
    step = N // n
    return ChainState(h * u[::step], h * h * v[::step])
