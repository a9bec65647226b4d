"""From the particle chain to the KdV flow.

Run with ``python demos/03_chain_and_kdv.py``.  Writes two CSV files into
the working directory for plotting elsewhere.
"""
import numpy as np

from fputkdv import continuum as C
from fputkdv import lattice as L

# A long wave on a chain of n = 64 particles and its continuum interpolation.
n, T = 64, 0.1
h = 1 / n
W = L.Potential(alpha=1.5, beta=1 / 3, gamma=-0.4)
x = C.grid(n)
u0 = 0.1 * np.sin(2 * np.pi * x) + 0.05 * np.cos(4 * np.pi * x)
v0 = C.deriv(u0)

# Continuum time t corresponds to t / h on the chain.
u, v = C.integrate_uv(u0, v0, T, h, W, dt=1e-4)
steps = int(round(T / h / 1e-3))
chain = L.integrate(L.sample_from_profile(u0, v0, h), W, T / h / steps, steps, stride=100)
print("max |q_j - h u(hj)| at t = 0.1:", np.max(np.abs(chain.final().q - h * u)))
chain.to_csv("chain.csv")

# Energy under Verlet stays put to rounding over long times.
long = L.integrate(chain.final(), W, 1e-3, 10000, stride=100)
print("relative energy drift over t = 10:", np.ptp(long.energy) / abs(long.energy[0]))

# Far enough out the right-going wave is governed by KdV; its flow keeps the
# three integrals <U>, <U^2> and <U_x^2 - 2 U^3>.
U0 = np.sin(2 * np.pi * C.grid(128)) + 0.3 * np.cos(4 * np.pi * C.grid(128))
res = C.integrate_flow(U0, 0.2, C.FlowSpec(field="kdv", which=3, dt=1e-4), record_every=100)
I = res.integrals
print("K3 integrals at t = 0:", I[0])
print("max drift:", np.max(np.abs(I - I[0]), axis=0))
res.to_csv("kdv.csv")
