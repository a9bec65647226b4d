"""The quasi-unidirectional manifold V = c(U, h) and how well it is invariant.

Run with ``python demos/02_slaving_manifold.py``.
"""
import numpy as np

from fputkdv import continuum as C
from fputkdv import normalform as nf
from fputkdv.diffpoly import to_text
from fputkdv.lattice import Potential

# Symbolic derivation: c2 and c4 solve the invariance equation order by order.
c, reduced = nf.slaving_symbolic()
for e, ce in c.coeffs.items():
    print(f"c_{e} =", to_text(ce))
print("reduced field, h^2 part:", to_text(reduced[2]))

# Numerical check: the residual of the invariance equation on a smooth profile
# falls like h^6 with the full slaving function and like h^4 without c4.
W = Potential(alpha=1.5, beta=1 / 3, gamma=-0.4)
x = C.grid(256)
U = np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x)
hs = [1 / 32, 1 / 64, 1 / 128, 1 / 256]
full = [C.invariance_residual(U, h, W) for h in hs]
cut = [C.invariance_residual(U, h, W, c_order=2) for h in hs]
print("\n   h        with c4     without c4")
for h, a, b in zip(hs, full, cut):
    print(f"  1/{round(1 / h):<4d} {a:11.3e} {b:11.3e}")
print("slopes:", round(C.fit_slope(hs, full).slope, 3), round(C.fit_slope(hs, cut).slope, 3))

# A flow started on the manifold keeps the means of both Riemann invariants.
h = 1 / 16
spec = C.FlowSpec(field="exact", h=h, potential=W, dt=1e-3)
res = C.integrate_flow(U, 0.5, spec, V0=C.slaving_c(U, h, W), record_every=50)
print("\nmean drift of (U, V) over t = 0.5:", np.max(np.abs(res.means - res.means[0]), axis=0))
