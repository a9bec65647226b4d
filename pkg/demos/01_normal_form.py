"""Normal form of the reduced FPUT field, step by step.

Run with ``python demos/01_normal_form.py``.  Everything printed here is
exact: rationals and canonical differential-polynomial text.
"""
from fractions import Fraction

from fputkdv import normalform as nf
from fputkdv.diffpoly import to_text

params = nf.FPUTParameters(Fraction(3, 2), Fraction(1, 3), Fraction(-2, 5))
model = nf.fput_to_model(params)
print("A =", [nf.scalar_text(a) for a in model.A])

# First step: a generator G2 pushes the h^4 part into the hierarchy.
first = nf.solve_first_order(model)
print("\nG2 =", to_text(first.G2))
print("N5 =", to_text(first.N5))

# Second step: G4 does the same at h^6, except for one direction that no
# generator reaches.  Its size is the obstruction r.
second = nf.solve_second_order(model, first)
print("\nlambda =", {j: nf.scalar_text(v) for j, v in second.lam.items()})
print("r =", nf.scalar_text(second.r), " rho = -r/9 =", nf.scalar_text(second.rho))
print("defect 14a^3 - 27ab + 12g =", nf.scalar_text(params.toda_defect))

# The generator G4 is not mean-free: its average is a combination of two
# integrals, so the normal coordinates shift <U> by h^4 <G4>.
print("<G4> =", to_text(second.G4_average))

# On the Toda family the obstruction disappears for every alpha.
for alpha in (Fraction(1), Fraction(-2, 3), Fraction(5)):
    toda = nf.solve_second_order(nf.fput_to_model(nf.FPUTParameters.toda(alpha)))
    print(f"Toda alpha = {alpha}: r = {nf.scalar_text(toda.r)}")

# With formal parameters the closed form appears directly.
symbolic = nf.fput_to_model(nf.FPUTParameters.symbolic())
print("\nr(alpha, beta, gamma) =", nf.scalar_text(nf.obstruction(symbolic)))

# The literal closed form with the doubled B3/B5 terms gives a different value.
print("r (literal closed form) =", nf.scalar_text(nf.obstruction(model, printed=True)))
