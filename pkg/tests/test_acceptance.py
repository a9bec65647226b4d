"""Acceptance criteria, one test and one PASS/FAIL line each, at the stated tolerances.

Numerical criteria run through the command-line driver in-process, so they
exercise the same code path as ``fputkdv <subcommand>``.
"""
import itertools
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from fputkdv import cli
from fputkdv import continuum as C
from fputkdv import linalg
from fputkdv import normalform as nf
from fputkdv.diffpoly import DiffPoly, average, lie_bracket, parse
from fputkdv.fields import kdv_field, reduced_field_printed, slaving_printed
from fputkdv.lattice import Potential
from fputkdv.tables import TABLE1, TABLE2, TABLE3, verify_tables

F = Fraction
FPUT = nf.FPUTParameters(F(3, 2), F(1, 3), F(-2, 5))
FPUT_W = Potential(alpha=1.5, beta=1 / 3, gamma=-0.4)


def _cli(tmp_path, *args):
    ns = cli.build_parser().parse_args(cli._join_negative_values([*args, "--out", str(tmp_path)]))
    rep, _ = cli.run_subcommand(cli.config_from_args(ns))
    return rep


def test_criterion_01_tables(acceptance):
    t = time.perf_counter()
    rows = verify_tables()
    elapsed = time.perf_counter() - t
    ok = sum(r.passed for r in rows)
    counts = (len(TABLE1), len(TABLE2), len(TABLE3))
    passed = ok == 45 and counts == (4, 28, 13) and elapsed < 10
    assert acceptance(1, "bracket tables", passed,
                      f"{ok}/{len(rows)} rows, tables of {counts}", elapsed)


def test_criterion_02_commutativity(acceptance):
    t = time.perf_counter()
    bad = [(i, j) for i, j in itertools.combinations((1, 3, 5, 7), 2)
           if lie_bracket(kdv_field(i), kdv_field(j))]
    elapsed = time.perf_counter() - t
    assert acceptance(2, "[Ki, Kj] = 0", not bad and elapsed < 60,
                      f"nonzero pairs: {bad or 'none'}", elapsed)


def test_criterion_03_first_order(acceptance):
    t = time.perf_counter()
    m = nf.ModelCoefficients.symbolic()
    first = nf.solve_first_order(m)
    a, tilde = nf.first_order_formulas(m.A)
    Fm = nf.model_field(m)
    checks = {
        "a closed form": [nf._p(x) for x in first.a] == [nf._p(x) for x in a],
        "tildeA closed form": [nf._p(x) for x in first.tildeA] == [nf._p(x) for x in tilde],
        "F5 + [G2, F3] = N5": Fm[4] + lie_bracket(first.G2, Fm[2]) == nf.n5_target(m, tilde),
        "<G2> = 0": not average(first.G2),
    }
    elapsed = time.perf_counter() - t
    failed = [k for k, v in checks.items() if not v]
    assert acceptance(3, "first-order normal form (symbolic A, C)", not failed,
                      f"failed: {failed or 'none'}", elapsed)


def test_criterion_04_second_order(acceptance):
    t = time.perf_counter()
    checks = {}
    sym = nf.ModelCoefficients.symbolic()
    first = nf.solve_first_order(sym)
    tb_bracket = nf.compute_r6(sym, first)  # raises if the bracket disagrees
    tb = nf.tilde_b_formulas(sym.A, first.a)
    checks["tildeB from brackets"] = [nf._p(x) for x in tb_bracket] == [nf._p(x) for x in tb]
    slots = sum((nf._p(c) * parse(s) for c, s in zip(tb, nf.B_SLOTS)), DiffPoly())
    checks["zero-average identity"] = not average(slots)
    ls = nf.build_linear_system()
    checks["M from brackets"] = ls.M == ls.M_from_brackets
    checks["v_i M = 0"] = all(not any(linalg.matvec(linalg.transpose(ls.M), v)) for v in ls.v)
    checks["rank M = 13"] = ls.rank == 13
    second = nf.solve_second_order(sym, first)
    checks["lambda closed forms"] = all(
        nf._p(second.lam[j]) == nf._p(v) for j, v in nf.lambda_formulas(sym).items())

    fs = nf.FPUTParameters.symbolic()
    fm = nf.fput_to_model(fs)
    ff, fsec = nf.solve_first_order(fm), nf.solve_second_order(fm)
    alpha, beta = (DiffPoly.param(s) for s in ("alpha", "beta"))
    checks["lambda1 = 28"] = nf._p(fsec.lam[1]) == 28
    checks["lambda3 = 84"] = nf._p(fsec.lam[3]) == 84
    checks["tildeA4 = -130 + 180 beta/alpha^2"] = \
        nf._p(ff.tildeA[0]) == nf.simplify(-130 + 180 * beta / alpha ** 2)
    cc = nf.conserved_coefficients(fm, ff, fsec, printed=True)
    checks["C5 = (1/1920)(1 + 28 h^2 <U>)"] = (
        set(cc.C5.coeffs) == {0, 2} and nf._p(cc.C5[0]) == nf._p(F(1, 1920))
        and cc.C5[2] == F(28, 1920) * parse("av(u)"))
    elapsed = time.perf_counter() - t
    failed = [k for k, v in checks.items() if not v]
    assert acceptance(4, "second-order machinery", not failed,
                      f"{len(checks) - len(failed)}/{len(checks)} checks; failed: "
                      f"{failed or 'none'}", elapsed)


def test_criterion_05_obstruction(acceptance):
    t = time.perf_counter()
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(10):
        a = F(0)
        while not a:
            a = F(rng.randint(-30, 30), rng.randint(1, 7))
        b, g = F(rng.randint(-30, 30), rng.randint(1, 7)), F(rng.randint(-30, 30), rng.randint(1, 7))
        second = nf.solve_second_order(nf.fput_to_model(nf.FPUTParameters(a, b, g)))
        mismatches += second.r != -F(7560) / a ** 3 * (14 * a ** 3 - 27 * a * b + 12 * g)
    toda = [nf.solve_second_order(nf.fput_to_model(nf.FPUTParameters.toda(a)))
            for a in (F(1), F(2), F(-1), F(1, 3), F(-7, 5))]
    toda_ok = all(s.r == 0 and s.rho == 0 for s in toda)
    pure = nf.solve_second_order(nf.fput_to_model(nf.FPUTParameters(F(1))))
    elapsed = time.perf_counter() - t
    passed = mismatches == 0 and toda_ok and pure.rho != 0
    assert acceptance(5, "obstruction r", passed,
                      f"{10 - mismatches}/10 random triples, Toda r = rho = 0: {toda_ok}, "
                      f"pure alpha rho = {pure.rho}", elapsed)


def test_criterion_06_slaving(acceptance):
    t = time.perf_counter()
    c, reduced = nf.slaving_symbolic()
    ok_c = c == slaving_printed()
    ok_f = reduced == reduced_field_printed()
    elapsed = time.perf_counter() - t
    assert acceptance(6, "slaving relation and reduced field", ok_c and ok_f,
                      f"c2, c4 match: {ok_c}; reduced field through h^6 matches: {ok_f}", elapsed)


def test_criterion_07_invariance_slopes(acceptance, tmp_path):
    t = time.perf_counter()
    rep = _cli(tmp_path, "residual-scan", "--alpha", "3/2", "--beta", "1/3", "--gamma", "-2/5",
               "--grid", "256")
    elapsed = time.perf_counter() - t
    full, cut = (s["slope"] for s in rep.slopes)
    passed = abs(full - 6) <= 0.5 and abs(cut - 4) <= 0.5 and elapsed < 60
    assert acceptance(7, "invariance residual slopes", passed,
                      f"{full:.3f} (target 6), without c4 {cut:.3f} (target 4)", elapsed)


def test_criterion_08_expansion_ladder(acceptance):
    t = time.perf_counter()
    x = C.grid(256)
    U = np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x) + 0.05 * np.sin(12 * np.pi * x)
    V = 0.5 * np.cos(2 * np.pi * x) - 0.2 * np.sin(6 * np.pi * x)
    hs = [2.0 ** -k for k in range(4, 8)]
    slopes = {}
    for k in (0, 2, 4, 6):
        errs = []
        for h in hs:
            a, b = C.rhs_exact(U, V, h, FPUT_W), C.rhs_expanded(U, V, h, FPUT_W, k)
            errs.append(max(np.max(np.abs(a[0] - b[0])), np.max(np.abs(a[1] - b[1]))))
        slopes[k] = C.fit_slope(hs, errs).slope
    f = np.sin(2 * np.pi * x)
    dh_hs = [2.0 ** -k for k in range(4, 9)]
    e4 = [np.max(np.abs(C.apply_dh(f, h) - C.deriv(f) - h * h / 24 * C.deriv(f, 3)))
          for h in dh_hs]
    e6 = [np.max(np.abs(C.apply_dh(f, h) - C.deriv(f) - h * h / 24 * C.deriv(f, 3)
                        - h ** 4 / 1920 * C.deriv(f, 5))) for h in dh_hs]
    s4, s6 = C.fit_slope(dh_hs, e4).slope, C.fit_slope(dh_hs, e6).slope
    elapsed = time.perf_counter() - t
    passed = (all(abs(slopes[k] - (k + 2)) <= 0.5 for k in slopes)
              and abs(s4 - 4) <= 0.2 and abs(s6 - 6) <= 0.3)
    ladder = ", ".join(f"k={k}: {s:.2f}" for k, s in slopes.items())
    assert acceptance(8, "expansion ladder", passed,
                      f"{ladder}; D_h slopes {s4:.2f}, {s6:.2f}", elapsed)


def test_criterion_09_lattice_continuum(acceptance, tmp_path):
    t = time.perf_counter()
    rep = _cli(tmp_path, "compare-lattice", "--alpha", "3/2", "--beta", "1/3", "--gamma", "-2/5",
               "--grid", "64", "--tfinal", "0.1")
    elapsed = time.perf_counter() - t
    detail = "; ".join(f"{c['name']}: {c['detail']}" for c in rep.checks)
    assert acceptance(9, "lattice vs continuum", rep.passed, detail, elapsed)


@pytest.mark.slow
def test_criterion_10_conservation(acceptance, tmp_path):
    t = time.perf_counter()
    k3 = _cli(tmp_path, "evolve", "--field", "kdv3", "--grid", "256", "--tfinal", "1",
              "--dt", "1e-4")
    exact = _cli(tmp_path, "evolve", "--field", "exact", "--alpha", "3/2", "--beta", "1/3",
                 "--gamma", "-2/5", "--h", "1/16", "--grid", "256", "--tfinal", "1",
                 "--dt", "1e-3")
    elapsed = time.perf_counter() - t
    detail = (f"K3 drifts (I1, I2, I3) {k3.checks[-1]['detail']}; "
              f"exact flow mean drift {exact.checks[0]['detail']}")
    assert acceptance(10, "conservation", k3.passed and exact.passed, detail, elapsed)


def test_criterion_11_cross_oracle(acceptance):
    t = time.perf_counter()
    m = nf.fput_to_model(FPUT)
    first, second, _ = nf.normalize(m)
    A, B, Cc = ([float(v) for v in s] for s in (m.A, m.B, m.C))
    a, b = [float(v) for v in first.a], [float(v) for v in second.b]
    tA = [float(v) for v in first.tildeA]
    params = C.potential_params(FPUT_W)
    c_sym, F_sym = slaving_printed(), reduced_field_printed()

    F3 = lambda X: C.model_field_numeric(X, A, B, Cc, 3)  # noqa: E731
    F5 = lambda X: C.model_field_numeric(X, A, B, Cc, 5)  # noqa: E731
    g2 = lambda X: C.generator_g2(X, a, Cc[1], Cc[2])  # noqa: E731
    g4 = lambda X: C.generator_g4(X, b, Cc[1], Cc[3])  # noqa: E731

    def n5_closed(X):
        m1, m2 = X.mean(), np.mean(X * X)
        return Cc[2] * (C.kdv_field(X, 5) + tA[0] * m2 * C.deriv(X)
                        + tA[1] * m1 * m1 * C.deriv(X) + tA[2] * m1 * C.kdv_field(X, 3))

    def rel(x, y):
        return float(np.max(np.abs(x - y)) / np.max(np.abs(y)))

    worst = {"N5": 0.0, "N7": 0.0, "reduced": 0.0, "c": 0.0}
    rng = np.random.default_rng(11)
    h = 0.1
    for _ in range(10):
        # kmax = 3 keeps degree-4 products below the Nyquist mode of N = 32
        U = C.random_bandlimited(32, rng, kmax=3) + 0.3 * rng.normal()
        n5 = F5(U) + C.lie_bracket_numeric(g2, F3, U)
        worst["N5"] = max(worst["N5"], rel(C.evaluate(first.N5, U), n5),
                          rel(n5_closed(U), n5))
        n7 = (C.model_field_numeric(U, A, B, Cc, 7)
              + 0.5 * C.lie_bracket_numeric(g2, lambda X: F5(X) + n5_closed(X), U)
              + C.lie_bracket_numeric(g4, F3, U))
        worst["N7"] = max(worst["N7"], rel(C.evaluate(second.N7, U), n7))
        worst["reduced"] = max(worst["reduced"], rel(C.evaluate_series(F_sym, h, U, params=params),
                                                     C.rhs_reduced(U, h, FPUT_W)))
        worst["c"] = max(worst["c"], rel(C.evaluate_series(c_sym, h, U, params=params),
                                         C.slaving_c(U, h, FPUT_W)))
    elapsed = time.perf_counter() - t
    passed = all(v < 1e-10 for v in worst.values())
    assert acceptance(11, "symbolic vs numeric", passed,
                      ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), elapsed)
