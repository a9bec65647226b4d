"""Pseudo-spectral operators, two-wave fields, slaving, hierarchy flows."""
import json

import numpy as np
import pytest
from fractions import Fraction

from fputkdv import continuum as C
from fputkdv import normalform as nf
from fputkdv.lattice import Potential
from fputkdv.fields import reduced_field_printed, slaving_printed

TWO_PI = 2 * np.pi
FPUT = Potential(alpha=1.5, beta=1 / 3, gamma=-0.4)


@pytest.fixture
def x():
    return C.grid(64)


# --- operators ----------------------------------------------------------------

def test_first_derivative(x):
    assert np.allclose(C.deriv(np.sin(TWO_PI * x)), TWO_PI * np.cos(TWO_PI * x), atol=1e-12)


def test_third_derivative(x):
    assert np.allclose(C.deriv(np.sin(TWO_PI * x), 3), -TWO_PI ** 3 * np.cos(TWO_PI * x),
                       rtol=0, atol=1e-10 * TWO_PI ** 3)


@pytest.mark.parametrize("m", [1, 2, 5])
def test_derivative_of_constant(x, m):
    assert np.max(np.abs(C.deriv(np.full_like(x, 3.2), m))) == 0


def test_dh_multiplier():
    h = 0.1
    assert C.dh_symbol(16, h)[1] == pytest.approx(2j * np.sin(np.pi * h) / h)


def test_dh_of_constant(x):
    assert np.max(np.abs(C.apply_dh(np.ones_like(x), 0.1))) < 1e-15


def test_dh_is_the_half_step_difference(x):
    f = np.sin(TWO_PI * x) + 0.2 * np.cos(3 * TWO_PI * x)
    h = 1 / 16
    direct = (C.shift(f, h / 2) - C.shift(f, -h / 2)) / h
    assert np.allclose(C.apply_dh(f, h), direct, atol=1e-12)


def test_dh_expansion_order():
    x = C.grid(256)
    f = np.sin(TWO_PI * x)
    hs = [2.0 ** -k for k in range(4, 9)]
    errs = [np.max(np.abs(C.apply_dh(f, h) - C.deriv(f) - h * h / 24 * C.deriv(f, 3)))
            for h in hs]
    assert C.fit_slope(hs, errs).slope == pytest.approx(4, abs=0.2)


def test_primitive_has_zero_mean(x):
    f = np.cos(TWO_PI * x) + 0.7
    P = C.primitive(f)
    assert abs(P.mean()) < 1e-15
    assert np.allclose(C.deriv(P), f - f.mean(), atol=1e-12)


def test_random_bandlimited_is_seeded():
    a = C.random_bandlimited(32, np.random.default_rng(1))
    b = C.random_bandlimited(32, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert np.max(np.abs(np.fft.rfft(a)[5:])) < 1e-12


# --- Riemann invariants -------------------------------------------------------

def test_riemann_of_pure_velocity(x):
    g = np.cos(TWO_PI * x)
    s = C.to_riemann(np.zeros_like(x), g, 0.1, 1.5)
    assert np.allclose(s.U, 3 * g) and np.allclose(s.V, -3 * g)


def test_riemann_of_pure_displacement(x):
    u = np.sin(TWO_PI * x)
    s = C.to_riemann(u, np.zeros_like(x), 0.1, 1.5)
    assert np.allclose(s.U, s.V) and np.allclose(s.U, 3 * C.apply_dh(u, 0.1))


def test_riemann_round_trip(rng):
    u = C.random_bandlimited(64, rng) + 0.3
    v = C.random_bandlimited(64, rng)
    back = C.from_riemann(C.to_riemann(u, v, 1 / 64, 1.5))
    assert np.allclose(back[0], u, atol=1e-13) and np.allclose(back[1], v, atol=1e-13)


def test_riemann_inverse_refuses_singular_dh():
    # D_h annihilates the mode k = 1/h when it is resolved
    s = C.to_riemann(np.zeros(64), np.zeros(64), 1 / 16, 1.5)
    with pytest.raises(ValueError):
        C.from_riemann(s)


def test_riemann_needs_alpha():
    with pytest.raises(ValueError):
        C.to_riemann(np.zeros(8), np.zeros(8), 0.1, 0.0)


# --- two-wave fields ----------------------------------------------------------

def test_rest_state(x):
    Ut, Vt = C.rhs_exact(0 * x, 0 * x, 0.1, FPUT)
    assert not Ut.any() and not Vt.any()


def test_time_reversal_structure(rng):
    U, V = C.random_bandlimited(64, rng), C.random_bandlimited(64, rng)
    Ut, Vt = C.rhs_exact(U, V, 1 / 16, FPUT)
    Vt2, Ut2 = C.rhs_exact(V, U, 1 / 16, FPUT)
    assert np.allclose(Vt, -Vt2, atol=1e-12) and np.allclose(Ut, -Ut2, atol=1e-12)


def test_exact_field_has_zero_mean(rng):
    U, V = C.random_bandlimited(64, rng), C.random_bandlimited(64, rng)
    Ut, Vt = C.rhs_exact(U, V, 1 / 16, FPUT)
    assert abs(Ut.mean()) < 1e-13 and abs(Vt.mean()) < 1e-13


def test_exact_field_is_the_lattice_force(rng):
    # U_t from the (u, v) system agrees with the Riemann form
    h, a = 1 / 16, FPUT.alpha
    u, v = C.random_bandlimited(128, rng, amplitude=0.2), C.random_bandlimited(128, rng)
    s = C.to_riemann(u, v, h, a)
    ut, vt = C.rhs_uv(u, v, h, FPUT, form="dh")
    expected = 2 * a * (C.apply_dh(ut, h) + vt)
    Ut, _ = C.rhs_exact(s.U, s.V, h, FPUT)
    assert np.allclose(Ut, expected, atol=1e-9)


@pytest.mark.parametrize("h", [1 / 16, 1 / 32])
def test_dh_difference_identity(rng, h):
    # F(G(x+h) - G(x)) - F(G(x) - G(x-h)) = h D_h F(h D_h G) with F = W', G = u
    u = C.random_bandlimited(64, rng)
    lhs = FPUT.dW(C.shift(u, h) - u) - FPUT.dW(u - C.shift(u, -h))
    rhs = h * C.apply_dh(FPUT.dW(h * C.apply_dh(u, h)), h)
    assert np.max(np.abs(lhs - rhs)) < 1e-14


def test_uv_forms_agree(rng):
    u, v = C.random_bandlimited(64, rng), C.random_bandlimited(64, rng)
    a = C.rhs_uv(u, v, 1 / 16, FPUT, "shift")[1]
    b = C.rhs_uv(u, v, 1 / 16, FPUT, "dh")[1]
    assert np.allclose(a, b, atol=1e-8)


def test_expanded_order_zero_is_wave_equation(rng):
    U, V = C.random_bandlimited(64, rng), C.random_bandlimited(64, rng)
    Ut, Vt = C.rhs_expanded(U, V, 0.1, FPUT, 0)
    assert np.allclose(Ut, C.deriv(U)) and np.allclose(Vt, -C.deriv(V))


def test_v_is_forced_at_order_two(x):
    U = np.sin(TWO_PI * x)
    h = 0.05
    _, Vt = C.rhs_expanded(U, 0 * x, h, FPUT, 2)
    assert np.allclose(Vt, -h * h / 8 * C.deriv(U * U), atol=1e-12)
    assert np.max(np.abs(Vt)) > 0


def test_expanded_order_validated(x):
    with pytest.raises(ValueError):
        C.rhs_expanded(x, x, 0.1, FPUT, 3)


def test_expansion_ladder_top_rung():
    x = C.grid(256)
    U = np.sin(TWO_PI * x) + 0.3 * np.cos(2 * TWO_PI * x) + 0.05 * np.sin(6 * TWO_PI * x)
    V = 0.5 * np.cos(TWO_PI * x) - 0.2 * np.sin(3 * TWO_PI * x)
    hs = [2.0 ** -k for k in range(4, 8)]

    def err(h):
        a, b = C.rhs_exact(U, V, h, FPUT), C.rhs_expanded(U, V, h, FPUT, 6)
        return max(np.max(np.abs(a[0] - b[0])), np.max(np.abs(a[1] - b[1])))

    assert C.fit_slope(hs, [err(h) for h in hs]).slope == pytest.approx(8, abs=0.5)


def test_lattice_force_expansion_converges():
    x = C.grid(128)
    u = 0.1 * np.sin(TWO_PI * x)
    hs = [2.0 ** -k for k in range(3, 6)]
    errs = [np.max(np.abs(C.rhs_uv(u, 0 * x, h, FPUT, "dh")[1]
                          - C.lattice_force_expanded(u, h, FPUT, 6))) for h in hs]
    assert C.fit_slope(hs, errs).slope > 7.5


# --- slaving and reduced field ----------------------------------------------

def test_slaving_vanishes_on_constants(x):
    assert np.max(np.abs(C.slaving_c(np.full_like(x, 0.7), 0.1, FPUT))) < 1e-15


def test_slaving_leading_term(x):
    U = np.sin(TWO_PI * x)
    h = 0.1
    c2 = C.slaving_c(U, h, FPUT, order=2) / h ** 2
    assert np.allclose(c2, (0.5 - U * U) / 16, atol=1e-14)


def test_slaving_has_zero_average():
    rng = np.random.default_rng(20)
    for _ in range(10):
        U = C.random_bandlimited(64, rng) + rng.normal()
        assert abs(C.slaving_c(U, 0.1, FPUT).mean()) < 1e-15


def test_slaving_derivative_matches_stencil(rng):
    U, H = C.random_bandlimited(64, rng), C.random_bandlimited(64, rng)
    fn = lambda W: C.slaving_c(W, 0.1, FPUT)  # noqa: E731
    assert np.allclose(C.slaving_c_derivative(U, H, 0.1, FPUT), C.directional(fn, U, H),
                       atol=1e-13)


def test_reduced_field_at_rest(x):
    assert not C.rhs_reduced(0 * x, 0.1, FPUT).any()


def test_reduced_order_two_on_sine(x):
    U = np.sin(TWO_PI * x)
    h = 0.1
    two = (C.rhs_reduced(U, h, FPUT, 2) - C.rhs_reduced(U, h, FPUT, 0)) / h ** 2
    expected = (-TWO_PI ** 3 * np.cos(TWO_PI * x) + 6 * np.pi * np.sin(2 * TWO_PI * x)) / 24
    assert np.allclose(two, expected, rtol=0, atol=1e-8)


def test_symbolic_slaving_and_reduced_field_on_grid():
    rng = np.random.default_rng(7)
    params = C.potential_params(FPUT)
    c_sym, F_sym = slaving_printed(), reduced_field_printed()
    h = 0.1
    for _ in range(10):
        U = C.random_bandlimited(32, rng, kmax=3)
        c = C.evaluate_series(c_sym, h, U, params=params)
        F = C.evaluate_series(F_sym, h, U, params=params)
        assert np.max(np.abs(c - C.slaving_c(U, h, FPUT))) < 1e-12
        ref = C.rhs_reduced(U, h, FPUT)
        assert np.max(np.abs(F - ref)) < 1e-10 * np.max(np.abs(ref))


def test_invariance_residual_at_rest(x):
    assert C.invariance_residual(0 * x, 0.1, FPUT) == 0


def test_invariance_residual_slope():
    x = C.grid(256)
    U = np.sin(TWO_PI * x) + 0.3 * np.cos(2 * TWO_PI * x)
    hs = [1 / 32, 1 / 64, 1 / 128, 1 / 256]
    full = [C.invariance_residual(U, h, FPUT) for h in hs]
    cut = [C.invariance_residual(U, h, FPUT, c_order=2) for h in hs]
    assert C.fit_slope(hs, full).slope == pytest.approx(6, abs=0.5)
    assert C.fit_slope(hs, cut).slope == pytest.approx(4, abs=0.5)


# --- hierarchy ----------------------------------------------------------------

def test_k1_is_derivative(rng):
    U = C.random_bandlimited(32, rng)
    assert np.allclose(C.kdv_field(U, 1), C.deriv(U))


def test_k3_on_sine(x):
    U = np.sin(TWO_PI * x)
    expected = -TWO_PI ** 3 * np.cos(TWO_PI * x) + 6 * np.pi * np.sin(2 * TWO_PI * x)
    assert np.allclose(C.kdv_field(U, 3), expected, rtol=0, atol=1e-8)


@pytest.mark.parametrize("j", [3, 5, 7])
def test_hierarchy_vanishes_on_constants(x, j):
    assert not C.kdv_field(np.full_like(x, 1.3), j).any()


def test_hierarchy_matches_symbolic(rng):
    from fputkdv.fields import kdv_field as sym
    U = C.random_bandlimited(32, rng, kmax=3)
    for j in (1, 3, 5, 7):
        ref = C.kdv_field(U, j)
        assert np.max(np.abs(C.evaluate(sym(j), U) - ref)) < 1e-10 * np.max(np.abs(ref))


def test_integrals_examples(x):
    k = 0.4
    I = C.kdv_integrals(np.full_like(x, k))
    assert I == pytest.approx((k, k * k, -2 * k ** 3))
    I = C.kdv_integrals(np.sin(TWO_PI * x))
    assert I == pytest.approx((0, 0.5, 2 * np.pi ** 2), abs=1e-12)


# --- flows ----------------------------------------------------------------------

def test_wave_equation_transport():
    x = C.grid(64)
    U0 = np.sin(TWO_PI * x) + 0.5 * np.cos(3 * TWO_PI * x)
    spec = C.FlowSpec(field="expanded", order=0, h=0.1, potential=FPUT, dt=1e-2)
    res = C.integrate_flow(U0, 1.0, spec, V0=0 * x)
    assert np.allclose(res.U, U0, atol=1e-12)  # a full period


def test_k1_flow_is_translation():
    x = C.grid(64)
    U0 = np.sin(TWO_PI * x)
    res = C.integrate_flow(U0, 0.3, C.FlowSpec(field="kdv", which=1, dt=1e-2))
    assert np.allclose(res.U, np.sin(TWO_PI * (x + 0.3)), atol=1e-12)


@pytest.mark.slow
def test_k3_flow_conserves_integrals(profile256):
    res = C.integrate_flow(0.1 * profile256, 0.2, C.FlowSpec(field="kdv", which=3, dt=1e-4),
                           record_every=200)
    I = res.integrals
    drift = np.max(np.abs(I - I[0]), axis=0) / np.maximum(np.abs(I[0]), 1)
    assert np.all(drift < 1e-8)


def test_exact_flow_conserves_means(rng):
    U0 = C.random_bandlimited(64, rng) + 0.2
    V0 = C.slaving_c(U0, 1 / 16, FPUT)
    spec = C.FlowSpec(field="exact", h=1 / 16, potential=FPUT, dt=1e-3)
    res = C.integrate_flow(U0, 0.05, spec, V0=V0, record_every=10)
    assert np.max(np.abs(res.means - res.means[0])) < 1e-13


def test_schemes_agree(rng):
    U0 = 0.2 * C.random_bandlimited(64, rng)
    a = C.integrate_flow(U0, 0.01, C.FlowSpec(field="kdv", dt=2.5e-5))
    for scheme in ("gauss4", "etdrk4"):
        b = C.integrate_flow(U0, 0.01, C.FlowSpec(field="kdv", dt=2.5e-5, scheme=scheme))
        assert np.max(np.abs(a.U - b.U)) < 1e-8


def test_gauss_tableaux_have_collocation_order():
    for s in (2, 3):
        A, b, c = C._gauss_tableau(s)
        assert np.allclose(A.sum(axis=1), c)
        for q in range(1, 2 * s + 1):  # quadrature exact to degree 2s - 1
            assert b @ c ** (q - 1) == pytest.approx(1 / q)


def test_flow_validation():
    with pytest.raises(ValueError):
        C.integrate_flow(np.zeros(8), 0.0, C.FlowSpec())
    with pytest.raises(ValueError):
        C.integrate_flow(np.zeros(8), 1.0, C.FlowSpec(scheme="euler"))


# --- normal form on the grid ------------------------------------------------

@pytest.fixture(scope="module")
def normal_form():
    p = nf.FPUTParameters(Fraction(3, 2), Fraction(1, 3), Fraction(-2, 5))
    m = nf.fput_to_model(p)
    first, second, F = nf.normalize(m)
    return m, first, second, F


def test_normalized_field_matches_transformed_field(normal_form, rng):
    m, first, second, F = normal_form
    cc = nf.conserved_coefficients(m, first, second)
    U = C.random_bandlimited(32, rng, kmax=3)
    h = 0.1
    lhs = C.rhs_normalized(U, h, cc, float(second.rho), float(second.lam[7]))
    rhs = C.evaluate_series(F, h, U)
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * np.max(np.abs(rhs))


def test_normalized_field_at_rest(normal_form, x):
    m, first, second, _ = normal_form
    cc = nf.conserved_coefficients(m, first, second)
    assert not C.rhs_normalized(0 * x, 0.1, cc, float(second.rho)).any()


def test_normalized_field_has_zero_mean(normal_form, rng):
    m, first, second, _ = normal_form
    cc = nf.conserved_coefficients(m, first, second)
    U = C.random_bandlimited(64, rng) + 0.3
    assert abs(C.rhs_normalized(U, 0.1, cc, float(second.rho)).mean()) < 1e-12


def test_toda_normal_form_has_no_residual_term():
    m = nf.fput_to_model(nf.FPUTParameters.toda(Fraction(1)))
    assert nf.solve_second_order(m).rho == 0


def _generators(first, second):
    G2 = lambda U: C.evaluate(first.G2, U)  # noqa: E731
    G4 = lambda U: C.evaluate(second.G4, U)  # noqa: E731
    return G2, G4


def test_hand_coded_generators(normal_form, rng):
    m, first, second, _ = normal_form
    U = C.random_bandlimited(32, rng, kmax=3)
    c = [float(v) for v in m.C]
    g2 = C.generator_g2(U, [float(a) for a in first.a], c[1], c[2])
    g4 = C.generator_g4(U, [float(b) for b in second.b], c[1], c[3])
    assert np.allclose(g2, C.evaluate(first.G2, U), atol=1e-10)
    assert np.allclose(g4, C.evaluate(second.G4, U), atol=1e-9)


def test_identity_when_generators_vanish(rng):
    U = C.random_bandlimited(32, rng)
    zero = lambda W: np.zeros_like(W)  # noqa: E731
    for d in ("forward", "inverse"):
        assert np.array_equal(C.apply_normal_coordinates(U, zero, zero, 0.1, d), U)


def test_mean_shift_is_g4_average(normal_form, rng):
    _, first, second, _ = normal_form
    G2, G4 = _generators(first, second)
    U = C.random_bandlimited(32, rng, kmax=3) + 0.2
    h = 0.1
    W = C.apply_normal_coordinates(U, G2, G4, h)
    expected = h ** 4 * C.evaluate(second.G4_average, U).mean()
    assert W.mean() - U.mean() == pytest.approx(expected, rel=1e-9, abs=1e-15)
    assert expected != 0


def test_inverse_undoes_forward(normal_form):
    _, first, second, _ = normal_form
    G2, G4 = _generators(first, second)
    x = C.grid(64)
    U = 0.5 * np.sin(TWO_PI * x) + 0.2 * np.cos(2 * TWO_PI * x)
    hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    errs = [np.max(np.abs(C.apply_normal_coordinates(
        C.apply_normal_coordinates(U, G2, G4, h), G2, G4, h, "inverse") - U)) for h in hs]
    assert C.fit_slope(hs, errs).slope > 5.7


def test_bad_direction(x):
    with pytest.raises(ValueError):
        C.apply_normal_coordinates(x, np.sin, np.sin, 0.1, "sideways")


# --- output -------------------------------------------------------------------

def test_write_scan(tmp_path):
    path = C.write_scan(tmp_path / "scan.csv", [0.5, 0.25], {"err": [1e-3, 1e-5]}, {"N": 8})
    assert path.read_text().splitlines()[0] == "h,err"
    assert json.loads(path.with_suffix(".json").read_text()) == {"N": 8}


def test_flow_result_csv(tmp_path):
    res = C.integrate_flow(np.sin(TWO_PI * C.grid(16)), 0.01, C.FlowSpec(dt=1e-3),
                           record_every=5)
    path = res.to_csv(tmp_path / "flow.csv")
    assert path.exists() and len(path.read_text().splitlines()) == 1 + len(res.t)


def test_fit_slope_exact_power():
    hs = np.array([0.1, 0.05, 0.025])
    fit = C.fit_slope(hs, 3 * hs ** 4)
    assert fit.slope == pytest.approx(4) and fit.r2 == pytest.approx(1)
    with pytest.raises(ValueError):
        C.fit_slope([0.1], [1.0])
