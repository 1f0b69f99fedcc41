import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pullback_fsi.discretization import assemble_operators, build_grid
from pullback_fsi.physics import (
    CoefficientProfile, SampleSpec, eval_coefficients, eval_nonlinearity, make_forcing, make_nonlinearity,
    validate_assumptions,
)
from pullback_fsi.plate_basis import solve_plate_eigen

_CACHE = {}


def _setup():
    if not _CACHE:
        ops = assemble_operators(build_grid(12, 12))
        _CACHE.update(ops=ops, plate=solve_plate_eigen(ops, 8))
    return _CACHE["ops"], _CACHE["plate"]


def _slope_sq_oracle(u, h):
    """Clamped-end ||u_x||^2: node-to-wall spacing is h/2 at each end."""
    d = np.diff(np.concatenate([[0.0], u, [0.0]]))
    spacing = np.full(d.size, h)
    spacing[0] = spacing[-1] = h / 2
    return float(np.sum(d**2 / spacing))


# --- coefficients ----------------------------------------------------------


@pytest.mark.parametrize("t", [-50.0, 0.0, 3.7])
def test_constant_profile(t):
    assert eval_coefficients(CoefficientProfile("constant", 1.0, 1.0), t) == (1.0, 0.0, 1.0, 0.0)


def test_logistic_at_center():
    mu, dmu, rho, drho = eval_coefficients(CoefficientProfile("logistic", 1.0, 2.0, 0.1, 0.0), 0.0)
    assert mu == pytest.approx(0.5) and dmu == pytest.approx(-0.025)
    assert rho == pytest.approx(1.0) and drho == pytest.approx(-0.05)


def test_logistic_saturates_in_the_past():
    mu, *_ = eval_coefficients(CoefficientProfile("logistic", 1.0, 1.0, 0.1, 0.0), -200.0)
    assert abs(mu - 1.0) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(0.01, 2.0))
def test_logistic_derivative_matches_difference(t, k):
    p = CoefficientProfile("logistic", 3.0, 1.5, k, 1.0)
    h = 1e-5
    fd = (p.mu(t + h) - p.mu(t - h)) / (2 * h)
    assert abs(fd - p.dmu(t)) <= 1e-6 * max(1.0, abs(p.dmu(t)))


@pytest.mark.parametrize("kwargs", [
    dict(family="bogus"), dict(mu0=0.0), dict(family="logistic", decay=0.0),
])
def test_profile_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        CoefficientProfile(**kwargs)


# --- nonlinearity ----------------------------------------------------------


def test_zero_family():
    ops, plate = _setup()
    F = make_nonlinearity("zero", ops)
    Fu, Pi = eval_nonlinearity(F, plate.G[:, 0])
    assert np.all(Fu == 0) and Pi == 0


def test_cubic_potential_quadrature():
    ops, plate = _setup()
    a, h = 0.7, ops.grid.hx
    u = a * plate.G[:, 0]
    Fu, Pi = eval_nonlinearity(make_nonlinearity("cubic", ops, c=1.0), u)
    oracle = 0.0
    for gi in plate.G[:, 0]:
        oracle += h * gi**4
    assert Pi == pytest.approx(a**4 / 4 * oracle, rel=1e-12)
    assert np.allclose(Fu, u**3)


def test_berger_pairing_quadrature():
    ops, plate = _setup()
    a, h = 0.3, ops.grid.hx
    g1 = plate.G[:, 0]
    F = make_nonlinearity("berger", ops, gamma=1.0, q=0.0)
    Fu, _ = eval_nonlinearity(F, a * g1)
    pairing = float(Fu @ (ops.mb_diag * (a * g1)))
    assert pairing == pytest.approx(a**4 * _slope_sq_oracle(g1, h) ** 2, rel=1e-12)
    assert pairing >= 0


def test_berger_slope_energy_matches_oracle():
    ops, _ = _setup()
    u = np.random.default_rng(3).standard_normal(ops.grid.n_beam)
    F = make_nonlinearity("berger", ops, gamma=1.0)
    assert F.slope_sq(u) == pytest.approx(_slope_sq_oracle(u, ops.grid.hx), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["cubic", "berger"]))
def test_force_is_gradient_of_potential(seed, family):
    ops, _ = _setup()
    rng = np.random.default_rng(seed)
    F = make_nonlinearity(family, ops, c=2.0, gamma=1.5, q=4.0)
    u, d = rng.standard_normal((2, ops.grid.n_beam))
    eps = 1e-5
    fd = (F.potential(u + eps * d) - F.potential(u - eps * d)) / (2 * eps)
    exact = float(F.force(u) @ (ops.mb_diag * d))
    assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["cubic", "berger"]))
def test_modal_force_and_jacobian(seed, family):
    ops, plate = _setup()
    rng = np.random.default_rng(seed)
    F = make_nonlinearity(family, ops, c=2.0, gamma=1.5, q=4.0)
    MF = F.modal(plate)
    beta, d = rng.standard_normal((2, plate.n)) * 0.1
    direct = plate.G.T @ (ops.mb_diag * F.force(plate.G @ beta))
    assert np.allclose(MF(beta), direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())
    assert MF.potential(beta) == pytest.approx(float(F.potential(plate.G @ beta)), rel=1e-11, abs=1e-14)
    eps = 1e-6
    fd = (MF(beta + eps * d) - MF(beta - eps * d)) / (2 * eps)
    assert np.allclose(MF.jacobian(beta) @ d, fd, rtol=1e-6, atol=1e-7 * max(1.0, np.abs(fd).max()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_berger_without_tension_dissipative_bound(seed, gamma):
    """With Q = 0: (F(u), u) = Gamma ||u_x||^4 >= Pi(u) = Gamma/4 ||u_x||^4."""
    ops, _ = _setup()
    u = np.random.default_rng(seed).standard_normal(ops.grid.n_beam)
    F = make_nonlinearity("berger", ops, gamma=gamma)
    assert float(F.force(u) @ (ops.mb_diag * u)) >= F.potential(u)


def test_nonlinearity_rejects_bad_parameters():
    ops, _ = _setup()
    with pytest.raises(ValueError):
        make_nonlinearity("cubic", ops, c=-1.0)
    with pytest.raises(ValueError):
        make_nonlinearity("berger", ops, gamma=0.0, q=1.0)


# --- forcing ---------------------------------------------------------------


def test_fluid_force_vanishes_on_boundary():
    ops, _ = _setup()
    fp = make_forcing("constant", ops, amp_f=1.0, amp_g=1.0)
    g = ops.grid
    assert np.all(fp.f(0.0)[g.wall_mask | g.lid_mask] == 0)
    assert np.abs(ops.D @ fp.f(0.0)).max() <= 1e-10 * np.abs(fp.f(0.0)).max()  # curl field is near solenoidal


def test_periodic_forcing_norm_bounded():
    ops, _ = _setup()
    fp = make_forcing("periodic", ops, amp_f=1.0, amp_g=2.0, omega=3.0)
    t = np.linspace(-10, 10, 101)
    n = fp.norm_sq(t)
    direct = [fp.f(s) @ (ops.mv_diag * fp.f(s)) + fp.g(s) @ (ops.mb_diag * fp.g(s)) for s in t]
    assert np.allclose(n, direct)


# --- validators ------------------------------------------------------------


def test_constant_baseline_validates():
    ops, plate = _setup()
    prof = CoefficientProfile("constant", 2.0, 3.0)
    rep = validate_assumptions(prof, make_forcing("zero", ops), make_nonlinearity("zero", ops), plate)
    assert rep.passed, rep.failures()
    assert rep.constants["L"] == pytest.approx(5.0)
    assert rep.constants["C_fg"] == 0.0
    assert rep.checks["A4"].status == "n/a"
    assert list(rep.checks) == ["A1", "A2", "A3", "A4", "F1", "F2", "F3", "F4", "G2"]


def test_logistic_monotone_on_fine_grid():
    ops, plate = _setup()
    prof = CoefficientProfile("logistic", 1.0, 1.0, 0.1, 0.0)
    rep = validate_assumptions(prof, make_forcing("zero", ops), make_nonlinearity("zero", ops), plate)
    assert len(SampleSpec().t_grid) >= 1000
    assert rep.checks["A2"].status == "pass"
    assert rep.checks["A4"].status == "pass"


def test_exponential_forcing_flagged():
    ops, plate = _setup()
    prof = CoefficientProfile("constant", 1.0, 1.0)
    fp = make_forcing("exponential", ops, amp_f=1.0, amp_g=1.0, decay=0.5)
    rep = validate_assumptions(prof, fp, make_nonlinearity("zero", ops), plate)
    assert rep.failures() == ["G2"]
    assert rep.checks["G2"].witness["t"] < 0   # blows up toward the past


def test_validation_report_serialises():
    ops, plate = _setup()
    rep = validate_assumptions(CoefficientProfile(), make_forcing("zero", ops), make_nonlinearity("zero", ops), plate,
                               SampleSpec(n_samples=20))
    d = rep.to_dict()
    assert d["passed"] is True and set(d["checks"]) == set(rep.checks)
