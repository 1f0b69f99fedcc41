import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from pullback_fsi.discretization import assemble_operators, build_grid
from pullback_fsi.stokes_basis import (
    CompatibilityWarning, fix_sign, project_onto_basis, solve_stokes_eigen,
)

# dense SVD null-space oracle values, frozen
LAMBDA_12 = [51.07029336, 87.50160259, 87.50160259, 120.90922353]
LAMBDA_16 = [51.61780143, 89.48241353, 89.48241353, 124.00508235]


def _oracle(ops, m):
    g = ops.grid
    I = np.flatnonzero(g.interior_mask)
    Z = sla.null_space(ops.D.toarray()[:, I])
    A = (-ops.Lv).toarray()[np.ix_(I, I)]
    W = np.diag(ops.mv_diag[I])
    return sla.eigh(Z.T @ A @ Z, Z.T @ W @ Z, eigvals_only=True)[:m]


def test_eigenvalues_match_null_space_oracle(ops12, stokes12):
    lam = _oracle(ops12, 10)
    assert np.abs(stokes12.lambdas - lam).max() <= 1e-9 * lam.max()


def test_frozen_leading_eigenvalues(stokes12, ops16):
    assert np.allclose(stokes12.lambdas[:4], LAMBDA_12, rtol=1e-8)
    assert np.allclose(solve_stokes_eigen(ops16, 4).lambdas, LAMBDA_16, rtol=1e-8)


def test_modes_are_discrete_solenoidal_and_clamped(ops12, stokes12):
    g = ops12.grid
    E = stokes12.E
    div = ops12.D @ E
    assert np.abs(div).max() <= 1e-10 * np.abs(E).max() / g.hx
    assert np.abs(E[~g.interior_mask]).max() == 0.0


def test_modes_mass_orthonormal(ops12, stokes12):
    E = stokes12.E
    Gm = E.T @ (ops12.mv_diag[:, None] * E)
    assert np.abs(Gm - np.eye(stokes12.m)).max() <= 1e-8
    assert np.all(stokes12.residuals <= 1e-8)


def test_leading_eigenvalues_independent_of_count(ops12, stokes12):
    big = solve_stokes_eigen(ops12, 20)
    assert np.abs(big.lambdas[:10] - stokes12.lambdas).max() <= 1e-10 * stokes12.lambdas.max()


def test_rebuild_is_bitwise_identical(ops12, stokes12):
    again = solve_stokes_eigen(assemble_operators(build_grid(12, 12)), 10)
    assert np.array_equal(again.E, stokes12.E)
    assert np.array_equal(again.lambdas, stokes12.lambdas)


def test_projection_recovers_combination(stokes12):
    v = 3 * stokes12.E[:, 0] - 2 * stokes12.E[:, 2]
    alpha = project_onto_basis(stokes12, v)
    expect = np.zeros(stokes12.m)
    expect[0], expect[2] = 3, -2
    assert np.allclose(alpha, expect, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bessel_inequality_monotone(seed):
    st12 = _stokes()
    v = np.random.default_rng(seed).standard_normal(st12.E.shape[0])
    a = project_onto_basis(st12, v)
    partial = np.cumsum(a**2)
    total = v @ (st12.weights * v)
    assert np.all(np.diff(partial) >= 0)
    assert partial[-1] <= total * (1 + 1e-12)


_CACHE = {}


def _stokes():
    if "s" not in _CACHE:
        _CACHE["s"] = solve_stokes_eigen(assemble_operators(build_grid(12, 12)), 10)
    return _CACHE["s"]


def test_fix_sign_first_significant_entry_positive():
    V = np.array([[1e-12, -3.0], [-2.0, 1.0]])
    W = fix_sign(V)
    assert W[1, 0] == 2.0 and W[0, 1] == 3.0
    assert np.array_equal(fix_sign(W), W)


def test_rejects_bad_mode_count(ops12):
    with pytest.raises(ValueError):
        solve_stokes_eigen(ops12, 0)


def test_lifting_of_plate_mode_solenoidal_with_exact_trace(ops12, lift12, plate12):
    g = ops12.grid
    b = plate12.G[:, 0]
    v = lift12.lift(b)
    assert np.abs(ops12.D @ v).max() <= 1e-10 * np.abs(v).max() / g.hx
    assert np.abs(v[g.beam_index] - b).max() <= 1e-10 * np.abs(b).max()
    assert np.abs(v[g.wall_mask]).max() == 0.0


def test_lifting_warns_on_nonzero_mean(lift12, ops12):
    with pytest.warns(CompatibilityWarning):
        v = lift12.lift(np.ones(ops12.grid.n_beam))
    # the mean is projected away, leaving nothing
    assert np.abs(v).max() <= 1e-12


def test_lifting_silent_on_zero_mean(lift12, plate12):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lift12.lift(plate12.G[:, 1])


def test_lifting_is_discrete_stokes_solution(ops12, lift12):
    """Interior momentum residual lies in the range of the discrete gradient."""
    g = ops12.grid
    A = (-ops12.Lv).toarray()
    R = (A @ lift12.Nmat)[g.interior_mask]
    DI = ops12.D.toarray()[:, g.interior_mask]
    coef, *_ = np.linalg.lstsq(DI.T, R, rcond=None)
    assert np.abs(DI.T @ coef - R).max() <= 1e-8 * np.abs(R).max()
