import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from pullback_fsi.discretization import _beam_fourth_derivative, apply_trace, assemble_operators, build_grid


def test_grid_spacing_square():
    g = build_grid(4, 4)
    assert g.hx == pytest.approx(0.25) and g.hz == pytest.approx(0.25)
    assert g.n_beam == 4


def test_grid_anisotropic_beam_follows_nx():
    g = build_grid(8, 16)
    assert g.hx == pytest.approx(1 / 8) and g.hz == pytest.approx(1 / 16)
    assert g.n_beam == 8
    assert g.n_vel == 9 * 16 + 8 * 17 and g.n_cells == 128


@pytest.mark.parametrize("bad", [(0, 4), (4, -1)])
def test_grid_rejects_degenerate(bad):
    with pytest.raises(ValueError):
        build_grid(*bad)


def test_masks_partition_velocity_dofs(ops12):
    g = ops12.grid
    total = g.wall_mask.astype(int) + g.lid_mask.astype(int) + g.interior_mask.astype(int)
    assert np.all(total == 1)
    assert g.lid_mask.sum() == g.n_beam
    x, z = g.face_coordinates()
    assert np.allclose(z[g.beam_index], 0.0)
    assert np.allclose(x[g.beam_index], g.beam_nodes)


def test_trace_reads_lid(ops12):
    v = np.arange(ops12.grid.n_vel, dtype=float)
    assert np.array_equal(apply_trace(ops12, v), v[ops12.grid.beam_index])
    with pytest.raises(ValueError):
        apply_trace(ops12, np.zeros(3))


def test_mean_functional_sums_to_one(ops12):
    assert ops12.m.sum() == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_divergence_gradient_duality(seed):
    """(D v, p)_Mp + (v, Gp p)_Mv = 0 for v vanishing on the boundary."""
    ops = _ops10()
    g = ops.grid
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(g.n_vel)
    v[~g.interior_mask] = 0.0
    p = rng.standard_normal(g.n_cells)
    lhs = (ops.D @ v) @ (ops.Mp @ p) + v @ (ops.Mv @ (ops.Gp @ p))
    assert abs(lhs) <= 1e-12 * np.linalg.norm(v) * np.linalg.norm(p)


_CACHE = {}


def _ops10():
    if "ops" not in _CACHE:
        _CACHE["ops"] = assemble_operators(build_grid(10, 10))
    return _CACHE["ops"]


def test_div_grad_is_five_point_laplacian(ops12):
    g = ops12.grid
    L = (ops12.D @ ops12.Gp).toarray()
    h = g.hx
    i, j = 5, 6
    k = g.p_index[i, j]
    row = L[k] * h * h
    nbrs = [g.p_index[i + 1, j], g.p_index[i - 1, j], g.p_index[i, j + 1], g.p_index[i, j - 1]]
    assert row[k] == pytest.approx(-4.0)
    for q in nbrs:
        assert row[q] == pytest.approx(1.0)
    assert np.count_nonzero(np.abs(row) > 1e-12) == 5


def test_dirichlet_energy_matches_gradient_quadrature(ops12):
    """-Lv = A is symmetric positive semidefinite; constant fields have zero energy on the interior."""
    A = (-ops12.Lv).toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.linalg.eigvalsh(A).min() > -1e-10


def test_beam_operator_polynomial_rows_exact():
    """x^2 (1-x)^2 has fourth derivative 24; away from the ends the stencil is exact."""
    for nx in (16, 32):
        g = build_grid(nx, 4)
        B = _beam_fourth_derivative(nx, g.hx)
        u = (g.beam_nodes * (1 - g.beam_nodes)) ** 2
        assert np.abs((B @ u - 24.0)[2:-2]).max() <= 1e-6


def test_beam_operator_solution_second_order():
    errs = []
    for nx in (16, 32, 64):
        g = build_grid(nx, 4)
        B = _beam_fourth_derivative(nx, g.hx).tocsc()
        w = spla.spsolve(B, 24.0 * np.ones(nx))
        errs.append(np.abs(w - (g.beam_nodes * (1 - g.beam_nodes)) ** 2).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2.0) < 0.15)


def test_beam_operator_symmetric_and_spectrum_monotone():
    lmins = []
    for nx in (8, 16, 32):
        g = build_grid(nx, 4)
        B = _beam_fourth_derivative(nx, g.hx).toarray()
        assert np.abs(B - B.T).max() <= 1e-12 * np.abs(B).max()
        lmins.append(np.linalg.eigvalsh(B).min())
    assert lmins[0] > 0
    assert np.all(np.diff(lmins) > 0)


def test_matrices_roundtrip_keys(ops12):
    mats = ops12.matrices()
    assert set(mats) == {"D", "Gp", "Lv", "B4", "T", "m", "Mv", "Mb", "Mp"}
    assert np.allclose(ops12.Mv.diagonal(), ops12.mv_diag)
    assert np.allclose(ops12.Mb.diagonal(), ops12.mb_diag)
