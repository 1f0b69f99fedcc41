"""Staggered (MAC) cavity grid, clamped beam on the lid, and discrete operators.

Geometry is the unit cavity (0, 1) x (-1, 0). The elastic beam occupies the
lid z = 0. Velocity unknowns live on cell faces:

    u[i, j]  horizontal velocity at x = i*hx,        z = -1 + (j + 1/2)*hz
    v[i, j]  vertical velocity   at x = (i + 1/2)*hx, z = -1 + j*hz

with i, j ranging over all faces, boundary faces included. The lid row
v[:, nz] is the fluid trace of the beam velocity, so beam nodes sit at
x = (i + 1/2)*hx and the trace is an index extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CavityGrid",
    "DiscreteOperators",
    "build_grid",
    "assemble_operators",
    "apply_trace",
    "MIN_CELLS",
]

MIN_CELLS = 4

# Clamped ghost closure at a beam end: with nodes u0, u1 nearest the wall,
#   u_{-1} = (-5 u0 + u1) / 4,   u_{-2} = (45 u0 - u1) / 4.
# Exact for u ~ x^2 (u = u' = 0 at the wall) and the only member of that
# family that keeps the five-point operator symmetric with a minimax
# boundary truncation error.
_GHOST1 = (-5.0 / 4.0, 1.0 / 4.0)
_GHOST2 = (45.0 / 4.0, -1.0 / 4.0)


@dataclass(frozen=True, eq=False)
class CavityGrid:
    """Uniform MAC grid on the unit cavity with the beam on the lid."""

    nx: int
    nz: int
    hx: float
    hz: float
    u_index: np.ndarray = field(repr=False)     # (nx+1, nz) -> velocity DOF
    v_index: np.ndarray = field(repr=False)     # (nx, nz+1) -> velocity DOF
    p_index: np.ndarray = field(repr=False)     # (nx, nz) -> pressure DOF
    beam_index: np.ndarray = field(repr=False)  # beam node -> lid velocity DOF

    @property
    def n_u(self) -> int:
        return (self.nx + 1) * self.nz

    @property
    def n_v(self) -> int:
        return self.nx * (self.nz + 1)

    @property
    def n_vel(self) -> int:
        return self.n_u + self.n_v

    @property
    def n_cells(self) -> int:
        return self.nx * self.nz

    @property
    def n_beam(self) -> int:
        return self.nx

    @property
    def wall_mask(self) -> np.ndarray:
        """Velocity DOFs on the rigid walls S (always zero)."""
        mask = np.zeros(self.n_vel, dtype=bool)
        mask[self.u_index[0, :]] = True
        mask[self.u_index[-1, :]] = True
        mask[self.v_index[:, 0]] = True
        return mask

    @property
    def lid_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vel, dtype=bool)
        mask[self.beam_index] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~(self.wall_mask | self.lid_mask)

    @property
    def beam_nodes(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    def face_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, z) coordinates of every velocity DOF, in DOF order."""
        x = np.empty(self.n_vel)
        z = np.empty(self.n_vel)
        ii, jj = np.meshgrid(np.arange(self.nx + 1), np.arange(self.nz), indexing="ij")
        x[self.u_index] = ii * self.hx
        z[self.u_index] = -1.0 + (jj + 0.5) * self.hz
        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.nz + 1), indexing="ij")
        x[self.v_index] = (ii + 0.5) * self.hx
        z[self.v_index] = -1.0 + jj * self.hz
        return x, z

    def component_mask(self) -> np.ndarray:
        """0 for horizontal-velocity DOFs, 1 for vertical-velocity DOFs."""
        comp = np.zeros(self.n_vel, dtype=np.int8)
        comp[self.n_u:] = 1
        return comp


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Sparse operators on a :class:`CavityGrid`.

    ``Lv`` is the weak (quadrature-weighted) vector Laplacian, so that
    ``-v @ Lv @ v`` is the discrete Dirichlet energy ``||grad v||^2`` for any
    velocity field, lid values included. ``Gp`` is the strong pressure
    gradient on interior faces and zero on boundary faces. ``B4`` is the
    clamped beam fourth derivative; it is self-adjoint in the ``Mb`` inner
    product because ``Mb`` is a multiple of the identity.
    """

    grid: CavityGrid
    D: sp.csr_matrix
    Gp: sp.csr_matrix
    Lv: sp.csr_matrix
    B4: sp.csr_matrix
    T: sp.csr_matrix
    m: np.ndarray
    Mv: sp.csr_matrix
    Mb: sp.csr_matrix
    Mp: sp.csr_matrix

    def matrices(self) -> dict[str, sp.csr_matrix]:
        """Named sparse matrices in a fixed order (used by the cache)."""
        return {
            "D": self.D,
            "Gp": self.Gp,
            "Lv": self.Lv,
            "B4": self.B4,
            "T": self.T,
            "m": sp.csr_matrix(self.m.reshape(1, -1)),
            "Mv": self.Mv,
            "Mb": self.Mb,
            "Mp": self.Mp,
        }

    @property
    def mv_diag(self) -> np.ndarray:
        return self.Mv.diagonal()

    @property
    def mb_diag(self) -> np.ndarray:
        return self.Mb.diagonal()


def build_grid(nx: int, nz: int) -> CavityGrid:
    """Build the uniform grid with ``nx`` x ``nz`` pressure cells."""
    for name, val in (("nx", nx), ("nz", nz)):
        if int(val) != val or val < MIN_CELLS:
            raise ValueError(f"{name} must be an integer >= {MIN_CELLS}, got {val!r}")
    nx, nz = int(nx), int(nz)
    n_u = (nx + 1) * nz
    u_index = np.arange(n_u).reshape(nz, nx + 1).T.copy()
    v_index = n_u + np.arange(nx * (nz + 1)).reshape(nz + 1, nx).T.copy()
    p_index = np.arange(nx * nz).reshape(nz, nx).T.copy()
    beam_index = v_index[:, nz].copy()
    return CavityGrid(
        nx=nx,
        nz=nz,
        hx=1.0 / nx,
        hz=1.0 / nz,
        u_index=u_index,
        v_index=v_index,
        p_index=p_index,
        beam_index=beam_index,
    )


def _divergence(g: CavityGrid) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(g.nx):
        for j in range(g.nz):
            r = g.p_index[i, j]
            rows += [r, r, r, r]
            cols += [g.u_index[i + 1, j], g.u_index[i, j], g.v_index[i, j + 1], g.v_index[i, j]]
            vals += [1.0 / g.hx, -1.0 / g.hx, 1.0 / g.hz, -1.0 / g.hz]
    return sp.csr_matrix((vals, (rows, cols)), shape=(g.n_cells, g.n_vel))


def _velocity_weights(g: CavityGrid) -> np.ndarray:
    """Trapezoidal face weights: half weight on faces lying on the boundary."""
    w = np.full(g.n_vel, g.hx * g.hz)
    w[g.u_index[0, :]] *= 0.5
    w[g.u_index[-1, :]] *= 0.5
    w[g.v_index[:, 0]] *= 0.5
    w[g.v_index[:, -1]] *= 0.5
    return w


def _dirichlet_energy(g: CavityGrid) -> sp.csr_matrix:
    """Stiffness matrix of sum_edges c * (v_a - v_b)^2.

    Edges join neighbouring faces of the same component. Half-edges join a
    face to a wall it does not sit on (tangential no-slip), with the usual
    ghost value equal to minus the interior value.
    """
    rows, cols, vals = [], [], []

    def edge(a: int, b: int | None, c: float) -> None:
        if b is None:
            rows.append(a), cols.append(a), vals.append(c)
            return
        rows.extend((a, b, a, b))
        cols.extend((a, b, b, a))
        vals.extend((c, c, -c, -c))

    hx, hz = g.hx, g.hz
    # horizontal velocity
    for j in range(g.nz):
        for i in range(g.nx):
            edge(g.u_index[i, j], g.u_index[i + 1, j], hz / hx)
    for i in range(g.nx + 1):
        ext = hx * (0.5 if i in (0, g.nx) else 1.0)
        for j in range(g.nz - 1):
            edge(g.u_index[i, j], g.u_index[i, j + 1], ext / hz)
        edge(g.u_index[i, 0], None, ext / (0.5 * hz))
        edge(g.u_index[i, g.nz - 1], None, ext / (0.5 * hz))
    # vertical velocity
    for i in range(g.nx):
        for j in range(g.nz):
            edge(g.v_index[i, j], g.v_index[i, j + 1], hx / hz)
    for j in range(g.nz + 1):
        ext = hz * (0.5 if j in (0, g.nz) else 1.0)
        for i in range(g.nx - 1):
            edge(g.v_index[i, j], g.v_index[i + 1, j], ext / hx)
        edge(g.v_index[0, j], None, ext / (0.5 * hx))
        edge(g.v_index[g.nx - 1, j], None, ext / (0.5 * hx))
    A = sp.csr_matrix((vals, (rows, cols)), shape=(g.n_vel, g.n_vel))
    A.sum_duplicates()
    return A


def _beam_fourth_derivative(n: int, h: float) -> sp.csr_matrix:
    B = np.zeros((n, n))
    stencil = (1.0, -4.0, 6.0, -4.0, 1.0)
    for i in range(n):
        for k, s in zip(range(i - 2, i + 3), stencil):
            if 0 <= k < n:
                B[i, k] += s
    # left end: rows 0 and 1 reference ghosts u_{-2}, u_{-1}
    B[0, 0] += _GHOST2[0] - 4.0 * _GHOST1[0]
    B[0, 1] += _GHOST2[1] - 4.0 * _GHOST1[1]
    B[1, 0] += _GHOST1[0]
    B[1, 1] += _GHOST1[1]
    # right end by reflection
    B[-1, -1] += _GHOST2[0] - 4.0 * _GHOST1[0]
    B[-1, -2] += _GHOST2[1] - 4.0 * _GHOST1[1]
    B[-2, -1] += _GHOST1[0]
    B[-2, -2] += _GHOST1[1]
    return sp.csr_matrix(B / h**4)


def assemble_operators(grid: CavityGrid) -> DiscreteOperators:
    """Assemble every discrete operator consumed by the other modules."""
    g = grid
    D = _divergence(g)
    wv = _velocity_weights(g)
    Mv = sp.diags(wv, format="csr")
    Mp = sp.diags(np.full(g.n_cells, g.hx * g.hz), format="csr")
    # strong gradient on interior faces: -Mv^{-1} D^T Mp, zero on boundary rows
    keep = sp.diags(g.interior_mask.astype(float))
    Gp = sp.csr_matrix(-(keep @ sp.diags(1.0 / wv) @ D.T @ Mp))
    Gp.eliminate_zeros()
    Lv = sp.csr_matrix(-_dirichlet_energy(g))
    B4 = _beam_fourth_derivative(g.n_beam, g.hx)
    T = sp.csr_matrix(
        (np.ones(g.n_beam), (np.arange(g.n_beam), g.beam_index)), shape=(g.n_beam, g.n_vel)
    )
    mb = np.full(g.n_beam, g.hx)
    Mb = sp.diags(mb, format="csr")
    m = mb / mb.sum()
    for mat in (D, Gp, Lv, B4, T, Mv, Mb, Mp):
        mat.sort_indices()
    return DiscreteOperators(grid=g, D=D, Gp=Gp, Lv=Lv, B4=B4, T=T, m=m, Mv=Mv, Mb=Mb, Mp=Mp)


def apply_trace(ops: DiscreteOperators | CavityGrid, v: np.ndarray) -> np.ndarray:
    """Vertical velocity on the lid, one value per beam node."""
    grid = ops.grid if isinstance(ops, DiscreteOperators) else ops
    v = np.asarray(v, dtype=float)
    if v.shape[0] != grid.n_vel:
        raise ValueError(f"velocity vector has {v.shape[0]} entries, expected {grid.n_vel}")
    return v[grid.beam_index].copy()
