"""Dirichlet Stokes eigenbasis and the Stokes lifting of lid data.

Both problems are solved on the subspace of interior velocity fields with
zero discrete divergence. An orthonormal basis ``Z`` of that subspace is
obtained once per operator set from a pivoted QR factorisation of the
transposed interior divergence; the pressure drops out and the eigenproblem
becomes a dense symmetric-definite one.
"""

from __future__ import annotations

import logging
import warnings
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .discretization import DiscreteOperators

__all__ = [
    "StokesMode",
    "StokesBasis",
    "LiftingOperator",
    "EigenSolveError",
    "CompatibilityWarning",
    "solve_stokes_eigen",
    "build_lifting",
    "project_onto_basis",
    "fix_sign",
]

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


class EigenSolveError(RuntimeError):
    """Raised when an eigensolve fails or returns pairs above tolerance."""

    def __init__(self, message: str, residuals: np.ndarray | None = None):
        super().__init__(message)
        self.residuals = residuals


class CompatibilityWarning(UserWarning):
    """Lid data with nonzero mean cannot be the trace of a solenoidal field."""


def fix_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that the first clearly nonzero entry is positive."""
    out = np.array(vectors, dtype=float, copy=True)
    for k in range(out.shape[1]):
        col = out[:, k]
        scale = np.abs(col).max()
        if scale == 0.0:
            continue
        first = np.flatnonzero(np.abs(col) > 1e-8 * scale)[0]
        if col[first] < 0:
            out[:, k] = -col
    return out


@dataclass(frozen=True)
class StokesMode:
    lam: float
    e: np.ndarray
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class StokesBasis:
    """First ``m`` Stokes eigenpairs, ascending, Mv-orthonormal."""

    lambdas: np.ndarray   # (m,)
    E: np.ndarray         # (n_vel, m) velocity fields
    P: np.ndarray         # (n_cells, m) zero-mean pressures
    weights: np.ndarray   # Mv diagonal
    residuals: np.ndarray  # relative eigen-residuals

    @property
    def m(self) -> int:
        return self.lambdas.shape[0]

    @property
    def modes(self) -> list[StokesMode]:
        return [StokesMode(float(self.lambdas[k]), self.E[:, k], self.P[:, k]) for k in range(self.m)]

    def reconstruct(self, alpha: np.ndarray) -> np.ndarray:
        return self.E @ np.asarray(alpha, dtype=float)


@dataclass(frozen=True, eq=False)
class LiftingOperator:
    """Dense matrix form of the Stokes extension of lid data.

    Column ``j`` is the discrete Stokes solution with zero velocity on the
    walls and lid velocity equal to the zero-mean projection of the j-th unit
    beam vector, so ``Nmat @ b`` already discards the mean of ``b``.
    """

    Nmat: np.ndarray      # (n_vel, n_beam)
    Pmat: np.ndarray      # (n_cells, n_beam) associated pressures
    mean: np.ndarray      # beam mean functional

    def lift(self, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        avg = float(self.mean @ b) if b.ndim == 1 else self.mean @ b
        if np.any(np.abs(avg) > tol * max(1.0, float(np.abs(b).max(initial=0.0)))):
            warnings.warn(
                "lid data has nonzero mean; projected to zero mean before lifting",
                CompatibilityWarning,
                stacklevel=2,
            )
        return self.Nmat @ b


class _SolenoidalSpace:
    """Orthonormal basis of interior fields with zero discrete divergence."""

    def __init__(self, ops: DiscreteOperators):
        g = ops.grid
        self.interior = np.flatnonzero(g.interior_mask)
        self.lid = g.beam_index
        D = ops.D.tocsc()
        self.D_I = D[:, self.interior].toarray()
        self.D_L = D[:, self.lid].toarray()
        A = -ops.Lv.tocsr()
        self.A_II = A[self.interior][:, self.interior].toarray()
        self.A_IL = A[self.interior][:, self.lid].toarray()
        self.w_I = ops.mv_diag[self.interior]

        Q, R, piv = sla.qr(self.D_I.T, pivoting=True, mode="full")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > diag[0] * 1e-10))
        self.rank = rank
        self.Z = Q[:, rank:]
        self.Q1 = Q[:, :rank]
        self.R1 = R[:rank, :rank]
        self.piv = piv
        self.K = self.Z.T @ self.A_II @ self.Z
        self.K = 0.5 * (self.K + self.K.T)
        self.Mz = self.Z.T @ (self.w_I[:, None] * self.Z)
        self.Mz = 0.5 * (self.Mz + self.Mz.T)
        self._chol = None

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def particular(self, rhs: np.ndarray) -> np.ndarray:
        """Some interior field with ``D_I v = rhs`` (rhs must sum to zero)."""
        rhs = np.asarray(rhs)[self.piv][: self.rank]
        w = sla.solve_triangular(self.R1, rhs, trans="T", lower=False)
        return self.Q1 @ w

    def solve(self, rhs_z: np.ndarray) -> np.ndarray:
        if self._chol is None:
            self._chol = sla.cho_factor(self.K)
        return sla.cho_solve(self._chol, rhs_z)

    def pressure(self, resid_I: np.ndarray, ops: DiscreteOperators) -> np.ndarray:
        """Zero-mean least-squares solution of ``D_I^T Mp p = resid_I``."""
        wp = ops.Mp.diagonal()
        p, *_ = sla.lstsq(self.D_I.T * wp[None, :], resid_I)
        return p - (wp @ p) / wp.sum()


_SPACES: "weakref.WeakKeyDictionary[DiscreteOperators, _SolenoidalSpace]" = weakref.WeakKeyDictionary()


def _space(ops: DiscreteOperators) -> _SolenoidalSpace:
    space = _SPACES.get(ops)
    if space is None:
        space = _SolenoidalSpace(ops)
        _SPACES[ops] = space
    return space


def solve_stokes_eigen(ops: DiscreteOperators, m: int) -> StokesBasis:
    """Lowest ``m`` eigenpairs of the discrete Dirichlet Stokes problem."""
    space = _space(ops)
    if m < 1 or m > space.dim:
        raise ValueError(f"requested {m} Stokes modes; the solenoidal subspace has dimension {space.dim}")
    try:
        lam, Y = sla.eigh(space.K, space.Mz, subset_by_index=[0, m - 1])
    except sla.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise EigenSolveError(f"Stokes eigensolve failed: {exc}") from exc

    g = ops.grid
    E = np.zeros((g.n_vel, m))
    E[space.interior] = space.Z @ Y
    E = fix_sign(E)
    e_I = E[space.interior]
    wv = ops.mv_diag
    # weak residual before the pressure correction: A e - lam Mv e
    R_I = space.A_II @ e_I - lam[None, :] * (wv[space.interior][:, None] * e_I)
    P = space.pressure(R_I, ops)
    wp = ops.Mp.diagonal()
    full = R_I - space.D_I.T @ (wp[:, None] * P)
    scale = lam[None, :] * np.linalg.norm(wv[space.interior][:, None] * e_I, axis=0)
    residuals = np.linalg.norm(full, axis=0) / scale[0]
    if np.any(residuals > RESIDUAL_TOL):
        raise EigenSolveError(
            f"Stokes eigenpairs above tolerance {RESIDUAL_TOL:g}: max residual {residuals.max():.3e}",
            residuals,
        )
    log.debug("Stokes eigensolve m=%d: lambda_1=%.6g, max residual %.2e", m, lam[0], residuals.max())
    return StokesBasis(lambdas=lam.copy(), E=E, P=P, weights=wv.copy(), residuals=residuals)


def build_lifting(ops: DiscreteOperators) -> LiftingOperator:
    """Matrix of the discrete Stokes extension of zero-mean lid data."""
    space = _space(ops)
    g = ops.grid
    nb = g.n_beam
    proj = np.eye(nb) - np.outer(np.ones(nb), ops.m)   # removes the beam mean
    rhs = -space.D_L @ proj
    if np.abs(rhs.sum(axis=0)).max() > 1e-9 * max(1.0, np.abs(rhs).max()):
        raise np.linalg.LinAlgError("lifting saddle-point system is incompatible; bad grid")
    Vp = space.particular(rhs)
    load = space.A_II @ Vp + space.A_IL @ proj
    try:
        Y = space.solve(-(space.Z.T @ load))
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular lifting solve: {exc}") from exc
    V_I = Vp + space.Z @ Y
    N = np.zeros((g.n_vel, nb))
    N[space.interior] = V_I
    N[g.beam_index] = proj
    # pressures: A_II v_I + A_IL b - D_I^T Mp p = 0
    P = space.pressure(space.A_II @ V_I + space.A_IL @ proj, ops)
    return LiftingOperator(Nmat=N, Pmat=P, mean=ops.m.copy())


def project_onto_basis(basis: StokesBasis, v: np.ndarray) -> np.ndarray:
    """Coefficients ``alpha_i = (v, e_i)_Mv``."""
    v = np.asarray(v, dtype=float)
    if basis.m == 0:
        raise ValueError("empty basis")
    return basis.E.T @ (basis.weights * v) if v.ndim == 1 else basis.E.T @ (basis.weights[:, None] * v)
