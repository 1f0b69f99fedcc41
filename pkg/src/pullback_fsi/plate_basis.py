"""Clamped beam eigenmodes on the zero-mean subspace and spectral norms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .discretization import DiscreteOperators
from .stokes_basis import EigenSolveError, fix_sign

__all__ = [
    "PlateMode",
    "PlateBasis",
    "solve_plate_eigen",
    "fractional_norm",
    "project_plate",
    "mean_projector",
]

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class PlateMode:
    kappa: float
    g: np.ndarray


@dataclass(frozen=True, eq=False)
class PlateBasis:
    kappas: np.ndarray    # (n,)
    G: np.ndarray         # (n_beam, n) modes as columns
    P: np.ndarray         # Mb-orthogonal projector removing the mean
    weights: np.ndarray   # Mb diagonal
    mean: np.ndarray      # mean functional m
    residuals: np.ndarray

    @property
    def n(self) -> int:
        return self.kappas.shape[0]

    @property
    def modes(self) -> list[PlateMode]:
        return [PlateMode(float(self.kappas[k]), self.G[:, k]) for k in range(self.n)]

    def reconstruct(self, beta: np.ndarray) -> np.ndarray:
        return self.G @ np.asarray(beta, dtype=float)


def mean_projector(ops: DiscreteOperators) -> np.ndarray:
    """``P = I - 1 m``: subtracts the beam mean."""
    nb = ops.grid.n_beam
    return np.eye(nb) - np.outer(np.ones(nb), ops.m)


def solve_plate_eigen(ops: DiscreteOperators, n: int) -> PlateBasis:
    """Lowest ``n`` eigenpairs of ``P B4 P`` on the zero-mean subspace."""
    nb = ops.grid.n_beam
    if n < 1 or n > nb - 1:
        raise ValueError(f"requested {n} plate modes; the zero-mean subspace has dimension {nb - 1}")
    P = mean_projector(ops)
    B4 = ops.B4.toarray()
    wb = ops.mb_diag
    # Mb-orthonormal basis of the zero-mean subspace: in sqrt(Mb)-scaled
    # coordinates it is the orthogonal complement of sqrt(w)
    sw = np.sqrt(wb)
    Qfull, _ = np.linalg.qr(np.column_stack([sw, np.eye(nb)[:, : nb - 1]]))
    Q = Qfull[:, 1:nb] / sw[:, None]
    Kq = Q.T @ (wb[:, None] * (B4 @ Q))
    Kq = 0.5 * (Kq + Kq.T)
    try:
        kap, Y = sla.eigh(Kq, subset_by_index=[0, n - 1])
    except sla.LinAlgError as exc:  # pragma: no cover
        raise EigenSolveError(f"plate eigensolve failed: {exc}") from exc
    G = fix_sign(Q @ Y)
    resid = P @ (B4 @ (P @ G)) - G * kap[None, :]
    residuals = np.linalg.norm(resid, axis=0) / (kap * np.linalg.norm(G, axis=0))
    if np.any(residuals > RESIDUAL_TOL):
        raise EigenSolveError(f"plate eigenpairs above tolerance: {residuals.max():.3e}", residuals)
    return PlateBasis(kappas=kap.copy(), G=G, P=P, weights=wb.copy(), mean=ops.m.copy(), residuals=residuals)


def fractional_norm(basis: PlateBasis, beta: np.ndarray, s: float) -> float:
    """Spectral norm ``(sum_j kappa_j^(s/2) beta_j^2)^(1/2)`` for ``s`` in [0, 2].

    ``s = 2`` gives the ``||Delta u||`` energy norm and ``s = 0`` the L2 norm
    of the expansion. Accepts a stack of coefficient vectors along axis 0.
    """
    if not 0.0 <= s <= 2.0:
        raise ValueError(f"order s must lie in [0, 2], got {s}")
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != basis.n:
        raise ValueError(f"coefficient vector has length {beta.shape[-1]}, basis has {basis.n} modes")
    w = basis.kappas ** (0.5 * s)
    return np.sqrt(np.sum(w * beta**2, axis=-1))


def project_plate(basis: PlateBasis, u: np.ndarray) -> np.ndarray:
    """Coefficients ``beta_j = (u, g_j)_Mb``; the mean of ``u`` is ignored."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.G.shape[0]:
        raise ValueError(f"beam field has {u.shape[0]} nodes, expected {basis.G.shape[0]}")
    if u.ndim == 1:
        return basis.G.T @ (basis.weights * u)
    return basis.G.T @ (basis.weights[:, None] * u)
