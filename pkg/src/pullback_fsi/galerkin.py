"""Coupled modal system for the fluid/plate Galerkin approximation and its
implicit-midpoint integrator.

Unknowns are ``alpha`` (Stokes modes), ``beta`` (plate displacement modes)
and ``gamma = beta'``. With ``x = (alpha, gamma)`` the system reads

    M(t) x' = b(t) - S x - J (K beta + F(beta)),     beta' = gamma,

where ``M = [[mu I, mu C], [mu C^T, mu G + rho I]]``, ``S`` is the viscous
damping block and ``J`` injects plate forces into the ``gamma`` rows.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .discretization import DiscreteOperators
from .physics import CoefficientProfile, ForcingProfile, ModalForce, NonlinearForce
from .plate_basis import PlateBasis, project_plate
from .stokes_basis import LiftingOperator, StokesBasis, project_onto_basis

__all__ = [
    "ModalCouplings",
    "GalerkinState",
    "ProcessRun",
    "Trajectory",
    "SolverTolerances",
    "SolverError",
    "NotSPDError",
    "GridMismatchError",
    "assemble_couplings",
    "mass_matrix",
    "forcing_vector",
    "rhs",
    "initial_state",
    "step",
    "evolve",
    "evolve_state",
    "evolve_batch",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Midpoint iteration failed even after repeated step halving."""


class NotSPDError(np.linalg.LinAlgError):
    def __init__(self, message: str, smallest: float):
        super().__init__(message)
        self.smallest = smallest


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModalCouplings:
    """Modal inner products; ``phi_j = Nmat g_j`` are the lifted plate modes."""

    C: np.ndarray        # (m, n)  (phi_j, e_k)
    G: np.ndarray        # (n, n)  (phi_j, phi_k)
    Sef: np.ndarray      # (m, n)  (grad e_i, grad phi_k)
    Sff: np.ndarray      # (n, n)  (grad phi_j, grad phi_k)
    lambdas: np.ndarray
    kappas: np.ndarray
    E: np.ndarray = field(repr=False)      # Stokes modes (n_vel, m)
    Phi: np.ndarray = field(repr=False)    # lifted plate modes (n_vel, n)
    Gplate: np.ndarray = field(repr=False)  # plate modes (n_beam, n)
    wv: np.ndarray = field(repr=False)
    wb: np.ndarray = field(repr=False)
    lift: LiftingOperator = field(repr=False)
    stokes: StokesBasis = field(repr=False)
    plate: PlateBasis = field(repr=False)

    @property
    def m(self) -> int:
        return self.lambdas.shape[0]

    @property
    def n(self) -> int:
        return self.kappas.shape[0]

    @property
    def dim(self) -> int:
        return self.m + 2 * self.n

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.lambdas)

    @property
    def K(self) -> np.ndarray:
        return np.diag(self.kappas)

    @property
    def gram(self) -> np.ndarray:
        """Gram matrix of ``{e_i} u {phi_j}``."""
        return np.block([[np.eye(self.m), self.C], [self.C.T, self.G]])

    @property
    def damping(self) -> np.ndarray:
        """Quadratic form of ``||grad v||^2`` on ``(alpha, gamma)``."""
        return np.block([[self.Lambda, self.Sef], [self.Sef.T, self.Sff]])

    def literal_damping(self) -> np.ndarray:
        """Damping with the plate block read as ``(grad e_j, grad phi_k)``."""
        m, n = self.m, self.n
        lit = np.zeros((n, n))
        k = min(m, n)
        lit[:, :k] = self.Sef[:k, :].T
        return np.block([[self.Lambda, self.Sef], [self.Sef.T, lit]])

    def velocity(self, alpha: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        return self.E @ alpha + self.Phi @ gamma


def assemble_couplings(
    stokes: StokesBasis, plate: PlateBasis, lift: LiftingOperator, ops: DiscreteOperators
) -> ModalCouplings:
    g = ops.grid
    if stokes.E.shape[0] != g.n_vel or lift.Nmat.shape[0] != g.n_vel:
        raise GridMismatchError(f"fluid bases do not match the {g.nx}x{g.nz} grid")
    if plate.G.shape[0] != g.n_beam or lift.Nmat.shape[1] != g.n_beam:
        raise GridMismatchError(f"plate basis does not match the {g.n_beam}-node beam")
    wv = ops.mv_diag
    A = (-ops.Lv).tocsr()
    E = stokes.E
    Phi = lift.Nmat @ plate.G
    WPhi = wv[:, None] * Phi
    C = E.T @ WPhi
    G = Phi.T @ WPhi
    G = 0.5 * (G + G.T)
    APhi = A @ Phi
    Sef = E.T @ APhi
    Sff = Phi.T @ APhi
    Sff = 0.5 * (Sff + Sff.T)
    return ModalCouplings(
        C=C, G=G, Sef=Sef, Sff=Sff,
        lambdas=stokes.lambdas.copy(), kappas=plate.kappas.copy(),
        E=E, Phi=Phi, Gplate=plate.G, wv=wv, wb=ops.mb_diag,
        lift=lift, stokes=stokes, plate=plate,
    )


def mass_matrix(coup: ModalCouplings, mu: float, rho: float) -> np.ndarray:
    """``M(t)`` acting on ``(alpha', gamma')``; raises :class:`NotSPDError` if indefinite."""
    if mu <= 0 or rho <= 0:
        raise ValueError("mu and rho must be positive")
    m, n = coup.m, coup.n
    M = np.empty((m + n, m + n))
    M[:m, :m] = mu * np.eye(m)
    M[:m, m:] = mu * coup.C
    M[m:, :m] = mu * coup.C.T
    M[m:, m:] = mu * coup.G + rho * np.eye(n)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(M)[0])
        raise NotSPDError(f"mass matrix not SPD (smallest eigenvalue {smallest:.3e})", smallest) from None
    return M


@dataclass
class GalerkinState:
    t: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.gamma])

    @classmethod
    def from_vector(cls, t: float, y: np.ndarray, m: int, n: int) -> "GalerkinState":
        y = np.asarray(y, dtype=float)
        return cls(float(t), y[:m].copy(), y[m : m + n].copy(), y[m + n : m + 2 * n].copy())

    @classmethod
    def zeros(cls, t: float, m: int, n: int) -> "GalerkinState":
        return cls(float(t), np.zeros(m), np.zeros(n), np.zeros(n))

    def velocity(self, coup: ModalCouplings) -> np.ndarray:
        return coup.velocity(self.alpha, self.gamma)

    def displacement(self, coup: ModalCouplings) -> np.ndarray:
        return coup.Gplate @ self.beta

    def plate_velocity(self, coup: ModalCouplings) -> np.ndarray:
        return coup.Gplate @ self.gamma


class _ForcingProjector:
    """Precomputed modal projections of the forcing shapes."""

    def __init__(self, coup: ModalCouplings, forcing: ForcingProfile | None):
        self.forcing = forcing
        self.zero = forcing is None or forcing.is_zero
        if not self.zero:
            self.fe = coup.E.T @ (coup.wv * forcing.f_shape)
            self.fphi = coup.Phi.T @ (coup.wv * forcing.f_shape)
            self.gk = coup.Gplate.T @ (coup.wb * forcing.g_shape)
        self.m, self.n = coup.m, coup.n

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros(self.m + self.n)
        if self.zero:
            return out
        af, ag = self.forcing._amplitudes(t)
        out[: self.m] = af * self.fe
        out[self.m :] = af * self.fphi + ag * self.gk
        return out

    def work(self, t: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(f, v)`` and ``(g, u_t)`` along stored states ``Y`` (rows)."""
        if self.zero:
            return np.zeros(len(t)), np.zeros(len(t))
        af, ag = self.forcing._amplitudes(np.asarray(t))
        m, n = self.m, self.n
        alpha, gamma = Y[:, :m], Y[:, m + n :]
        fv = af * (alpha @ self.fe + gamma @ self.fphi)
        gu = ag * (gamma @ self.gk)
        return fv, gu


def forcing_vector(coup: ModalCouplings, t: float, forcing: ForcingProfile | None) -> np.ndarray:
    """``((f, e_k), (f, phi_k) + (g, g_k))`` at time ``t``."""
    return _ForcingProjector(coup, forcing)(t)


def rhs(
    coup: ModalCouplings,
    state: GalerkinState,
    profile: CoefficientProfile,
    F: NonlinearForce | None,
    forcing: ForcingProfile | None,
    literal_damping: bool = False,
) -> np.ndarray:
    """Right side of ``M(t) (alpha', gamma') = rhs``.

    The coefficient profile is not needed for the right side itself; it is
    accepted so the call mirrors the evolution signature.
    """
    m = coup.m
    x = np.concatenate([state.alpha, state.gamma])
    D = coup.literal_damping() if literal_damping else coup.damping
    out = forcing_vector(coup, state.t, forcing) - D @ x
    plate = coup.kappas * state.beta
    if F is not None and not F.is_zero:
        plate = plate + F.modal(coup.plate)(state.beta)
    out[m:] -= plate
    return out


@dataclass(frozen=True)
class SolverTolerances:
    fixed_point_tol: float = 1e-11
    max_fixed_point: int = 50
    max_newton: int = 50
    max_halvings: int = 10


@dataclass(eq=False)
class ProcessRun:
    """Configuration of one evolution ``U(t, tau)``."""

    coup: ModalCouplings
    profile: CoefficientProfile
    tau: float
    t_end: float
    dt: float
    F: NonlinearForce | None = None
    forcing: ForcingProfile | None = None
    tolerances: SolverTolerances = field(default_factory=SolverTolerances)
    literal_damping: bool = False
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.tau:
            raise ValueError("t_end must not precede tau")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        self._modal = None if self.F is None or self.F.is_zero else self.F.modal(self.coup.plate)
        self._force = _ForcingProjector(self.coup, self.forcing)
        self._D = self.coup.literal_damping() if self.literal_damping else self.coup.damping

    @property
    def modal_force(self) -> ModalForce | None:
        return self._modal

    @property
    def forcing_projector(self) -> _ForcingProjector:
        return self._force

    def time_grid(self) -> np.ndarray:
        span = self.t_end - self.tau
        nsteps = int(np.ceil(span / self.dt - 1e-9)) if span > 0 else 0
        t = self.tau + self.dt * np.arange(nsteps + 1)
        if nsteps:
            t[-1] = self.t_end
        return t


@dataclass
class Trajectory:
    """Recorded states, one row per recorded time (``members`` on a trailing axis for ensembles)."""

    run: ProcessRun
    times: np.ndarray
    states: np.ndarray
    newton_steps: int = 0
    halvings: int = 0
    wall_time: float = 0.0

    @property
    def m(self) -> int:
        return self.run.coup.m

    @property
    def n(self) -> int:
        return self.run.coup.n

    def state(self, k: int = -1, member: int | None = None) -> GalerkinState:
        y = self.states[k] if member is None else self.states[k, :, member]
        return GalerkinState.from_vector(self.times[k], y, self.m, self.n)

    @property
    def final(self) -> GalerkinState:
        return self.state(-1)

    def member(self, j: int) -> "Trajectory":
        if self.states.ndim != 3:
            raise ValueError("not an ensemble trajectory")
        return Trajectory(self.run, self.times, self.states[:, :, j], self.newton_steps, self.halvings, self.wall_time)


# ---------------------------------------------------------------------------
# time stepping


class _Stepper:
    """Implicit midpoint for a batch of states sharing one run.

    The linear part is solved exactly with an LU of
    ``M(t_mid)/dt + S/2 + dt/4 J K J^T``; only the nonlinear plate force is
    iterated.
    """

    def __init__(self, run: ProcessRun):
        self.run = run
        c = run.coup
        self.m, self.n = c.m, c.n
        self.D = run._D
        self.tol = run.tolerances
        self.newton_steps = 0
        self.halvings = 0

    def _matrix(self, t_mid: float, dt: float) -> np.ndarray:
        mu, rho = float(self.run.profile.mu(t_mid)), float(self.run.profile.rho(t_mid))
        A = mass_matrix(self.run.coup, mu, rho) / dt + 0.5 * self.D
        idx = np.arange(self.m, self.m + self.n)
        A[idx, idx] += 0.25 * dt * self.run.coup.kappas
        return A

    def step(self, t: float, dt: float, Y: np.ndarray, depth: int = 0) -> np.ndarray:
        try:
            return self._step(t, dt, Y)
        except SolverError:
            if depth >= self.tol.max_halvings:
                raise
            self.halvings += 1
            log.warning("midpoint solve failed at t=%.6g, halving dt to %.3g", t, dt / 2)
            half = self.step(t, 0.5 * dt, Y, depth + 1)
            return self.step(t + 0.5 * dt, 0.5 * dt, half, depth + 1)

    def _step(self, t: float, dt: float, Y: np.ndarray) -> np.ndarray:
        m, n = self.m, self.n
        kap = self.run.coup.kappas[:, None]
        alpha, beta, gamma = Y[:m], Y[m : m + n], Y[m + n :]
        x = np.vstack([alpha, gamma])
        t_mid = t + 0.5 * dt
        A = self._matrix(t_mid, dt)
        lu = sla.lu_factor(A)
        r0 = self.run._force(t_mid)[:, None] - self.D @ x
        r0[m:] -= kap * (beta + 0.5 * dt * gamma)

        Fm = self.run._modal
        delta = sla.lu_solve(lu, r0)
        if Fm is not None:
            delta = self._nonlinear(lu, A, r0, delta, beta, gamma, Fm, dt)
        x_new = x + delta
        beta_new = beta + dt * (gamma + 0.5 * delta[m:])
        return np.vstack([x_new[:m], beta_new, x_new[m:]])

    def _nonlinear(self, lu, A, r0, delta, beta, gamma, Fm, dt):
        m = self.m
        tol = self.tol.fixed_point_tol

        def beta_mid(d, b=beta, g=gamma):
            return b + 0.5 * dt * (g + 0.5 * d[m:])

        for _ in range(self.tol.max_fixed_point):
            r = r0.copy()
            r[m:] -= Fm(beta_mid(delta))
            new = sla.lu_solve(lu, r)
            change = np.abs(new - delta).max(axis=0)
            delta = new
            if np.all(change <= tol * np.maximum(1.0, np.abs(delta).max(axis=0))):
                return delta
        # Newton fallback, member by member
        self.newton_steps += 1
        out = delta.copy()
        for j in range(delta.shape[1]):
            bm = lambda d, j=j: beta_mid(d, beta[:, j], gamma[:, j])
            out[:, j] = self._newton(A, r0[:, j], delta[:, j], bm, Fm, dt)
        return out

    def _newton(self, A, r0, d, beta_mid, Fm, dt):
        m = self.m
        for _ in range(self.tol.max_newton):
            bm = beta_mid(d)
            res = A @ d - r0
            res[m:] += Fm(bm)
            J = A.copy()
            J[m:, m:] += 0.25 * dt * Fm.jacobian(bm)
            step = np.linalg.solve(J, -res)
            d = d + step
            if np.abs(step).max() <= self.tol.fixed_point_tol * max(1.0, np.abs(d).max()):
                return d
        raise SolverError("Newton fallback did not converge")


def _run(run: ProcessRun, Y0: np.ndarray) -> Trajectory:
    """Integrate a batch ``Y0`` (dim, k) over the run's time grid."""
    tic = time.perf_counter()
    stepper = _Stepper(run)
    times = run.time_grid()
    keep = [0] + [k for k in range(1, len(times)) if k % run.record_every == 0 or k == len(times) - 1]
    keep_set = set(keep)
    out = np.empty((len(keep),) + Y0.shape)
    Y = np.array(Y0, dtype=float, copy=True)
    out[0] = Y
    row = 1
    for k in range(1, len(times)):
        Y = stepper.step(times[k - 1], times[k] - times[k - 1], Y)
        if not np.all(np.isfinite(Y)):
            raise SolverError(f"non-finite state at t={times[k]:.6g}")
        if k in keep_set:
            out[row] = Y
            row += 1
    return Trajectory(
        run, times[keep], out,
        newton_steps=stepper.newton_steps, halvings=stepper.halvings,
        wall_time=time.perf_counter() - tic,
    )


def initial_state(coup: ModalCouplings, tau: float, v: np.ndarray, u0: np.ndarray, u1: np.ndarray,
                  tol: float = 1e-10) -> GalerkinState:
    """Project discrete data ``(v, u0, u1)``: ``alpha = Pi_m(v - N u1)``, ``beta = P_n u0``, ``gamma = P_n u1``."""
    for name, u in (("u0", u0), ("u1", u1)):
        avg = float(coup.plate.mean @ u)
        if abs(avg) > tol * max(1.0, float(np.abs(u).max(initial=0.0))):
            raise ValueError(f"plate datum {name} has nonzero mean {avg:.3e}")
    alpha = project_onto_basis(coup.stokes, np.asarray(v, float) - coup.lift.Nmat @ u1)
    return GalerkinState(float(tau), alpha, project_plate(coup.plate, u0), project_plate(coup.plate, u1))


def step(run: ProcessRun, state: GalerkinState) -> GalerkinState:
    """One midpoint step of size ``run.dt`` from ``state``."""
    stepper = _Stepper(run)
    y = stepper.step(state.t, run.dt, state.to_vector()[:, None])[:, 0]
    return GalerkinState.from_vector(state.t + run.dt, y, run.coup.m, run.coup.n)


def evolve(run: ProcessRun, W_tau: tuple[np.ndarray, np.ndarray, np.ndarray]) -> Trajectory:
    """``U(t, tau) W_tau`` for discrete fields ``W_tau = (v, u0, u1)``."""
    v, u0, u1 = W_tau
    return evolve_state(run, initial_state(run.coup, run.tau, v, u0, u1))


def evolve_state(run: ProcessRun, state: GalerkinState) -> Trajectory:
    if abs(state.t - run.tau) > 1e-12 * max(1.0, abs(run.tau)):
        raise ValueError(f"state time {state.t} differs from run origin {run.tau}")
    return _run(run, state.to_vector()[:, None]).member(0)


def evolve_batch(run: ProcessRun, Y0: np.ndarray) -> Trajectory:
    """Evolve the columns of ``Y0`` (dim, members) together; states get shape (T, dim, members)."""
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.ndim != 2 or Y0.shape[0] != run.coup.dim:
        raise ValueError(f"batch must have shape ({run.coup.dim}, members)")
    return _run(run, Y0)
