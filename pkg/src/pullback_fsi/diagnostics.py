"""Norms, energies, the energy-balance audit, the Lyapunov functional and the
difference-estimate audit, all evaluated in modal coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.integrate import cumulative_trapezoid

from .galerkin import GalerkinState, ModalCouplings, Trajectory
from .physics import CoefficientProfile, NonlinearForce
from .plate_basis import fractional_norm

__all__ = [
    "norm_matrix",
    "ht_norm",
    "ht_norms",
    "energy",
    "EnergyReport",
    "energy_report",
    "energy_balance_residual",
    "LyapunovReport",
    "lyapunov",
    "lyapunov_sweep",
    "DifferenceReport",
    "difference_audit",
    "fit_difference",
    "ContinuityReport",
    "continuous_dependence",
]

log = logging.getLogger(__name__)


def norm_matrix(coup: ModalCouplings, mu: float, rho: float, literal: bool = False) -> np.ndarray:
    """Symmetric ``H`` with ``||y||_{H_t}^2 = y @ H @ y`` on ``y = (alpha, beta, gamma)``.

    Default: ``mu ||v||^2 + ||Delta u||^2 + rho ||u_t||^2`` (twice the quadratic
    energy). ``literal=True``: ``mu ||v||^2 + rho ||u||^2 + ||u_t||^2``.
    """
    m, n = coup.m, coup.n
    H = np.zeros((m + 2 * n, m + 2 * n))
    x = np.r_[np.arange(m), np.arange(m + n, m + 2 * n)]
    H[np.ix_(x, x)] = mu * coup.gram
    b = np.arange(m, m + n)
    g = np.arange(m + n, m + 2 * n)
    if literal:
        H[b, b] += rho
        H[g, g] += 1.0
    else:
        H[b, b] += coup.kappas
        H[g, g] += rho
    return H


def _quad(Y: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``y @ H @ y`` row-wise for ``Y`` of shape (..., dim)."""
    return np.einsum("...i,ij,...j->...", Y, H, Y)


def ht_norm(state: GalerkinState, coup: ModalCouplings, profile: CoefficientProfile, literal: bool = False) -> float:
    H = norm_matrix(coup, float(profile.mu(state.t)), float(profile.rho(state.t)), literal)
    return float(np.sqrt(max(_quad(state.to_vector(), H), 0.0)))


def ht_norms(coup: ModalCouplings, profile: CoefficientProfile, times: np.ndarray, Y: np.ndarray,
             literal: bool = False) -> np.ndarray:
    """H_t norms along states ``Y`` (T, dim) or (T, dim, members)."""
    times = np.asarray(times, dtype=float)
    mu, rho = profile.mu(times), profile.rho(times)
    out = np.empty(Y.shape[:1] + Y.shape[2:])
    for k in range(len(times)):
        H = norm_matrix(coup, float(mu[k]), float(rho[k]), literal)
        y = Y[k].T if Y.ndim == 3 else Y[k]
        out[k] = _quad(y, H)
    return np.sqrt(np.maximum(out, 0.0))


def _split(coup: ModalCouplings, Y: np.ndarray):
    m, n = coup.m, coup.n
    return Y[..., :m], Y[..., m : m + n], Y[..., m + n :]


def _parts(coup: ModalCouplings, Y: np.ndarray):
    """``||v||^2``, ``||Delta u||^2``, ``||u_t||^2`` and ``||grad v||^2`` for rows of ``Y``."""
    a, b, g = _split(coup, Y)
    x = np.concatenate([a, g], axis=-1)
    vv = _quad(x, coup.gram)
    lap = np.sum(coup.kappas * b**2, axis=-1)
    ut = np.sum(g**2, axis=-1)
    grad = _quad(x, coup.damping)
    return vv, lap, ut, grad


def _potential(coup: ModalCouplings, F: NonlinearForce | None, beta: np.ndarray) -> np.ndarray:
    if F is None or F.is_zero:
        return np.zeros(beta.shape[:-1])
    Fm = F.modal(coup.plate)
    return np.asarray(Fm.potential(np.moveaxis(beta, -1, 0)))


def energy(state: GalerkinState, coup: ModalCouplings, profile: CoefficientProfile,
           F: NonlinearForce | None = None) -> tuple[float, float]:
    """``E = (mu ||v||^2 + rho ||u_t||^2 + ||Delta u||^2) / 2`` and ``scriptE = E + Pi(u)``."""
    vv, lap, ut, _ = _parts(coup, state.to_vector())
    mu, rho = float(profile.mu(state.t)), float(profile.rho(state.t))
    E = 0.5 * (mu * vv + rho * ut + lap)
    return float(E), float(E + _potential(coup, F, state.beta))


@dataclass
class EnergyReport:
    times: np.ndarray
    E: np.ndarray
    scriptE: np.ndarray
    dissipation_rate: np.ndarray       # ||grad v||^2 per step
    dissipation: np.ndarray            # cumulative integral of the rate
    mu_correction: np.ndarray          # cumulative  1/2 int mu' ||v||^2
    rho_correction: np.ndarray         # cumulative  1/2 int rho' ||u_t||^2
    work: np.ndarray                   # cumulative int (f, v) + (g, u_t)
    balance: np.ndarray                # residual of the identity on [tau, t_k]

    @property
    def residual(self) -> float:
        return float(self.balance[-1])

    @property
    def relative_residual(self) -> float:
        scale = abs(self.scriptE[0])
        return abs(self.residual) / scale if scale > 0 else abs(self.residual)

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "scriptE_initial": float(self.scriptE[0]),
            "scriptE_final": float(self.scriptE[-1]),
            "dissipation_total": float(self.dissipation[-1]),
            "mu_correction_total": float(self.mu_correction[-1]),
            "rho_correction_total": float(self.rho_correction[-1]),
            "work_total": float(self.work[-1]),
        }


def energy_report(traj: Trajectory) -> EnergyReport:
    """Per-step energies and the trapezoid residual of the energy identity.

    The residual at ``t`` is
    ``scriptE(t) - scriptE(tau) + int |grad v|^2 - 1/2 int mu'|v|^2
    - 1/2 int rho'|u_t|^2 - int (f, v) - int (g, u_t)``.
    """
    run = traj.run
    coup, prof = run.coup, run.profile
    t, Y = traj.times, traj.states
    if Y.ndim != 2:
        raise ValueError("energy report expects a single-member trajectory")
    vv, lap, ut, grad = _parts(coup, Y)
    mu, rho = prof.mu(t), prof.rho(t)
    E = 0.5 * (mu * vv + rho * ut + lap)
    scriptE = E + _potential(coup, run.F, _split(coup, Y)[1])
    fv, gu = run.forcing_projector.work(t, Y)

    def cum(y):
        return cumulative_trapezoid(y, t, initial=0.0)

    diss = cum(grad)
    muc = 0.5 * cum(prof.dmu(t) * vv)
    rhoc = 0.5 * cum(prof.drho(t) * ut)
    work = cum(fv + gu)
    balance = scriptE - scriptE[0] + diss - muc - rhoc - work
    return EnergyReport(t, E, scriptE, grad, diss, muc, rhoc, work, balance)


def energy_balance_residual(traj: Trajectory) -> float:
    if len(traj.times) < 3:
        raise ValueError("energy balance needs at least 3 recorded steps")
    return energy_report(traj).residual


# ---------------------------------------------------------------------------
# Lyapunov functional


def _cross_matrix(coup: ModalCouplings, mu: float, rho: float) -> np.ndarray:
    """Symmetric ``X`` with ``y @ X @ y = mu (v, N u) + rho (u_t, u)``."""
    m, n = coup.m, coup.n
    dim = m + 2 * n
    B = np.zeros((dim, dim))
    b = slice(m, m + n)
    B[:m, b] = mu * coup.C
    B[m + n :, b] = mu * coup.G + rho * np.eye(n)
    return 0.5 * (B + B.T)


def _theta(coup: ModalCouplings, mu: float, rho: float) -> float:
    """Largest ``|y X y| / E(y)``: generalized eigenvalues of ``X`` against ``H/2``."""
    H = norm_matrix(coup, mu, rho)
    w = sla.eigvalsh(_cross_matrix(coup, mu, rho), 0.5 * H)
    return float(np.abs(w).max())


@dataclass
class LyapunovReport:
    delta: float
    times: np.ndarray
    L: np.ndarray
    E: np.ndarray
    scriptE: np.ndarray
    theta: float
    c1: float
    c2: float
    c3: float
    c4: float
    admissible: bool
    sandwich_ok: bool
    sandwich_margin: float
    omega_hat: float
    fit_window: tuple[float, float]
    decay_constant: float        # smallest C with L' + omega L <= C (|f|^2 + |g|^2) samplewise
    nonincreasing_after: float | None  # first time after which L never increases

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "delta", "theta", "c1", "c2", "c3", "c4", "admissible", "sandwich_ok",
            "sandwich_margin", "omega_hat", "decay_constant", "nonincreasing_after")}
        out["fit_window"] = list(self.fit_window)
        return {k: (float(v) if isinstance(v, (np.floating,)) else v) for k, v in out.items()}


def _fit_window(t, grad, work) -> int:
    """First index where forcing work drops below 1% of dissipation."""
    ok = np.flatnonzero(np.abs(work) <= 0.01 * np.maximum(grad, 0.0))
    if ok.size == 0:
        return 0
    return min(int(ok[0]), len(t) - 2)


def lyapunov(traj: Trajectory, delta: float, transient: float = 1.0) -> LyapunovReport:
    """``L = scriptE + delta (mu (v, N u) + rho (u_t, u))`` along a trajectory."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    run = traj.run
    coup, prof = run.coup, run.profile
    t, Y = traj.times, traj.states
    rep = energy_report(traj)
    mu, rho = prof.mu(t), prof.rho(t)
    a, b, g = _split(coup, Y)
    cross = mu * (np.einsum("ti,ij,tj->t", a, coup.C, b) + np.einsum("ti,ij,tj->t", g, coup.G, b)) \
        + rho * np.sum(g * b, axis=1)
    L = rep.scriptE + delta * cross

    # theta depends on (mu, rho); evaluate on distinct pairs only
    pairs = np.unique(np.column_stack([mu, rho]), axis=0)
    if len(pairs) > 64:
        pairs = pairs[np.linspace(0, len(pairs) - 1, 64).astype(int)]
        pairs = np.vstack([pairs, [[mu.min(), rho.min()]], [[mu.max(), rho.max()]]])
    theta = max(_theta(coup, p, r) for p, r in pairs)
    c_pi = 0.0 if run.F is None or run.F.is_zero else run.F.declared_constants["C"]
    c1, c2 = c_pi, 1.0 - delta * theta
    c3, c4 = 1.0 + delta * theta, delta * theta * c_pi
    lower = -c1 + c2 * rep.E
    upper = c3 * rep.scriptE + c4
    scale = np.maximum(np.abs(L), 1e-300)
    tol = 1e-12 * np.maximum(scale, np.abs(rep.scriptE) + c_pi)
    margin = float(min((L - lower + tol).min(), (upper - L + tol).min()))
    sandwich_ok = margin >= 0

    fv, gu = run.forcing_projector.work(t, Y)
    k0 = _fit_window(t, rep.dissipation_rate, fv + gu)
    y = np.log(np.maximum(L[k0:] + c1, 1e-300))
    if len(y) >= 2 and np.ptp(t[k0:]) > 0:
        slope = np.polyfit(t[k0:], y, 1)[0]
        omega = float(-slope)
    else:
        omega = 0.0

    dL = np.gradient(L, t)
    forcing_sq = run.forcing.norm_sq(t) if run.forcing is not None else np.zeros_like(t)
    excess = dL + omega * L
    pos = forcing_sq > 0
    if pos.any():
        decay_constant = float(np.max(excess[pos] / forcing_sq[pos]))
    else:
        decay_constant = float(max(excess.max(), 0.0))

    inc = np.flatnonzero(np.diff(L) > 1e-13 * np.maximum(np.abs(L[1:]), 1e-300))
    after = float(t[0]) if inc.size == 0 else (float(t[inc[-1] + 1]) if inc[-1] + 1 < len(t) - 1 else None)
    return LyapunovReport(
        delta=float(delta), times=t, L=L, E=rep.E, scriptE=rep.scriptE, theta=theta,
        c1=c1, c2=c2, c3=c3, c4=c4, admissible=c2 > 0, sandwich_ok=bool(sandwich_ok),
        sandwich_margin=margin, omega_hat=omega, fit_window=(float(t[k0]), float(t[-1])),
        decay_constant=decay_constant, nonincreasing_after=after,
    )


def lyapunov_sweep(traj: Trajectory, deltas=(0.01, 0.1, 1.0)) -> tuple[list[LyapunovReport], float | None]:
    """Reports for each ``delta`` and the first one violating the sandwich (or None)."""
    reports = [lyapunov(traj, d) for d in deltas]
    first_bad = next((r.delta for r in reports if not (r.admissible and r.sandwich_ok)), None)
    return reports, first_bad


# ---------------------------------------------------------------------------
# difference estimate


@dataclass
class DifferenceReport:
    T0: float
    t: float
    lhs: float        # ||W1(t) - W2(t)||_{H_t}
    rhs: float        # max over [t - T0, t] of ||u1 - u2||_{2 - eps}
    eps_frac: float


def difference_audit(traj1: Trajectory, traj2: Trajectory, eps_frac: float = 0.25, T0: float = 10.0,
                     t: float | None = None) -> DifferenceReport:
    """Both sides of the difference estimate at time ``t`` (default: the common end)."""
    if not 0.0 < eps_frac < 2.0:
        raise ValueError("eps_frac must lie in (0, 2)")
    if traj1.run.coup is not traj2.run.coup:
        raise ValueError("runs must share the modal couplings")
    if traj1.times.shape != traj2.times.shape or np.abs(traj1.times - traj2.times).max() > 1e-12:
        raise ValueError("runs must be recorded on the same time grid")
    times = traj1.times
    t = float(times[-1]) if t is None else float(t)
    tol = 1e-9 * max(1.0, abs(t))
    if t - T0 < times[0] - tol or t > times[-1] + tol:
        raise ValueError(f"window [{t - T0:g}, {t:g}] not covered by [{times[0]:g}, {times[-1]:g}]")
    coup = traj1.run.coup
    k_end = int(np.argmin(np.abs(times - t)))
    window = (times >= t - T0 - tol) & (times <= t + tol)
    dY = traj1.states - traj2.states
    m, n = coup.m, coup.n
    rhs = float(fractional_norm(coup.plate, dY[window][:, m : m + n], 2.0 - eps_frac).max())
    state = GalerkinState.from_vector(times[k_end], dY[k_end], m, n)
    lhs = ht_norm(state, coup, traj1.run.profile)
    return DifferenceReport(T0=float(T0), t=t, lhs=lhs, rhs=rhs, eps_frac=float(eps_frac))


def fit_difference(reports: list[DifferenceReport]) -> tuple[float, float]:
    """``(C_fit, eps_fit)``: least-squares slope of lhs on rhs through the origin,
    then the smallest additive ``eps`` making ``lhs <= eps + C rhs`` on every pair."""
    lhs = np.array([r.lhs for r in reports])
    rhs = np.array([r.rhs for r in reports])
    denom = float(rhs @ rhs)
    C = float(lhs @ rhs / denom) if denom > 0 else 0.0
    C = max(C, 0.0)
    eps = float(np.max(np.maximum(lhs - C * rhs, 0.0))) if len(reports) else 0.0
    return C, eps


# ---------------------------------------------------------------------------
# continuous dependence


@dataclass
class ContinuityReport:
    times: np.ndarray
    distance: np.ndarray     # ||W1(t) - W2(t)||_{H_t}
    d0: float
    K_hat: float

    def envelope(self) -> np.ndarray:
        return self.d0 * np.exp(self.K_hat * (self.times - self.times[0]))

    @property
    def dominated(self) -> bool:
        env = self.envelope()
        return bool(np.all(self.distance <= env * (1 + 1e-12) + 1e-300))


def continuous_dependence(traj1: Trajectory, traj2: Trajectory) -> ContinuityReport:
    """Smallest ``K`` with ``d(t) <= d0 exp(K (t - tau))`` on every recorded step."""
    coup, prof = traj1.run.coup, traj1.run.profile
    t = traj1.times
    d = ht_norms(coup, prof, t, traj1.states - traj2.states)
    d0 = float(d[0])
    if d0 == 0.0:
        return ContinuityReport(t, d, 0.0, 0.0)
    s = t[1:] - t[0]
    rates = np.log(np.maximum(d[1:], 1e-300) / d0) / s
    K = float(rates.max()) if rates.size else 0.0
    # nudge so that rounding in exp/log cannot break domination
    K += 1e-12 * max(1.0, abs(K))
    return ContinuityReport(t, d, d0, K)
