"""Ensemble experiments for pullback dynamics: ball sampling in the phase
space, Hausdorff semidistances, absorbing-family fits, omega-limit samples,
attraction curves and a covering-number surrogate for compactness.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import curve_fit, linprog
from scipy.spatial.distance import cdist

from .diagnostics import ht_norms, norm_matrix
from .galerkin import ModalCouplings, ProcessRun, SolverTolerances, evolve_batch
from .physics import CoefficientProfile, ForcingProfile, NonlinearForce

__all__ = [
    "Experiment",
    "Ensemble",
    "SemidistanceSeries",
    "AbsorbReport",
    "OmegaLimit",
    "sample_ball",
    "hausdorff_semidistance",
    "estimate_absorbing",
    "omega_limit_sample",
    "attraction_curve",
    "covering_surrogate",
    "greedy_clusters",
]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Experiment:
    """Model pieces shared by every member of every ensemble."""

    coup: ModalCouplings
    profile: CoefficientProfile
    F: NonlinearForce | None = None
    forcing: ForcingProfile | None = None
    dt: float = 1e-2
    tolerances: SolverTolerances = field(default_factory=SolverTolerances)
    literal_damping: bool = False
    literal_norm: bool = False
    workers: int = 1
    record_every: int = 1

    def norm_matrix(self, t: float) -> np.ndarray:
        return norm_matrix(self.coup, float(self.profile.mu(t)), float(self.profile.rho(t)), self.literal_norm)

    def process(self, tau: float, t_end: float) -> ProcessRun:
        return ProcessRun(
            self.coup, self.profile, tau, t_end, self.dt, F=self.F, forcing=self.forcing,
            tolerances=self.tolerances, literal_damping=self.literal_damping,
            record_every=self.record_every,
        )

    def evolve(self, tau: float, t_end: float, Y0: np.ndarray):
        """Evolve the columns of ``Y0``; returns ``(times, states (T, dim, k))``."""
        run = self.process(tau, t_end)
        k = Y0.shape[1]
        nw = max(1, min(self.workers, k))
        if nw == 1:
            tr = evolve_batch(run, Y0)
            return tr.times, tr.states
        chunks = np.array_split(np.arange(k), nw)
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(lambda idx: evolve_batch(run, Y0[:, idx]), chunks))
        return parts[0].times, np.concatenate([p.states for p in parts], axis=2)

    def norms(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        return ht_norms(self.coup, self.profile, times, states, self.literal_norm)


@dataclass
class Ensemble:
    tau: float
    R: float
    members: np.ndarray            # (count, dim) modal initial data
    target: float | None = None
    final: np.ndarray | None = None  # (count, dim) states at ``target``

    @property
    def count(self) -> int:
        return self.members.shape[0]


def sample_ball(exp: Experiment, tau: float, R: float, count: int, seed: int | None = 0) -> Ensemble:
    """Members of the H_tau ball of radius ``R``.

    A Gaussian direction is mapped onto the unit sphere of the H_tau norm via
    the Cholesky factor of its matrix, then scaled by a radius ~ U[0, R].
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if R < 0:
        raise ValueError("R must be nonnegative")
    rng = np.random.default_rng(seed)
    H = exp.norm_matrix(tau)
    Lc = np.linalg.cholesky(H)
    z = rng.standard_normal((count, H.shape[0]))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    # y = L^{-T} z has y^T H y = |z|^2 = 1
    y = np.linalg.solve(Lc.T, z.T).T
    r = R * rng.uniform(0.0, 1.0, size=count)
    return Ensemble(tau=float(tau), R=float(R), members=y * r[:, None])


def _transform(H: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows mapped so that Euclidean distance equals the H-norm distance."""
    return X @ np.linalg.cholesky(H)


def hausdorff_semidistance(A: np.ndarray, B: np.ndarray, H: np.ndarray) -> float:
    """``sup_{a in A} inf_{b in B} ||a - b||_H`` for row-stacked finite sets."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("semidistance needs nonempty sets")
    if A.shape[1] != B.shape[1]:
        raise ValueError("sets have different modal dimensions")
    D = cdist(_transform(H, A), _transform(H, B))
    return float(D.min(axis=1).max())


# ---------------------------------------------------------------------------
# absorbing family


@dataclass
class AbsorbReport:
    R: float
    times: np.ndarray            # elapsed time t - tau
    envelope: np.ndarray         # max member norm per step
    Q_hat: float
    omega_hat: float
    K_hat: float
    threshold: float
    theta_hat: float | None      # entering time; None when censored
    censored: bool

    def bound(self, s: np.ndarray | None = None) -> np.ndarray:
        s = self.times if s is None else s
        return self.Q_hat * np.exp(-self.omega_hat * s) + self.K_hat

    def to_dict(self) -> dict:
        return {
            "R": self.R, "Q_hat": self.Q_hat, "omega_hat": self.omega_hat, "K_hat": self.K_hat,
            "threshold": self.threshold, "theta_hat": self.theta_hat, "censored": self.censored,
        }


def _fit_envelope(s: np.ndarray, env: np.ndarray) -> tuple[float, float, float]:
    """``(Q, omega, K)`` with ``Q exp(-omega s) + K >= env`` at every sample.

    ``(Q, omega, K)`` first come from nonlinear least squares with relative
    weights, so that a decaying tail pins ``K`` near zero. With ``omega``
    fixed, ``(Q, K)`` are then the smallest-area dominating pair from a linear
    program seeded so that the fitted ``K`` is kept when it already dominates.
    """
    if env.max() == 0.0:
        return 0.0, 0.0, 0.0
    scale = float(env.max())
    e = env / scale
    k_tail = max(1, len(s) // 10)
    K0 = float(e[-k_tail:].min())
    weights = np.maximum(e, 1e-300)
    try:
        (Qf, om, Kf), _ = curve_fit(
            lambda x, Q, om, K: Q * np.exp(-om * x) + K, s, e,
            p0=(max(e[0] - K0, 1e-3), 1.0 / max(s[-1] - s[0], 1e-12), K0),
            sigma=weights, bounds=([0.0, 1e-8, 0.0], [np.inf, np.inf, np.inf]), maxfev=20000,
        )
    except RuntimeError:
        Qf, om, Kf = e[0], 1.0 / max(s[-1] - s[0], 1e-12), K0
    decay = np.exp(-om * s)
    # domination at the fitted K: raise Q only
    Q_dom = float(np.max((e - Kf) / decay))
    if Q_dom <= 10.0 * max(Qf, e[0]):
        Q, K = max(Qf, Q_dom), Kf
    else:
        span = s[-1] - s[0] if len(s) > 1 else 1.0
        area = np.array([trapezoid(decay, s) if len(s) > 1 else 1.0, span])
        res = linprog(
            c=area, A_ub=-np.column_stack([decay, np.ones_like(s)]), b_ub=-e,
            bounds=[(0, None), (0, None)], method="highs",
        )
        Q, K = (res.x if res.success else (float(e.max()), 0.0))
    gap = np.max(e - (Q * decay + K))
    if gap > 0:   # solver round-off
        K += gap
    return float(Q * scale), float(om), float(K * scale)


def estimate_absorbing(
    exp: Experiment,
    R_grid,
    tau: float,
    horizon: float,
    count: int = 64,
    seed: int | None = 0,
    margin: float = 0.1,
    floor: float = 1.0,
) -> list[AbsorbReport]:
    """Entering times into ``{||W|| <= K + max(margin K, floor)}`` and the fitted
    dissipative envelope ``Q exp(-omega (t - tau)) + K`` for each ball radius."""
    reports = []
    base = sample_ball(exp, tau, 1.0, count, seed)
    for R in R_grid:
        Y0 = (R * base.members).T
        times, states = exp.evolve(tau, tau + horizon, Y0)
        norms = exp.norms(times, states)                   # (T, count)
        s = times - tau
        env = norms.max(axis=1)
        Q, om, K = _fit_envelope(s, env)
        threshold = K + max(margin * K, floor)
        above = np.flatnonzero(env > threshold)
        censored = bool(env[-1] > threshold)
        if censored:
            theta = None
        elif above.size == 0:
            theta = 0.0
        else:
            theta = float(s[above[-1] + 1])
        reports.append(AbsorbReport(float(R), s, env, Q, om, K, threshold, theta, censored))
        log.info("R=%g: omega=%.4g K=%.4g theta=%s", R, om, K, theta)
    return reports


# ---------------------------------------------------------------------------
# omega-limit sampling, attraction and covering


def greedy_clusters(X: np.ndarray, H: np.ndarray, tol: float) -> np.ndarray:
    """Indices of greedy cluster representatives in index order."""
    Z = _transform(H, np.atleast_2d(X))
    reps: list[int] = []
    for i in range(Z.shape[0]):
        if not reps or np.min(np.linalg.norm(Z[reps] - Z[i], axis=1)) > tol:
            reps.append(i)
    return np.array(reps, dtype=int)


@dataclass
class OmegaLimit:
    t: float
    taus: list[float]
    finals: list[np.ndarray]          # evolved ensembles per origin
    representatives: np.ndarray       # (r, dim)
    cluster_tol: float


def _evolve_to(exp: Experiment, ens: Ensemble, t: float) -> Ensemble:
    if t < ens.tau:
        raise ValueError("target precedes origin")
    if t == ens.tau:
        final = ens.members.copy()
    else:
        _, states = exp.evolve(ens.tau, t, ens.members.T)
        final = states[-1].T
    return Ensemble(ens.tau, ens.R, ens.members, t, final)


def omega_limit_sample(
    exp: Experiment,
    t: float,
    taus,
    R: float,
    count: int = 64,
    seed: int | None = 0,
    cluster_tol: float = 1e-3,
) -> OmegaLimit:
    """Cluster representatives of ``U(t, tau) B_tau`` shared by the two earliest origins."""
    taus = [float(x) for x in taus]
    if len(taus) < 3:
        raise ValueError("need at least 3 origins")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("origins must be strictly decreasing")
    finals = [_evolve_to(exp, sample_ball(exp, tau, R, count, seed), t).final for tau in taus]
    H = exp.norm_matrix(t)
    earliest, second = finals[-1], finals[-2]
    reps = earliest[greedy_clusters(earliest, H, cluster_tol)]
    Z2 = _transform(H, second)
    keep = [i for i, r in enumerate(_transform(H, reps))
            if np.min(np.linalg.norm(Z2 - r, axis=1)) <= cluster_tol]
    if not keep:
        log.warning("no representative recurs across the two earliest origins; keeping the earliest set")
        keep = list(range(len(reps)))
    return OmegaLimit(t=float(t), taus=taus, finals=finals, representatives=reps[keep], cluster_tol=cluster_tol)


@dataclass
class SemidistanceSeries:
    t: float
    taus: np.ndarray
    deltas: np.ndarray
    reference: np.ndarray
    slope: float                      # least-squares slope of log delta against t - tau

    @property
    def strictly_decreasing(self) -> bool:
        """Whether delta shrinks as the origin moves back (tau decreasing)."""
        return bool(np.all(np.diff(self.deltas) < 0))

    def to_columns(self) -> np.ndarray:
        return np.column_stack([self.taus, self.deltas])


def attraction_curve(
    exp: Experiment,
    K_t: np.ndarray,
    t: float,
    taus,
    R: float,
    count: int = 64,
    seed: int | None = 0,
) -> SemidistanceSeries:
    """``delta_t(U(t, tau_k) B_{tau_k}, K_t)`` for each origin."""
    K_t = np.atleast_2d(np.asarray(K_t, dtype=float))
    if K_t.shape[0] == 0:
        raise ValueError("reference set is empty")
    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) >= 0):
        raise ValueError("origins must be strictly decreasing")
    H = exp.norm_matrix(t)
    deltas = np.array([
        hausdorff_semidistance(_evolve_to(exp, sample_ball(exp, tau, R, count, seed), t).final, K_t, H)
        for tau in taus
    ])
    slope = float("nan")
    if len(taus) >= 2 and np.all(deltas > 0):
        slope = float(np.polyfit(t - taus, np.log(deltas), 1)[0])
    return SemidistanceSeries(float(t), taus, deltas, K_t, slope)


def covering_surrogate(X: np.ndarray, radii, H: np.ndarray) -> np.ndarray:
    """Greedy covering counts at each radius, made non-increasing in the radius.

    Greedy covering is not monotone by itself; the count reported for ``r``
    is the best greedy count over radii ``<= r``, which is still a valid cover.
    """
    X = np.atleast_2d(X)
    radii = np.asarray(radii, dtype=float)
    order = np.argsort(radii)
    raw = np.array([len(greedy_clusters(X, H, r)) for r in radii[order]])
    mono = np.minimum.accumulate(raw)
    out = np.empty_like(mono)
    out[order] = mono
    return out
