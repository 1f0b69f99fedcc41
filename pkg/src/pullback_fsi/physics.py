"""Time-dependent coefficients, forcing, plate nonlinearities and the
sampling validators for the standing assumptions (A1)-(A4), (F1)-(F4), (G2).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import expit

from .discretization import CavityGrid, DiscreteOperators
from .plate_basis import PlateBasis, fractional_norm

__all__ = [
    "CoefficientProfile",
    "ForcingProfile",
    "NonlinearForce",
    "AssumptionCheck",
    "ValidationReport",
    "SampleSpec",
    "eval_coefficients",
    "eval_nonlinearity",
    "make_forcing",
    "make_nonlinearity",
    "validate_assumptions",
    "COEFFICIENT_FAMILIES",
    "FORCING_FAMILIES",
    "NONLINEAR_FAMILIES",
]

COEFFICIENT_FAMILIES = ("constant", "logistic")
FORCING_FAMILIES = ("zero", "periodic", "constant", "exponential")
NONLINEAR_FAMILIES = ("zero", "cubic", "berger")


# ---------------------------------------------------------------------------
# coefficients mu(t), rho(t)


@dataclass(frozen=True)
class CoefficientProfile:
    """``mu(t)`` and ``rho(t)``: constant, or logistic decay ``c0 / (1 + exp(k (t - tc)))``."""

    family: str = "constant"
    mu0: float = 1.0
    rho0: float = 1.0
    decay: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if self.family not in COEFFICIENT_FAMILIES:
            raise ValueError(f"unknown coefficient family {self.family!r}")
        if self.mu0 <= 0 or self.rho0 <= 0:
            raise ValueError("mu0 and rho0 must be positive")
        if self.family == "logistic" and self.decay <= 0:
            raise ValueError("logistic profile needs a positive decay rate")

    def _shape(self, t):
        """Logistic factor s(t) and its derivative."""
        if self.family == "constant":
            t = np.asarray(t, dtype=float)
            return np.ones_like(t), np.zeros_like(t)
        s = expit(-self.decay * (np.asarray(t, dtype=float) - self.center))
        return s, -self.decay * s * (1.0 - s)

    def mu(self, t):
        return self.mu0 * self._shape(t)[0]

    def rho(self, t):
        return self.rho0 * self._shape(t)[0]

    def dmu(self, t):
        return self.mu0 * self._shape(t)[1]

    def drho(self, t):
        return self.rho0 * self._shape(t)[1]

    @property
    def declared_L(self) -> float:
        """Bound for sup |mu| + |mu'| + |rho| + |rho'| implied by the parameters."""
        total = self.mu0 + self.rho0
        if self.family == "logistic":
            total += 0.25 * self.decay * total
        return total


def eval_coefficients(profile: CoefficientProfile, t: float) -> tuple[float, float, float, float]:
    s, ds = profile._shape(t)
    return (
        float(profile.mu0 * s),
        float(profile.mu0 * ds),
        float(profile.rho0 * s),
        float(profile.rho0 * ds),
    )


# ---------------------------------------------------------------------------
# forcing


def _fluid_force_shape(grid: CavityGrid) -> np.ndarray:
    """Face samples of curl(psi), psi = sin^2(pi x) sin^2(pi z)."""
    x, z = grid.face_coordinates()
    comp = grid.component_mask()
    sx, sz = np.sin(np.pi * x), np.sin(np.pi * z)
    dpsi_dz = sx**2 * 2 * np.pi * sz * np.cos(np.pi * z)
    dpsi_dx = sz**2 * 2 * np.pi * sx * np.cos(np.pi * x)
    f = np.where(comp == 0, dpsi_dz, -dpsi_dx)
    f[grid.wall_mask | grid.lid_mask] = 0.0
    return f


def _beam_load_shape(grid: CavityGrid) -> np.ndarray:
    return np.sin(2 * np.pi * grid.beam_nodes)


@dataclass(frozen=True, eq=False)
class ForcingProfile:
    """Fluid body force ``f(t)`` and beam load ``g(t)`` as DOF vectors.

    ``sigma0`` and ``c_fg`` are the declared constants of the (G2) window
    bound; ``c_fg=None`` means no bound was declared for the family.
    """

    family: str
    f_shape: np.ndarray = field(repr=False)
    g_shape: np.ndarray = field(repr=False)
    amp_f: float = 0.0
    amp_g: float = 0.0
    omega: float = 1.0
    decay: float = 0.0
    sigma0: float = 0.1
    c_fg: float | None = None
    mv: np.ndarray = field(default=None, repr=False)
    mb: np.ndarray = field(default=None, repr=False)

    def _amplitudes(self, t):
        t = np.asarray(t, dtype=float)
        one = np.ones_like(t)
        if self.family == "zero":
            return 0.0 * one, 0.0 * one
        if self.family == "constant":
            return self.amp_f * one, self.amp_g * one
        if self.family == "periodic":
            return self.amp_f * np.cos(self.omega * t), self.amp_g * np.sin(self.omega * t)
        # exponential
        env = np.exp(-self.decay * t)
        return self.amp_f * env, self.amp_g * env

    def f(self, t: float) -> np.ndarray:
        return float(self._amplitudes(t)[0]) * self.f_shape

    def g(self, t: float) -> np.ndarray:
        return float(self._amplitudes(t)[1]) * self.g_shape

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or (self.amp_f == 0.0 and self.amp_g == 0.0)

    def norm_sq(self, t) -> np.ndarray:
        """``||f(t)||^2 + ||g(t)||^2`` in the discrete L2 norms (vectorised in t)."""
        af, ag = self._amplitudes(t)
        nf = float(self.f_shape @ (self.mv * self.f_shape))
        ng = float(self.g_shape @ (self.mb * self.g_shape))
        return af**2 * nf + ag**2 * ng

    @property
    def window(self) -> float:
        return 50.0 / self.sigma0

    def window_integral(self, t: float, sigma: float, points: int = 4001) -> float:
        s = np.linspace(t - self.window, t, points)
        return float(trapezoid(np.exp(-sigma * (t - s)) * self.norm_sq(s), s))


def make_forcing(
    family: str,
    ops: DiscreteOperators,
    amp_f: float = 0.0,
    amp_g: float = 0.0,
    omega: float = 1.0,
    decay: float = 0.1,
    sigma0: float = 0.1,
    c_fg: float | None = None,
) -> ForcingProfile:
    """Forcing on the grid of ``ops``; fills in the declared (G2) constant."""
    if family not in FORCING_FAMILIES:
        raise ValueError(f"unknown forcing family {family!r}")
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    grid = ops.grid
    fs, gs = _fluid_force_shape(grid), _beam_load_shape(grid)
    mv, mb = ops.mv_diag, ops.mb_diag
    if c_fg is None and family != "exponential":
        sup = amp_f**2 * float(fs @ (mv * fs)) + amp_g**2 * float(gs @ (mb * gs))
        c_fg = 0.0 if family == "zero" else sup * 50.0 / sigma0
    return ForcingProfile(
        family=family,
        f_shape=fs,
        g_shape=gs,
        amp_f=float(amp_f),
        amp_g=float(amp_g),
        omega=float(omega),
        decay=float(decay),
        sigma0=float(sigma0),
        c_fg=c_fg,
        mv=mv,
        mb=mb,
    )


# ---------------------------------------------------------------------------
# nonlinear plate force


def _slope_energy(n: int, h: float) -> np.ndarray:
    """``S`` with ``u @ S @ u = ||u_x||^2`` for clamped (u = 0) ends."""
    S = np.zeros((n, n))
    for i in range(n - 1):
        S[i, i] += 1.0 / h
        S[i + 1, i + 1] += 1.0 / h
        S[i, i + 1] -= 1.0 / h
        S[i + 1, i] -= 1.0 / h
    S[0, 0] += 2.0 / h
    S[-1, -1] += 2.0 / h
    return S


@dataclass(frozen=True, eq=False)
class NonlinearForce:
    """Plate feedback force ``F = Pi'`` (zero, cubic ``c u^3``, or Berger).

    Berger: ``F(u) = (Gamma ||u_x||^2 - Q)(-u_xx)`` with potential
    ``Pi(u) = Gamma/4 ||u_x||^4 - Q/2 ||u_x||^2``. The discrete ``-u_xx`` is
    ``Mb^{-1} S u`` so that ``F`` is the exact gradient of ``Pi``.
    """

    family: str = "zero"
    c: float = 0.0
    gamma: float = 0.0
    q: float = 0.0
    mb: np.ndarray = field(default=None, repr=False)
    S: np.ndarray = field(default=None, repr=False)

    @property
    def is_zero(self) -> bool:
        return (
            self.family == "zero"
            or (self.family == "cubic" and self.c == 0.0)
            or (self.family == "berger" and self.gamma == 0.0 and self.q == 0.0)
        )

    def slope_sq(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("i...,i...->...", u, self.S @ u)

    def force(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.family == "zero":
            return np.zeros_like(u)
        if self.family == "cubic":
            return self.c * u**3
        X = self.slope_sq(u)
        return (self.gamma * X - self.q) * ((self.S @ u) / (self.mb if u.ndim == 1 else self.mb[:, None]))

    def potential(self, u: np.ndarray):
        u = np.asarray(u, dtype=float)
        if self.family == "zero":
            return np.zeros(u.shape[1:]) if u.ndim > 1 else 0.0
        if self.family == "cubic":
            w = self.mb if u.ndim == 1 else self.mb[:, None]
            return 0.25 * self.c * np.sum(w * u**4, axis=0)
        X = self.slope_sq(u)
        return 0.25 * self.gamma * X**2 - 0.5 * self.q * X

    @property
    def declared_constants(self) -> dict[str, float]:
        """(nu, C) of (F3) and (a1, a2) of (F4); ``C`` also bounds ``-Pi`` from above."""
        if self.family == "berger" and self.gamma > 0:
            return {"nu": 0.5, "C": self.q**2 / (4 * self.gamma), "a1": 1.0, "a2": self.q**2 / (12 * self.gamma)}
        if self.family == "berger" and self.q > 0:
            raise ValueError("Berger with Gamma = 0 and Q > 0 has no lower bound")
        return {"nu": 0.5, "C": 0.0, "a1": 1.0, "a2": 0.0}

    def modal(self, basis: PlateBasis) -> "ModalForce":
        return ModalForce(self, basis)


class ModalForce:
    """Galerkin projection ``F_k(beta) = (F(sum beta_j g_j), g_k)_Mb`` and its Jacobian.

    Works on a single coefficient vector or on columns of a matrix.
    """

    def __init__(self, force: NonlinearForce, basis: PlateBasis):
        self.force = force
        self.G = basis.G
        self.WG = basis.weights[:, None] * basis.G
        self.family = force.family
        self.is_zero = force.is_zero
        if self.family == "berger":
            St = basis.G.T @ force.S @ basis.G
            self.St = 0.5 * (St + St.T)

    def __call__(self, beta: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(beta)
        if self.family == "cubic":
            u = self.G @ beta
            return self.WG.T @ (self.force.c * u**3)
        Sb = self.St @ beta
        X = np.einsum("i...,i...->...", beta, Sb)
        return (self.force.gamma * X - self.force.q) * Sb

    def potential(self, beta: np.ndarray):
        if self.is_zero:
            return np.zeros(beta.shape[1:]) if beta.ndim > 1 else 0.0
        if self.family == "cubic":
            return self.force.potential(self.G @ beta)
        X = np.einsum("i...,i...->...", beta, self.St @ beta)
        return 0.25 * self.force.gamma * X**2 - 0.5 * self.force.q * X

    def jacobian(self, beta: np.ndarray) -> np.ndarray:
        n = beta.shape[0]
        if self.is_zero:
            return np.zeros((n, n))
        if self.family == "cubic":
            u = self.G @ beta
            return self.WG.T @ ((3.0 * self.force.c * u**2)[:, None] * self.G)
        Sb = self.St @ beta
        X = beta @ Sb
        return (self.force.gamma * X - self.force.q) * self.St + 2.0 * self.force.gamma * np.outer(Sb, Sb)


def make_nonlinearity(
    family: str, ops: DiscreteOperators, c: float = 0.0, gamma: float = 0.0, q: float = 0.0
) -> NonlinearForce:
    if family not in NONLINEAR_FAMILIES:
        raise ValueError(f"unknown nonlinearity family {family!r}")
    if c < 0 or gamma < 0 or q < 0:
        raise ValueError("nonlinearity parameters must be nonnegative")
    if family == "berger" and gamma == 0 and q > 0:
        raise ValueError("Berger with Gamma = 0 and Q > 0 violates (F3)")
    return NonlinearForce(
        family=family,
        c=float(c),
        gamma=float(gamma),
        q=float(q),
        mb=ops.mb_diag,
        S=_slope_energy(ops.grid.n_beam, ops.grid.hx),
    )


def eval_nonlinearity(F: NonlinearForce, u: np.ndarray) -> tuple[np.ndarray, float]:
    return F.force(u), float(F.potential(u))


# ---------------------------------------------------------------------------
# assumption validators


@dataclass
class AssumptionCheck:
    name: str
    status: str                 # "pass" | "fail" | "n/a"
    measured: dict = field(default_factory=dict)
    detail: str = ""
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class ValidationReport:
    checks: dict[str, AssumptionCheck]
    constants: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "constants": dict(self.constants),
            "checks": {k: asdict(v) for k, v in self.checks.items()},
        }


@dataclass(frozen=True)
class SampleSpec:
    t_grid: tuple[float, ...] = tuple(np.linspace(-100.0, 100.0, 1001))
    g2_times: tuple[float, ...] = tuple(np.linspace(-100.0, 100.0, 21))
    n_samples: int = 200
    radius: float = 10.0
    eps_frac: float = 0.25
    seed: int = 0


def _check_coefficients(profile: CoefficientProfile, t: np.ndarray, checks: dict, consts: dict) -> None:
    mu, dmu, rho, drho = profile.mu(t), profile.dmu(t), profile.rho(t), profile.drho(t)

    lo = min(mu.min(), rho.min())
    k = int(np.argmin(np.minimum(mu, rho)))
    checks["A1"] = AssumptionCheck(
        "A1", "pass" if lo > 0 else "fail", {"min_coefficient": float(lo)},
        "mu, rho > 0 on the sample grid", None if lo > 0 else {"t": float(t[k])},
    )

    steps = np.concatenate([np.diff(mu), np.diff(rho)])
    worst_slope = max(dmu.max(), drho.max())
    ok = worst_slope <= 0 and steps.max() <= 0
    witness = None
    if not ok:
        k = int(np.argmax(np.maximum(dmu, drho)))
        witness = {"t": float(t[k]), "dmu": float(dmu[k]), "drho": float(drho[k])}
    checks["A2"] = AssumptionCheck(
        "A2", "pass" if ok else "fail", {"max_derivative": float(worst_slope)},
        "mu' <= 0 and rho' <= 0 and grid values non-increasing", witness,
    )

    total = np.abs(mu) + np.abs(dmu) + np.abs(rho) + np.abs(drho)
    L = float(total.max())
    declared = profile.declared_L
    ok = L <= declared * (1 + 1e-12)
    consts["L"] = L
    checks["A3"] = AssumptionCheck(
        "A3", "pass" if ok else "fail", {"L": L, "declared_L": declared},
        "sup |mu|+|mu'|+|rho|+|rho'| <= declared L",
        None if ok else {"t": float(t[int(np.argmax(total))])},
    )

    if profile.family == "constant":
        checks["A4"] = AssumptionCheck(
            "A4", "n/a", {"mu_limit": profile.mu0, "rho_limit": profile.rho0},
            "autonomous baseline: coefficients do not decay, time-dependent spaces degenerate to fixed ones",
        )
    else:
        t_far = profile.center + 40.0 / profile.decay
        lim_mu, lim_rho = float(profile.mu(t_far)), float(profile.rho(t_far))
        ok = lim_mu <= 1e-12 * profile.mu0 and lim_rho <= 1e-12 * profile.rho0
        checks["A4"] = AssumptionCheck(
            "A4", "pass" if ok else "fail", {"t_far": t_far, "mu_far": lim_mu, "rho_far": lim_rho},
            "mu, rho -> 0 as t -> +inf (checked 40 decay lengths past the centre)",
        )


def _check_forcing(forcing: ForcingProfile, times: np.ndarray, checks: dict, consts: dict) -> None:
    sigmas = (0.0, 0.5 * forcing.sigma0, forcing.sigma0)
    values = np.array([[forcing.window_integral(t, s) for s in sigmas] for t in times])
    measured = float(values.max())
    consts["C_fg"] = measured
    declared = forcing.c_fg
    if declared is None:
        # no declared constant: use the t = 0 window as the reference scale
        ref = max(forcing.window_integral(0.0, s) for s in sigmas)
        declared = 10.0 * ref
        note = "no declared C_fg; reference = 10 x the t=0 window integral"
    else:
        note = "truncated window 50/sigma0"
    bad = values > declared * (1 + 1e-9) + 1e-300
    witness = None
    if bad.any():
        i, j = np.unravel_index(int(np.argmax(values / max(declared, 1e-300))), values.shape)
        witness = {"t": float(times[i]), "sigma": float(sigmas[j]), "integral": float(values[i, j])}
    checks["G2"] = AssumptionCheck(
        "G2", "fail" if bad.any() else "pass",
        {"C_fg": measured, "declared_C_fg": float(declared), "sigma0": forcing.sigma0},
        note, witness,
    )


def _sample_modal(basis: PlateBasis, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Random coefficient vectors with ``||u||_2`` spread over (0, radius]."""
    z = rng.standard_normal((count, basis.n))
    # bias toward low modes so that the samples look like smooth plate shapes
    z /= np.sqrt(basis.kappas / basis.kappas[0])[None, :]
    z /= fractional_norm(basis, z, 2.0)[:, None]
    r = radius * rng.uniform(0.0, 1.0, size=count) ** 0.5
    return z * r[:, None]


def _check_nonlinearity(F: NonlinearForce, basis: PlateBasis, spec: SampleSpec, checks: dict, consts: dict) -> None:
    rng = np.random.default_rng(spec.seed)
    G, w = basis.G, basis.weights
    consts.update(F.declared_constants)
    decl = F.declared_constants
    betas = _sample_modal(basis, spec.n_samples, spec.radius, rng)
    us = G @ betas.T                       # (n_beam, samples)
    lap2 = fractional_norm(basis, betas, 2.0) ** 2

    # (F2) F = Pi' by central differences along random directions
    worst, witness = 0.0, None
    dirs = _sample_modal(basis, spec.n_samples, 1.0, rng)
    for k in range(spec.n_samples):
        u, h = us[:, k], G @ dirs[k]
        eps = 1e-5 * max(np.linalg.norm(u), 1e-3) / max(np.linalg.norm(h), 1e-300)
        fd = (F.potential(u + eps * h) - F.potential(u - eps * h)) / (2 * eps)
        exact = float(F.force(u) @ (w * h))
        ref = max(abs(exact), abs(fd), 1e-12 * (1.0 + abs(float(F.potential(u)))))
        err = abs(fd - exact) / ref if ref > 0 else 0.0
        if F.is_zero:
            err = abs(fd - exact)
        if err > worst:
            worst, witness = err, {"sample": k}
    ok = worst <= 1e-5
    checks["F2"] = AssumptionCheck(
        "F2", "pass" if ok else "fail", {"max_relative_error": worst},
        "directional difference quotients of Pi match (F(u), h)", None if ok else witness,
    )

    # (F1) local Lipschitz ratio, force measured in the discrete L2 norm of its projection
    s = 2.0 - spec.eps_frac
    b2 = _sample_modal(basis, spec.n_samples, spec.radius, rng)
    ratios = []
    for k in range(spec.n_samples):
        dF = F.force(us[:, k]) - F.force(G @ b2[k])
        num = np.linalg.norm(G.T @ (w * dF))
        den = fractional_norm(basis, betas[k] - b2[k], s)
        ratios.append(num / den if den > 0 else 0.0)
    ratios = np.array(ratios)
    CR = float(ratios.max())
    ok = bool(np.all(np.isfinite(ratios)))
    consts["C_R"] = CR
    checks["F1"] = AssumptionCheck(
        "F1", "pass" if ok else "fail", {"C_R": CR, "R": spec.radius, "eps": spec.eps_frac},
        "||P_n(F(u1) - F(u2))|| / ||u1 - u2||_{2-eps} over pairs in the R-ball",
    )

    # (F3) and (F4), plus an adversarial radius sweep along each sample direction
    radii = np.linspace(0.0, spec.radius, 41)[1:]
    nu, C, a1, a2 = decl["nu"], decl["C"], decl["a1"], decl["a2"]
    worst3 = worst4 = np.inf
    w3 = w4 = None
    for k in range(min(spec.n_samples, 50)):
        direction = betas[k] / max(fractional_norm(basis, betas[k], 2.0), 1e-300)
        sweep = radii
        if F.family == "berger" and F.gamma > 0:
            # make sure the sweep crosses the minimum of Pi at ||u_x||^2 = Q/Gamma
            X1 = float(F.slope_sq(G @ direction))
            r_star = np.sqrt(2.0 * F.q / (F.gamma * X1)) if X1 > 0 else 0.0
            sweep = np.concatenate([radii, np.linspace(0.0, r_star, 41)[1:]])
        for r in sweep:
            u = G @ (r * direction)
            Pi = float(F.potential(u))
            lap = r**2
            m3 = (1 - nu) * lap + Pi + C
            m4 = float(F.force(u) @ (w * u)) - (a1 * Pi - a2 - (1 - nu) * lap)
            if m3 < worst3:
                worst3, w3 = m3, {"sample": k, "radius": float(r)}
            if m4 < worst4:
                worst4, w4 = m4, {"sample": k, "radius": float(r)}
    for k in range(spec.n_samples):
        u = us[:, k]
        Pi = float(F.potential(u))
        m3 = (1 - nu) * lap2[k] + Pi + C
        m4 = float(F.force(u) @ (w * u)) - (a1 * Pi - a2 - (1 - nu) * lap2[k])
        if m3 < worst3:
            worst3, w3 = m3, {"sample": k}
        if m4 < worst4:
            worst4, w4 = m4, {"sample": k}
    tol = 1e-9 * (1 + spec.radius**4)
    checks["F3"] = AssumptionCheck(
        "F3", "pass" if worst3 >= -tol else "fail", {"min_margin": float(worst3), "nu": nu, "C": C},
        "(1-nu)||Delta u||^2 + Pi(u) + C >= 0", None if worst3 >= -tol else w3,
    )
    checks["F4"] = AssumptionCheck(
        "F4", "pass" if worst4 >= -tol else "fail", {"min_margin": float(worst4), "a1": a1, "a2": a2, "nu": nu},
        "(F(u), u) >= a1 Pi(u) - a2 - (1-nu)||Delta u||^2", None if worst4 >= -tol else w4,
    )


def validate_assumptions(
    profile: CoefficientProfile,
    forcing: ForcingProfile,
    F: NonlinearForce,
    basis: PlateBasis,
    spec: SampleSpec | None = None,
) -> ValidationReport:
    """Sample every standing assumption and report measured constants."""
    spec = spec or SampleSpec()
    checks: dict[str, AssumptionCheck] = {}
    consts: dict[str, float] = {}
    _check_coefficients(profile, np.asarray(spec.t_grid, dtype=float), checks, consts)
    _check_nonlinearity(F, basis, spec, checks, consts)
    _check_forcing(forcing, np.asarray(spec.g2_times, dtype=float), checks, consts)
    order = ["A1", "A2", "A3", "A4", "F1", "F2", "F3", "F4", "G2"]
    return ValidationReport({k: checks[k] for k in order}, consts)
