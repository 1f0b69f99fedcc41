"""Batch front-end: ``pullback-fsi <command> --config run.yaml``.

Exit codes: 0 ok, 1 config or cache error, 2 solver failure, 3 censored or
incomplete fit.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cache import CACHE_VERSION, CacheBundle, StaleCacheError, read_cache, write_cache
from .config import ConfigError, RunConfig, dump_config, load_config
from .diagnostics import energy_report, lyapunov, lyapunov_sweep
from .discretization import assemble_operators, build_grid
from .galerkin import (
    GalerkinState, NotSPDError, ProcessRun, SolverError, SolverTolerances,
    assemble_couplings, evolve_state, initial_state,
)
from .physics import (
    CoefficientProfile, SampleSpec, make_forcing, make_nonlinearity, validate_assumptions,
)
from .plate_basis import solve_plate_eigen
from .pullback_lab import (
    Experiment, attraction_curve, covering_surrogate, estimate_absorbing, omega_limit_sample, sample_ball,
)
from .stokes_basis import EigenSolveError, build_lifting, solve_stokes_eigen

log = logging.getLogger("pullback_fsi")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CENSORED = 0, 1, 2, 3


class Censored(Exception):
    pass


# ---------------------------------------------------------------------------
# shared plumbing


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x)}")


def _manifest(out: Path, cfg: RunConfig, command: str) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "config": cfg.to_dict(),
        "versions": {
            "pullback_fsi": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "cache_format": CACHE_VERSION,
        },
    })
    (out / "config.resolved.yaml").write_text(dump_config(cfg))


def _cache_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.cache) if cfg.cache else out / "basis.pfsi"


def load_or_build(cfg: RunConfig, out: Path) -> tuple[CacheBundle, bool]:
    """Operators and bases from the cache, or computed and cached. Returns (bundle, hit)."""
    path = _cache_path(cfg, out)
    expect = {"nx": cfg.grid.nx, "nz": cfg.grid.nz, "m": cfg.basis.m, "n": cfg.basis.n}
    if path.exists():
        bundle = read_cache(path, expect)
        log.info("cache hit %s (sha256 %s)", path, bundle.checksum[:16])
        return bundle, True
    tic = time.perf_counter()
    ops = assemble_operators(build_grid(cfg.grid.nx, cfg.grid.nz))
    stokes = solve_stokes_eigen(ops, cfg.basis.m)
    plate = solve_plate_eigen(ops, cfg.basis.n)
    lift = build_lifting(ops)
    digest = write_cache(path, ops, stokes, plate, lift)
    log.info("built bases in %.2fs; cache %s sha256 %s", time.perf_counter() - tic, path, digest[:16])
    return CacheBundle(ops, stokes, plate, lift, digest), False


def _model(cfg: RunConfig, bundle: CacheBundle):
    ops = bundle.ops
    c = cfg.coefficients
    profile = CoefficientProfile(c.family, c.mu0, c.rho0, c.decay, c.center)
    f = cfg.forcing
    forcing = make_forcing(f.family, ops, f.amp_f, f.amp_g, f.omega, f.decay, f.sigma0, f.c_fg)
    nl = cfg.nonlinearity
    F = make_nonlinearity(nl.family, ops, nl.c, nl.gamma, nl.q)
    coup = assemble_couplings(bundle.stokes, bundle.plate, bundle.lift, ops)
    return coup, profile, forcing, F


def _tolerances(cfg: RunConfig) -> SolverTolerances:
    it = cfg.integrator
    return SolverTolerances(it.fixed_point_tol, it.max_fixed_point, it.max_newton, it.max_halvings)


def _experiment(cfg: RunConfig, bundle: CacheBundle, workers: int) -> Experiment:
    coup, profile, forcing, F = _model(cfg, bundle)
    it = cfg.integrator
    return Experiment(
        coup, profile, F=F, forcing=forcing, dt=it.dt, tolerances=_tolerances(cfg),
        literal_damping=it.paper_literal_damping, literal_norm=it.paper_literal_ht_norm,
        workers=workers, record_every=it.record_every,
    )


def smooth_datum(bundle: CacheBundle, amplitude: float):
    """Lowest Stokes mode for ``v``, lowest plate mode for ``u0``, ``u1 = 0``.

    The plate displacement peaks at ``1e-2 * amplitude`` so that plate and
    fluid energies are of comparable size. Using the first mode of each
    component keeps stiff plate modes quiet, which is what the energy
    audit at ``dt = 1e-3`` relies on.
    """
    g = bundle.ops.grid
    g1 = bundle.plate.G[:, 0]
    u0 = amplitude * 1e-2 * g1 / np.abs(g1).max()
    v = amplitude * bundle.stokes.E[:, 0]
    return v, u0, np.zeros(g.n_beam)


def _initial(cfg: RunConfig, exp: Experiment, bundle: CacheBundle, tau: float) -> GalerkinState:
    ini = cfg.experiment.initial
    m, n = exp.coup.m, exp.coup.n
    if ini.kind == "zero":
        return GalerkinState.zeros(tau, m, n)
    if ini.kind == "random":
        y = sample_ball(exp, tau, ini.amplitude, 1, cfg.seed).members[0]
        return GalerkinState.from_vector(tau, y, m, n)
    v, u0, u1 = smooth_datum(bundle, ini.amplitude)
    return initial_state(exp.coup, tau, v, u0, u1)


def _trajectory_csv(path: Path, traj, delta: float) -> dict:
    coup = traj.run.coup
    rep = energy_report(traj)
    lyap = lyapunov(traj, delta)
    m, n = coup.m, coup.n
    header = (["t"] + [f"alpha_{i + 1}" for i in range(m)] + [f"beta_{j + 1}" for j in range(n)]
              + [f"gamma_{j + 1}" for j in range(n)] + ["E", "scriptE", "L", "dissipation"])
    table = np.column_stack([traj.times, traj.states, rep.E, rep.scriptE, lyap.L, rep.dissipation_rate])
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return {"energy": rep.to_dict(), "lyapunov": lyap.to_dict()}


# ---------------------------------------------------------------------------
# commands


def cmd_basis(cfg: RunConfig, out: Path, workers: int) -> int:
    bundle, hit = load_or_build(cfg, out)
    _write_json(out / "basis.json", {
        "cache": str(_cache_path(cfg, out)), "cache_hit": hit, "sha256": bundle.checksum,
        "lambdas": bundle.stokes.lambdas, "kappas": bundle.plate.kappas,
        "stokes_residual_max": float(bundle.stokes.residuals.max()),
        "plate_residual_max": float(bundle.plate.residuals.max()),
    })
    print(("cache hit " if hit else "cache written ") + bundle.checksum)
    return EXIT_OK


def _simulate(cfg: RunConfig, out: Path, workers: int, name: str = "trajectory"):
    bundle, _ = load_or_build(cfg, out)
    exp = _experiment(cfg, bundle, workers)
    e = cfg.experiment
    state = _initial(cfg, exp, bundle, e.tau)
    run = exp.process(e.tau, e.t_end)
    traj = evolve_state(run, state)
    diag = _trajectory_csv(out / f"{name}.csv", traj, e.delta)
    return exp, bundle, state, traj, diag


def cmd_simulate(cfg: RunConfig, out: Path, workers: int) -> int:
    exp, bundle, _, traj, diag = _simulate(cfg, out, workers)
    _write_json(out / "diagnostics.json", diag)
    _write_json(out / "metadata.json", {
        "m": exp.coup.m, "n": exp.coup.n, "steps": len(traj.times) - 1,
        "tolerances": vars(exp.tolerances), "wall_time": traj.wall_time,
        "newton_fallbacks": traj.newton_steps, "step_halvings": traj.halvings,
    })
    return EXIT_OK


def cmd_energy_audit(cfg: RunConfig, out: Path, workers: int) -> int:
    exp, bundle, state, traj, diag = _simulate(cfg, out, workers)
    e = cfg.experiment
    rows = []
    for level in range(3):
        run = ProcessRun(exp.coup, exp.profile, e.tau, e.t_end, exp.dt / 2**level, F=exp.F,
                         forcing=exp.forcing, tolerances=exp.tolerances, literal_damping=exp.literal_damping)
        rep = energy_report(traj if level == 0 else evolve_state(run, state))
        rows.append((run.dt, rep.residual, rep.relative_residual))
    dts = np.array([r[0] for r in rows])
    res = np.abs([r[1] for r in rows])
    slope = float(np.polyfit(np.log(dts), np.log(np.maximum(res, 1e-300)), 1)[0])
    report = {
        "levels": [{"dt": d, "residual": r, "relative_residual": q} for d, r, q in rows],
        "contraction": float(res[0] / res[1]) if res[1] > 0 else None,
        "order_slope": slope,
        **diag,
    }
    _write_json(out / "energy_audit.json", report)
    print(f"relative residual {rows[0][2]:.3e} at dt={rows[0][0]:g}; order {slope:.2f}")
    return EXIT_OK


def cmd_dissipativity(cfg: RunConfig, out: Path, workers: int) -> int:
    bundle, _ = load_or_build(cfg, out)
    exp = _experiment(cfg, bundle, workers)
    e = cfg.experiment
    reports = estimate_absorbing(exp, e.R_grid, e.tau, e.horizon, e.count, cfg.seed, e.margin, e.floor)
    for r in reports:
        np.savetxt(out / f"envelope_R{r.R:g}.dat", np.column_stack([r.times, r.envelope, r.bound()]),
                   header="elapsed envelope bound", fmt="%.12g")
    # Lyapunov sweep along one member of the largest ball
    y0 = sample_ball(exp, e.tau, max(e.R_grid), 1, cfg.seed).members[0]
    traj = evolve_state(exp.process(e.tau, e.tau + e.horizon),
                        GalerkinState.from_vector(e.tau, y0, exp.coup.m, exp.coup.n))
    lyaps, first_bad = lyapunov_sweep(traj, tuple(e.deltas))
    _write_json(out / "dissipativity.json", {
        "absorbing": [r.to_dict() for r in reports],
        "lyapunov": [r.to_dict() for r in lyaps],
        "first_failing_delta": first_bad,
    })
    if any(r.censored for r in reports):
        raise Censored("absorbing fit censored: ensemble above threshold at the horizon")
    return EXIT_OK


def cmd_pullback(cfg: RunConfig, out: Path, workers: int) -> int:
    bundle, _ = load_or_build(cfg, out)
    exp = _experiment(cfg, bundle, workers)
    e = cfg.experiment
    taus = sorted((float(t) for t in e.taus), reverse=True)
    if len(taus) == 1:
        warnings.warn("single origin: the attraction series has one point")
    if e.reference == "omega-limit":
        if len(taus) < 3:
            raise ConfigError("omega-limit reference needs at least 3 origins")
        K_t = omega_limit_sample(exp, e.target, taus, e.R, e.count, cfg.seed, e.cluster_tol).representatives
    else:
        K_t = np.zeros((1, exp.coup.dim))
    series = attraction_curve(exp, K_t, e.target, taus, e.R, e.count, cfg.seed)
    np.savetxt(out / "attraction.dat", series.to_columns(), header="tau delta", fmt="%.12g")
    H = exp.norm_matrix(e.target)
    cover = []
    for tau in taus:
        ens = sample_ball(exp, tau, e.R, e.count, cfg.seed)
        _, states = exp.evolve(tau, e.target, ens.members.T)
        cover.append(covering_surrogate(states[-1].T, e.radii, H))
    cover = np.array(cover)
    np.savetxt(out / "covering.dat", np.column_stack([taus, cover]),
               header="tau " + " ".join(f"N(r={r:g})" for r in e.radii), fmt="%.12g")
    _write_json(out / "pullback.json", {
        "target": e.target, "taus": taus, "deltas": series.deltas,
        "strictly_decreasing": series.strictly_decreasing, "log_slope": series.slope,
        "reference_size": int(K_t.shape[0]), "radii": e.radii,
        "covering_counts": cover, "covering_label": "greedy covering count (surrogate, not the Kuratowski measure)",
    })
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path, workers: int) -> int:
    bundle, _ = load_or_build(cfg, out)
    coup, profile, forcing, F = _model(cfg, bundle)
    e = cfg.experiment
    spec = SampleSpec(
        t_grid=tuple(np.linspace(e.t_min, e.t_max, 1001)), g2_times=tuple(np.linspace(e.t_min, e.t_max, 21)),
        n_samples=e.n_samples, radius=e.sample_radius, eps_frac=e.eps_frac, seed=cfg.seed,
    )
    report = validate_assumptions(profile, forcing, F, bundle.plate, spec)
    _write_json(out / "assumptions.json", report.to_dict())
    for name, chk in report.checks.items():
        print(f"{name}: {chk.status}")
    return EXIT_OK if report.passed else EXIT_CONFIG


COMMANDS = {
    "basis": cmd_basis,
    "simulate": cmd_simulate,
    "energy-audit": cmd_energy_audit,
    "dissipativity": cmd_dissipativity,
    "pullback": cmd_pullback,
    "validate-assumptions": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pullback-fsi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        s.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        s.add_argument("--workers", type=int, default=None, help="worker threads for ensembles")
        s.add_argument("--seed", type=int, default=None, help="RNG seed (unsigned 64-bit)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output = str(args.out)
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        _manifest(out, cfg, args.command)
        return COMMANDS[args.command](cfg, out, workers)
    except (ConfigError, StaleCacheError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, EigenSolveError, NotSPDError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except Censored as exc:
        print(f"censored: {exc}", file=sys.stderr)
        return EXIT_CENSORED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
