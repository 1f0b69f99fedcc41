import json

import numpy as np
import pytest
import yaml

from pullback_fsi.cache import StaleCacheError, read_cache, read_header, write_cache
from pullback_fsi.cli import main
from pullback_fsi.config import ConfigError, RunConfig, dump_config, parse_config
from pullback_fsi.plate_basis import solve_plate_eigen
from pullback_fsi.stokes_basis import solve_stokes_eigen


# --- cache -------------------------------------------------------------------


@pytest.fixture(scope="module")
def cache16(tmp_path_factory, ops16):
    path = tmp_path_factory.mktemp("cache") / "basis.pfsi"
    from pullback_fsi.stokes_basis import build_lifting
    stokes, plate, lift = solve_stokes_eigen(ops16, 8), solve_plate_eigen(ops16, 8), build_lifting(ops16)
    digest = write_cache(path, ops16, stokes, plate, lift)
    return path, digest, (ops16, stokes, plate, lift)


def test_cache_roundtrip_exact(cache16):
    path, digest, (ops, stokes, plate, lift) = cache16
    b = read_cache(path, {"nx": 16, "nz": 16, "m": 8, "n": 8})
    assert b.checksum == digest
    assert np.array_equal(b.stokes.E, stokes.E) and np.array_equal(b.stokes.lambdas, stokes.lambdas)
    assert np.array_equal(b.plate.G, plate.G) and np.array_equal(b.plate.kappas, plate.kappas)
    assert np.array_equal(b.lift.Nmat, lift.Nmat)
    for name, A in ops.matrices().items():
        assert (abs(b.ops.matrices()[name] - A)).max() == 0, name
    assert np.array_equal(b.ops.m, ops.m)
    assert b.stokes.residuals.max() <= 1e-8 and b.plate.residuals.max() <= 1e-10


def test_cache_header(cache16):
    assert read_header(cache16[0]) == {"version": 1, "nx": 16, "nz": 16, "n_matrices": 9}


@pytest.mark.parametrize("field,value", [("nx", 12), ("m", 10), ("n", 4)])
def test_stale_cache_names_field(cache16, field, value):
    with pytest.raises(StaleCacheError) as info:
        read_cache(cache16[0], {field: value})
    assert info.value.field == field
    assert field in str(info.value)


def test_corrupt_cache_fails_checksum(cache16, tmp_path):
    raw = bytearray(cache16[0].read_bytes())
    raw[100] ^= 0xFF
    bad = tmp_path / "bad.pfsi"
    bad.write_bytes(bytes(raw))
    with pytest.raises(StaleCacheError) as info:
        read_cache(bad)
    assert info.value.field == "checksum"


def test_rewrite_is_byte_identical(cache16, tmp_path):
    path, digest, parts = cache16
    again = tmp_path / "again.pfsi"
    assert write_cache(again, *parts) == digest
    assert again.read_bytes() == path.read_bytes()


# --- config ------------------------------------------------------------------


def test_defaults_roundtrip():
    cfg = RunConfig().validate()
    assert parse_config(dump_config(cfg)).to_dict() == cfg.to_dict()


def test_partial_config_fills_defaults():
    cfg = parse_config("grid: {nx: 12, nz: 8}\nexperiment: {kind: pullback, taus: [-1, -2]}\n")
    assert cfg.grid.nx == 12 and cfg.basis.m == 8 and cfg.experiment.taus == [-1.0, -2.0]


@pytest.mark.parametrize("text", [
    "grid: {nx: 2}",
    "grid: {nx: sixteen}",
    "grid: {nx: null}",
    "basis: {n: 40}",
    "bogus: 1",
    "grid: {nx: 16, extra: 1}",
    "coefficients: {family: cosine}",
    "coefficients: {family: logistic, decay: 0}",
    "nonlinearity: {family: berger, gamma: 0, q: 1}",
    "experiment: {kind: pullback, taus: [1.0], target: 0.0}",
    "experiment: {eps_frac: 2.5}",
    "integrator: {paper_literal_damping: 1}",
    "seed: -1",
    "grid: [1, 2]",
    "grid: {nx: 16",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_nullable_cache_path():
    assert parse_config("cache: null").cache is None


# --- CLI ---------------------------------------------------------------------


def _write(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


SMALL = {"grid": {"nx": 12, "nz": 12}, "basis": {"m": 4, "n": 4}, "integrator": {"dt": 0.02}}


def test_basis_command_builds_then_hits(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["basis", "--config", str(cfg), "--out", str(out)]) == 0
    first = json.loads((out / "basis.json").read_text())
    assert first["cache_hit"] is False and len(first["lambdas"]) == 4
    assert main(["basis", "--config", str(cfg), "--out", str(out)]) == 0
    second = json.loads((out / "basis.json").read_text())
    assert second["cache_hit"] is True and second["sha256"] == first["sha256"]
    assert "cache hit" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["grid"]["nx"] == 12 and "versions" in manifest
    assert (out / "config.resolved.yaml").exists()


def test_changed_grid_reports_stale_cache(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["basis", "--config", str(_write(tmp_path, SMALL)), "--out", str(out)]) == 0
    changed = dict(SMALL, grid={"nx": 10, "nz": 12})
    assert main(["basis", "--config", str(_write(tmp_path, changed, "b.yaml")), "--out", str(out)]) == 1
    assert "'nx'" in capsys.readouterr().err


def test_simulate_zero_datum_is_zero(tmp_path):
    data = dict(SMALL, experiment={"kind": "simulate", "t_end": 0.2, "initial": {"kind": "zero"}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 0
    table = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    assert np.all(table[:, 1:] == 0)


def test_simulate_free_decay_energy_and_determinism(tmp_path):
    data = dict(SMALL, experiment={"kind": "simulate", "t_end": 1.0})
    cfg = _write(tmp_path, data)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    header = (a / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t" and header[-4:] == ["E", "scriptE", "L", "dissipation"]
    E = np.loadtxt(a / "trajectory.csv", delimiter=",", skiprows=1)[:, header.index("E")]
    assert np.all(np.diff(E) <= 0)


def test_energy_audit_second_order(tmp_path):
    data = dict(SMALL, integrator={"dt": 0.01}, experiment={"kind": "energy-audit", "t_end": 1.0})
    out = tmp_path / "out"
    assert main(["energy-audit", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 0
    rep = json.loads((out / "energy_audit.json").read_text())
    assert abs(rep["order_slope"] - 2.0) < 0.2 and rep["contraction"] >= 3.5


def test_pullback_free_decay_series(tmp_path):
    data = dict(SMALL, experiment={"kind": "pullback", "taus": [-1, -2, -4, -8, -16], "count": 6, "radii": [0.01]})
    out = tmp_path / "out"
    assert main(["pullback", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 0
    cols = np.loadtxt(out / "attraction.dat")
    assert cols.shape == (5, 2) and np.all(np.diff(cols[:, 1]) < 0)
    assert json.loads((out / "pullback.json").read_text())["strictly_decreasing"] is True


def test_pullback_single_origin_warns(tmp_path):
    data = dict(SMALL, experiment={"kind": "pullback", "taus": [-1], "count": 2})
    with pytest.warns(UserWarning, match="single origin"):
        assert main(["pullback", "--config", str(_write(tmp_path, data)), "--out", str(tmp_path / "o")]) == 0


def test_dissipativity_censored_exit(tmp_path):
    # horizon far too short for the ensemble to settle below the floor
    data = dict(SMALL, experiment={"kind": "dissipativity", "R_grid": [100.0], "horizon": 0.1, "count": 4,
                                   "floor": 1e-3})
    assert main(["dissipativity", "--config", str(_write(tmp_path, data)), "--out", str(tmp_path / "o")]) == 3


def test_dissipativity_writes_envelopes(tmp_path):
    data = dict(SMALL, experiment={"kind": "dissipativity", "R_grid": [1.0, 2.0], "horizon": 10.0, "count": 4})
    out = tmp_path / "o"
    assert main(["dissipativity", "--config", str(_write(tmp_path, data)), "--out", str(out)]) == 0
    assert (out / "envelope_R1.dat").exists() and (out / "envelope_R2.dat").exists()
    rep = json.loads((out / "dissipativity.json").read_text())
    assert rep["first_failing_delta"] is None


def test_validate_exit_codes(tmp_path):
    good = dict(SMALL, experiment={"kind": "validate-assumptions", "n_samples": 20})
    assert main(["validate-assumptions", "--config", str(_write(tmp_path, good)), "--out", str(tmp_path / "g")]) == 0
    bad = dict(good, forcing={"family": "exponential", "amp_f": 1.0, "amp_g": 1.0, "decay": 0.5})
    out = tmp_path / "b"
    assert main(["validate-assumptions", "--config", str(_write(tmp_path, bad, "bad.yaml")), "--out", str(out)]) == 1
    assert json.loads((out / "assumptions.json").read_text())["checks"]["G2"]["status"] == "fail"


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "x.yaml"
    cfg.write_text("grid: {nx: 2}")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_seed_override_validated(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["basis", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", str(2**64)]) == 1
