import json

import numpy as np
import pytest

from fpstab import __version__, cli
from fpstab.errors import ConfigError
from fpstab.experiments import library, runner
from fpstab.experiments.config import SCHEMA, builtin_names, load_config, parse_config, validate
from fpstab.measures import BoxGrid, ParticleCloud, write_cloud_csv
from fpstab.stability import TAGS


def minimal(**changes):
    raw = {"schema": SCHEMA, "name": "mini", "dim": 1, "box": {"lower": [-4.0], "upper": [4.0]},
           "cells": [200], "horizon": 1.0,
           "fields": [{"drift": [{"name": "linear", "a": 1.0}], "diffusion": {"name": "constant", "value": 0.3}}],
           "init": {"kind": "gaussian", "mean": 0.0, "std": 0.5}, "tags": ["sobolev"], "deltas": [0.1],
           "exponents": {"p": 2.0}, "simulation": {"particles": 2000, "step": 0.01}, "seed": 3}
    raw.update(changes)
    return raw


def as_text(raw):
    return json.dumps(raw, indent=2)


# Config validation ------------------------------------------------------------------

def test_minimal_config_validates():
    cfg = validate(minimal())
    assert cfg.dim == 1 and cfg.cells == [200] and cfg.tags == ["sobolev"]
    sc = cfg.scenario()
    assert sc.p == 2.0 and sc.particles == 2000


def test_exponent_constraint_names_line():
    text = as_text(minimal(exponents={"p": 1.0}))
    line = next(i + 1 for i, s in enumerate(text.splitlines()) if '"p"' in s)
    with pytest.raises(ConfigError) as err:
        parse_config(text, "cfg.json")
    assert "p > 1" in str(err.value)
    assert str(err.value).startswith(f"cfg.json:{line}:")


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError, match=r"cfg.json:3: invalid JSON"):
        parse_config('{\n  "schema": 1,\n  oops\n}', "cfg.json")


@pytest.mark.parametrize("changes,match", [
    ({"colour": "red"}, "unknown key 'colour'"),
    ({"schema": "v0"}, "schema must be"),
    ({"dim": 3}, "dim must be 1 or 2"),
    ({"box": {"lower": [1.0], "upper": [0.0]}}, "lower < upper"),
    ({"cells": [1]}, "cells needs"),
    ({"horizon": 0.0}, "horizon must be positive"),
    ({"tags": ["nonsense"]}, "unknown tag 'nonsense'"),
    ({"tags": ["lps"]}, "exponents.lps"),
    ({"tags": ["osgood"]}, "needs a modulus"),
    ({"deltas": [-1.0]}, "delta must be positive"),
    ({"kappas": [-0.1]}, "nonnegative"),
    ({"times": [2.0]}, "checkpoint times"),
    ({"fields": []}, "one or two"),
    ({"fields": [{"drift": [{"name": "warp"}]}]}, "unknown drift 'warp'"),
    ({"exponents": {"p1": 0.5}}, "p1 > 1"),
    ({"horizon": 0.5}, "multiples of the step"),
])
def test_validation_messages(changes, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(as_text(minimal(**changes)), "cfg.json")


def test_lps_exponents_checked():
    with pytest.raises(ConfigError):
        validate(minimal(tags=["lps"], exponents={"lps": [1.0, 1.0]}))
    cfg = validate(minimal(tags=["lps"], exponents={"lps": [4.0, 4.0]}))
    assert cfg.scenario().lps == (4.0, 4.0)


def test_missing_required_key():
    raw = minimal()
    del raw["init"]
    with pytest.raises(ConfigError, match="missing required key 'init'"):
        validate(raw)


def test_non_object_rejected():
    with pytest.raises(ConfigError, match="JSON object"):
        parse_config("[1, 2]")


def test_load_from_file_and_missing(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(as_text(minimal()))
    assert load_config(path).name == "mini"
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
    with pytest.raises(ConfigError, match="no built-in scenario"):
        load_config("builtin:absent")


def test_builtin_names_cover_acceptance_scenarios():
    names = set(builtin_names())
    needed = set(runner.SUITE) | set(runner.HELDOUT) | set(runner.OSGOOD)
    needed |= {"gronwall-lipschitz", "zero-diffusivity", "zvonkin-sine", "superposition-ou",
               "superposition-sine", "heat-kernel", "identical-halves"}
    assert needed <= names


@pytest.mark.parametrize("name", builtin_names())
def test_every_builtin_validates(name):
    cfg = load_config(f"builtin:{name}")
    assert cfg.name == name
    assert set(cfg.tags) <= set(TAGS) | {"superposition", "zero-diffusivity"}
    cfg.scenario()


# Library builders -----------------------------------------------------------------

def test_linear_drift_and_offset():
    f = library.build_drift([{"name": "linear", "a": 2.0, "c": 0.5}], 1)
    np.testing.assert_allclose(f(0.0, np.array([[1.0], [-1.0]])), [[-1.5], [2.5]])


def test_drift_terms_add():
    x = np.array([[0.3, -0.2]])
    both = library.build_drift([{"name": "linear"}, {"name": "rotation", "omega": 2.0}], 2)(0.0, x)
    np.testing.assert_allclose(both, -x + 2.0 * np.array([[0.2, 0.3]]))


def test_rotation_needs_plane():
    with pytest.raises(ConfigError, match="d = 2"):
        library.build_drift({"name": "rotation"}, 1)


def test_sine_diffusion_is_diagonal():
    s = library.build_diffusion({"name": "sine", "base": 1.0, "amplitude": 0.5}, 2)
    out = s(0.0, np.zeros((3, 2)))
    np.testing.assert_allclose(out, np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_unknown_builders():
    with pytest.raises(ConfigError, match="unknown diffusion"):
        library.build_diffusion({"name": "x"}, 1)
    with pytest.raises(ConfigError, match="unknown modulus"):
        library.build_modulus({"name": "x"})
    with pytest.raises(ConfigError, match="unknown initial"):
        library.build_initial({"kind": "x"}, BoxGrid([0.0], [1.0], [4]))


def test_initial_mixture_has_unit_mass():
    grid = BoxGrid([-6.0, -6.0], [6.0, 6.0], [60, 60])
    spec = {"components": [{"mean": [-1, 0], "std": 0.5, "weight": 1}, {"mean": [1, 1], "std": 0.7, "weight": 3}]}
    u = library.build_initial(spec, grid)
    assert u.mass() == pytest.approx(1.0, abs=1e-12)


def test_weight_decays():
    g = library.build_weight({"c": 2.0, "power": 1.0})
    np.testing.assert_allclose(g(0.0, np.array([[0.0], [1.0]])), [2.0, 1.0])


# Runner ------------------------------------------------------------------------------

def test_identical_halves_run(tmp_path):
    res = runner.run(validate(minimal()), tmp_path / "a")
    assert res.status == runner.EXIT_PASS
    rows = json.loads((res.directory / "reports.json").read_text())
    assert all(r["lhs"] == 0.0 for rep in rows for r in rep["rows"])
    manifest = json.loads((res.directory / "manifest.json").read_text())
    assert manifest["status"] == "passed"
    assert len(manifest["constants_sha256"]) == 64
    on_disk = {p.name for p in res.directory.iterdir()} - {"manifest.json"}
    assert on_disk <= set(manifest["files"])


def test_rerun_is_byte_identical(tmp_path):
    cfg = validate(minimal(fields=[minimal()["fields"][0],
                                   {"drift": [{"name": "linear", "a": 1.0, "c": 0.1}],
                                    "diffusion": {"name": "constant", "value": 0.3}}]))
    a = runner.run(cfg, tmp_path / "a")
    b = runner.run(cfg, tmp_path / "b")
    assert a.files == b.files
    for name in a.files:
        if name.endswith(".csv"):
            assert (a.directory / name).read_bytes() == (b.directory / name).read_bytes()


def test_sobolev_step_regression(tmp_path):
    res = runner.run(load_config("builtin:sobolev-step"), tmp_path)
    assert res.status == 0
    reports = json.loads((res.directory / "reports.json").read_text())
    sob = [r for r in reports if r["tag"] == "sobolev"]
    assert sob[0]["scale"] == pytest.approx(0.12242354970237185, rel=1e-9)
    final = sob[0]["rows"][-1]
    assert final["lhs"] == pytest.approx(0.029643892115130424, rel=1e-9)
    assert final["rhs"] == pytest.approx(25.611023188999862, rel=1e-9)
    assert sob[1]["rows"][-1]["lhs"] == pytest.approx(0.043822659779093054, rel=1e-9)


def test_failed_check_gives_status_two(tmp_path, monkeypatch):
    real = runner.scenario_reports

    def failing(cfg, constants):
        reports, data = real(cfg, constants)
        reports[0].rows[-1]["pass"] = False
        return reports, data
    monkeypatch.setattr(runner, "scenario_reports", failing)
    res = runner.run(validate(minimal()), tmp_path)
    assert res.status == runner.EXIT_FAIL
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "failed-checks"


def test_module_error_leaves_failed_marker(tmp_path, monkeypatch):
    def broken(cfg, constants):
        raise RuntimeError("boom")
    monkeypatch.setattr(runner, "scenario_reports", broken)
    with pytest.raises(RuntimeError):
        runner.run(validate(minimal()), tmp_path)
    assert (tmp_path / "FAILED").read_text().strip() == "RuntimeError: boom"
    assert (tmp_path / "config.json").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "error"


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(runner.OUTPUT_ENV, str(tmp_path))
    assert runner.output_root() == tmp_path


# Sweeps ------------------------------------------------------------------------------

def read_sweep(res):
    lines = (res.directory / "sweep.csv").read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def test_heat_kernel_grid_sweep(tmp_path):
    res = runner.sweep(load_config("builtin:heat-kernel"), "grid-resolution", [100, 200, 400], tmp_path)
    header, rows = read_sweep(res)
    assert header == ["cells", "dx", "l1_error"]
    assert rows[-1][0] == "fit"
    # centred diffusion without drift converges at second order
    assert res.summary["slope"] == pytest.approx(2.0, abs=0.1)


def test_drift_transport_grid_sweep_first_order(tmp_path):
    res = runner.sweep(load_config("builtin:drift-transport"), "grid-resolution", [200, 400, 800, 1600], tmp_path)
    assert 0.7 <= res.summary["slope"] <= 1.1


def test_particle_count_standard_error_rate(tmp_path):
    res = runner.sweep(load_config("builtin:sigma-shift"), "particle-count", [1e3, 1e4, 1e5], tmp_path)
    assert res.summary["slope"] == pytest.approx(-0.5, abs=0.1)


def test_delta_sweep_rows(tmp_path):
    res = runner.sweep(load_config("builtin:sobolev-step"), "delta", [0.05, 0.1, 0.5], tmp_path)
    header, rows = read_sweep(res)
    assert header == ["delta", "lhs", "rhs", "margin"]
    lhs = [float(r[1]) for r in rows[:-1]]
    assert lhs == sorted(lhs, reverse=True)


def test_unknown_sweep_parameter(tmp_path):
    with pytest.raises(ValueError, match="parameter must be one of"):
        runner.sweep(validate(minimal()), "colour", [1.0], tmp_path)


def test_grid_sweep_needs_closed_form(tmp_path):
    with pytest.raises(ValueError, match="closed-form"):
        runner.sweep(load_config("builtin:sobolev-step"), "grid-resolution", [100, 200], tmp_path)


# Command line -----------------------------------------------------------------------

def test_cli_list(capsys):
    assert cli.main(["list"]) == 0
    assert "gronwall-lipschitz" in capsys.readouterr().out.split()


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_cli_run(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(as_text(minimal()))
    assert cli.main(["run", str(path), "--out", str(tmp_path / "out")]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == 0


def test_cli_validation_error_exit(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(as_text(minimal(exponents={"p": 1.0})))
    assert cli.main(["run", str(path)]) == runner.EXIT_ERROR
    assert "p > 1" in capsys.readouterr().err


def test_cli_missing_file_exit(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.json")]) == runner.EXIT_ERROR


def test_cli_ot(tmp_path, capsys):
    write_cloud_csv(tmp_path / "mu.csv", ParticleCloud(np.array([[0.0], [1.0]])))
    write_cloud_csv(tmp_path / "nu.csv", ParticleCloud(np.array([[1.0], [2.0]])))
    code = cli.main(["ot", str(tmp_path / "mu.csv"), str(tmp_path / "nu.csv"), "--cost", "log-squared",
                     "--delta", "1", "--out", str(tmp_path / "plan")])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["value"] == pytest.approx(np.log(2.0))
    assert (tmp_path / "plan" / "plan.csv").exists()


def test_cli_sweep(tmp_path, capsys):
    code = cli.main(["sweep", "builtin:heat-kernel", "--param", "grid-resolution", "--values", "100,200",
                     "--out", str(tmp_path)])
    assert code == 0
    assert capsys.readouterr().out.startswith("slope ")
    assert (tmp_path / "sweep-grid-resolution" / "sweep.csv").exists()


def test_cli_zvonkin(tmp_path):
    assert cli.main(["zvonkin", "builtin:zvonkin-sine", "--out", str(tmp_path)]) == 0
    for name in ("zvonkin.json", "zvonkin_residuals.csv", "zvonkin_frames.csv", "manifest.json"):
        assert (tmp_path / name).exists()
