"""End-to-end checks of the configuration-driven entry point.

Runs are kept tiny (coarse grids, few paths) so the whole file stays in the
seconds range; heavier runs live in the acceptance suite.
"""

import json
import warnings

import numpy as np
import pytest

from submfg.cli import ConfigError, load_config, main, run, validate_config


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


MFG_TOML = """
task = "solve-mfg"
seed = 11
out = "{out}"
quiet = true

[family]
name = "euclidean"
dim = 1

[grid]
n = 16

[model]
kind = "quadratic"
potential.cos = [0.5]

[coupling]
kind = "smoothed_local"
sigma = 0.1

[solver]
rho0 = 0.5
rho_steps = 8
tol_ergodic = 1.0e-6
"""


# ------------------------------------------------------------- validation

def test_validate_rejects_unknown_task():
    with pytest.raises(ConfigError, match="task must be one of"):
        validate_config({"task": "solve-everything"})


def test_validate_rejects_unknown_family():
    with pytest.raises(ConfigError, match="heisenbug"):
        validate_config({"task": "solve-fp",
                         "family": {"name": "heisenbug"}})


def test_validate_field_messages():
    base = {"task": "solve-fp", "family": "euclidean"}
    cases = [
        ({"grid": {"n": 2}}, "grid.n must be at least 4"),
        ({"grid": {"scheme": "spectral"}}, "grid.scheme must be"),
        ({"model": {"kind": "banana"}}, "model.kind must be one of"),
        ({"model": {"kind": "ball", "radius": -2.0}}, "radius must be"),
        ({"model": {"kind": "ball_soft", "kappa": 0.0}}, "kappa must be"),
        ({"model": {"kind": "ball",
                    "potential": {"cos": [1.0]}}}, "takes no potential"),
        ({"coupling": {"sigma": 0.7}}, "coupling.sigma must lie in"),
        ({"coupling": {"kind": "teleport"}}, "coupling.kind must be"),
        ({"solver": {"rho0": -1.0}}, "rho0 must be positive"),
        ({"solver": {"rho_steps": 0}}, "rho_steps must be at least 1"),
        ({"solver": {"damping": 1.5}}, "damping must lie in"),
        ({"solver": {"mode": "transient"}}, "solver.mode must be"),
        ({"simulate": {"paths": 0}}, "simulate.paths"),
        ({"game": {"players": 0}}, "game.players"),
        ({"game": {"budget": 1}}, "game.budget"),
    ]
    for patch, fragment in cases:
        raw = dict(base, **patch)
        with pytest.raises(ConfigError, match=fragment):
            validate_config(raw)


def test_validate_potential_length_capped_by_dimension():
    with pytest.raises(ConfigError, match="2 entries for a 1-dimensional"):
        validate_config({"task": "solve-mfg", "family": "euclidean",
                         "model": {"potential": {"cos": [1.0, 1.0]}}})


def test_validate_fills_defaults():
    cfg = validate_config({"task": "solve-fp"})
    assert cfg.family == "euclidean"
    assert cfg.dim == 1
    assert cfg.n == 16
    assert cfg.scheme == "monotone"
    assert cfg.solver["mode"] == "ergodic"
    assert cfg.coupling["kind"] == "smoothed_local"


def test_family_string_shorthand():
    cfg = validate_config({"task": "solve-fp", "family": "grushin"})
    assert cfg.family == "grushin"
    assert cfg.dim == 2


# ------------------------------------------------------------- exit codes

def test_main_missing_config_file(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "nope.toml")]) == 1
    assert "config error" in capsys.readouterr().err


def test_main_malformed_toml(tmp_path, capsys):
    path = write_config(tmp_path, "task = [unclosed")
    assert main(["--config", path]) == 1
    assert "config error" in capsys.readouterr().err


def test_main_validation_failure(tmp_path, capsys):
    path = write_config(tmp_path, 'task = "warp"')
    assert main(["--config", path]) == 1
    assert "task must be one of" in capsys.readouterr().err


def test_main_solver_failure_is_exit_2(tmp_path, capsys):
    # two large discounts cannot reach a 1e-13 ergodic tolerance
    text = MFG_TOML.format(out=tmp_path / "out") + (
        "\n[solver.extra]\n")
    path = write_config(tmp_path, text)
    code = main(["--config", path, "--rho-steps", "2", "--tol", "1e-13"])
    assert code == 2
    assert "solver failure" in capsys.readouterr().err


def test_main_bad_geometry_radii_is_exit_1(tmp_path, capsys):
    text = """
task = "ccdist"
out = "{out}"
quiet = true
family = "euclidean"

[family]
name = "euclidean"
dim = 1

[grid]
n = 12

[geometry]
radii = [5.0, 9.0]
""".format(out=tmp_path / "out")
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 1
    assert "config error" in capsys.readouterr().err


# --------------------------------------------------------------- solve runs

def test_solve_fp_run_artifacts_and_manifest(tmp_path):
    out = tmp_path / "fp"
    text = """
task = "solve-fp"
seed = 3
out = "{out}"
quiet = true

[family]
name = "grushin"

[grid]
n = 12

[model]
potential.cos = [0.3, 0.0]
""".format(out=out)
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["task"] == "solve-fp"
    assert manifest["seed"] == 3
    assert manifest["all_checks_ok"] is True
    assert sorted(manifest["artifacts"]) == ["m.csv", "summary.json"]
    assert set(manifest["checks"]) == {"mass_error", "positivity",
                                       "residuals"}
    assert len(manifest["config_sha256"]) == 64
    # wall time is quarantined away from the reproducible payload
    assert "wall_time_s" in manifest["volatile"]
    assert "wall_time_s" not in manifest["config"]


def test_solve_mfg_run_and_byte_determinism(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    path_a = write_config(tmp_path, MFG_TOML.format(out=out_a), "a.toml")
    path_b = write_config(tmp_path, MFG_TOML.format(out=out_b), "b.toml")
    assert main(["--config", path_a]) == 0
    assert main(["--config", path_b]) == 0
    names = sorted(p.name for p in out_a.iterdir())
    assert "u.csv" in names and "m.csv" in names
    for name in names:
        if name == "manifest.json":
            a = json.loads((out_a / name).read_text())
            b = json.loads((out_b / name).read_text())
            a.pop("volatile"), b.pop("volatile")
            assert a == b   # out_dir is not fingerprinted
        else:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_seed_override_changes_fingerprint(tmp_path):
    out = tmp_path / "o"
    path = write_config(tmp_path, MFG_TOML.format(out=out))
    assert main(["--config", path, "--seed", "77", "--n", "12",
                 "--rho-steps", "6"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 77
    assert manifest["config"]["n"] == 12
    assert manifest["config"]["solver"]["rho_steps"] == 6


def test_discounted_mode_runs(tmp_path):
    out = tmp_path / "disc"
    text = MFG_TOML.format(out=out).replace(
        'rho0 = 0.5', 'rho = 0.5\nmode = "discounted"\nrho0 = 0.5')
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "discounted"
    assert summary["residuals"]["hjb"] <= 1e-7


def test_solve_hjb_max_principle_check(tmp_path):
    out = tmp_path / "hjb"
    text = """
task = "solve-hjb"
out = "{out}"
quiet = true

[family]
name = "euclidean"
dim = 1

[grid]
n = 24

[model]
kind = "quadratic"
potential.cos = [0.4]

[solver]
rho = 0.7
""".format(out=out)
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["checks"]["max_principle"]["ok"] is True
    assert manifest["checks"]["max_principle"]["sup_u"] > 0.0


def test_ccdist_with_dimension_fit(tmp_path):
    out = tmp_path / "cc"
    text = """
task = "ccdist"
out = "{out}"
quiet = true

[family]
name = "euclidean"
dim = 2

[grid]
n = 24

[geometry]
radius_range = [0.1, 0.3, 6]
""".format(out=out)
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    geo = json.loads((out / "geometry.json").read_text())
    assert geo["reachable_fraction"] == 1.0
    assert abs(geo["dimension_fit"]["Q"] - 2.0) < 0.5


def test_diagnostics_task(tmp_path):
    out = tmp_path / "diag"
    text = """
task = "ergodic-diagnostics"
out = "{out}"
quiet = true

[family]
name = "euclidean"
dim = 1

[grid]
n = 12

[diagnostics]
n_max = 6
""".format(out=out)
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    decay = json.loads((out / "decay.json").read_text())
    assert 0.0 < decay["delta_doeblin"] < 1.0
    assert decay["bound_ok"] is True
    curve = (out / "decay_curve.csv").read_text().splitlines()
    assert curve[0] == "t,error"
    assert len(curve) > 10


def test_nplayer_task_symmetry(tmp_path):
    out = tmp_path / "np2"
    text = """
task = "nplayer"
seed = 3
out = "{out}"
quiet = true

[family]
name = "euclidean"
dim = 1

[grid]
n = 10

[model]
potential.cos = [0.5]

[game]
players = 2
budget = 2000

[solver]
rho_steps = 6
tol_ergodic = 1.0e-6
""".format(out=out)
    path = write_config(tmp_path, text)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        assert main(["--config", path]) == 0
    nash = json.loads((out / "nash.json").read_text())
    assert nash["players"] == 2
    assert nash["lambda"][0] == nash["lambda"][1]
    assert nash["symmetry"]["max_dlam"] <= 1e-10
    for name in ("u_player0.csv", "m_player1.csv", "rhs_player0.csv"):
        assert (out / name).exists()


def test_simulate_task_cost_matches_value(tmp_path):
    out = tmp_path / "sim"
    text = MFG_TOML.format(out=out).replace('task = "solve-mfg"',
                                            'task = "simulate"') + """
[simulate]
paths = 400
horizon = 12.0
dt = 0.05
"""
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    ens = json.loads((out / "ensemble.json").read_text())
    assert ens["gap"] <= ens["threshold"]
    assert ens["paths"] == 400
    occ = (out / "occupation.csv").read_text().splitlines()
    assert occ[0] == "x0,density"


def test_verify_task(tmp_path):
    out = tmp_path / "ver"
    text = MFG_TOML.format(out=out).replace('task = "solve-mfg"',
                                            'task = "verify"') + """
[simulate]
paths = 300
horizon = 10.0
dt = 0.05
"""
    path = write_config(tmp_path, text)
    assert main(["--config", path]) == 0
    rep = json.loads((out / "verify.json").read_text())
    assert rep["all_value_ok"] is True
    assert rep["all_deviation_ok"] is True


def test_run_unwritable_output(tmp_path):
    cfg = validate_config({"task": "solve-fp", "out": "/proc/denied"})
    with pytest.raises((ConfigError, OSError)):
        run(cfg)
