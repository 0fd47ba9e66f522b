import json
import os

import numpy as np
import pytest

import lnodec as ln
from lnodec.cli import main, run
from lnodec.config import (ENV_SEED, ParseError, ValidationError,
                           parse_config, problem_defaults)


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


MINIMAL = "[problem]\nname = double_integrator\n"

TINY_TRAIN = """\
[problem]
name = double_integrator

[train]
M = 3
gamma = 25
hidden = 8 8
seed = 7

[experiments.adversarial]
n_points = 6
radius = 0.1
gamma = 25

[experiments.doa]
n1 = 3
n2 = 3
gamma = 10
"""


def test_minimal_config_gets_paper_defaults(tmp_path):
    spec = parse_config(write_config(tmp_path, MINIMAL))
    cfg = spec.train
    assert (cfg.M, cfg.gamma, cfg.alpha, cfg.kappa, cfg.beta) == \
        (400, 500, 0.025, 5.0, 5.0)
    assert cfg.mode == ln.MODE_LYAPUNOV
    assert not cfg.constrained
    assert spec.problem == "double_integrator"


def test_plasma_defaults(tmp_path):
    spec = parse_config(write_config(tmp_path, "[problem]\nname = plasma\n"))
    assert spec.train.beta == 50.0
    assert spec.train.constrained
    assert problem_defaults("plasma").beta == 50.0


def test_misspelled_key_is_hard_error(tmp_path):
    path = write_config(tmp_path, MINIMAL + "\n[train]\ngama = 500\n")
    with pytest.raises(ValidationError, match="gama"):
        parse_config(path)


def test_unknown_section_is_hard_error(tmp_path):
    path = write_config(tmp_path, MINIMAL + "\n[plotting]\nstyle = dark\n")
    with pytest.raises(ValidationError, match="plotting"):
        parse_config(path)


def test_invalid_value_reports_key(tmp_path):
    path = write_config(tmp_path, MINIMAL + "\n[train]\nM = many\n")
    with pytest.raises(ValidationError, match="'M' expects int"):
        parse_config(path)
    path = write_config(tmp_path, MINIMAL + "\n[train]\nconstrained = maybe\n")
    with pytest.raises(ValidationError, match="boolean"):
        parse_config(path)


def test_invariant_violations_surface(tmp_path):
    path = write_config(tmp_path, MINIMAL + "\n[train]\nM = 0\n")
    with pytest.raises(ValidationError, match="M must be >= 1"):
        parse_config(path)
    path = write_config(tmp_path, MINIMAL + "\n[train]\nmode = LQR\n")
    with pytest.raises(ValidationError):
        parse_config(path)


def test_parse_error_carries_line_number(tmp_path):
    path = write_config(tmp_path, "name = double_integrator\n")
    with pytest.raises(ParseError, match="line 1"):
        parse_config(path)


def test_missing_file_and_missing_problem(tmp_path):
    with pytest.raises(ParseError, match="not found"):
        parse_config(tmp_path / "nope.ini")
    with pytest.raises(ValidationError, match="problem"):
        parse_config(write_config(tmp_path, "[train]\nM = 5\n"))


def test_seed_precedence(tmp_path, monkeypatch):
    text = MINIMAL + "\n[train]\nseed = 3\n"
    spec = parse_config(write_config(tmp_path, text))
    assert spec.seed == 3 and spec.train.seed == 3

    text = MINIMAL + "\n[train]\nseed = 3\n\n[run]\nseed = 4\n"
    spec = parse_config(write_config(tmp_path, text, "b.ini"))
    assert spec.seed == 4 and spec.train.seed == 4

    monkeypatch.setenv(ENV_SEED, "11")
    spec = parse_config(write_config(tmp_path, text, "c.ini"))
    assert spec.seed == 11 and spec.train.seed == 11

    monkeypatch.setenv(ENV_SEED, "eleven")
    with pytest.raises(ValidationError, match=ENV_SEED):
        parse_config(write_config(tmp_path, text, "d.ini"))


def test_experiment_blocks_parse(tmp_path):
    spec = parse_config(write_config(tmp_path, TINY_TRAIN))
    assert spec.adversarial.n_points == 6
    assert spec.adversarial.gamma == 25
    assert spec.doa.n1 == 3
    assert spec.dose.target_cem == 1.5  # untouched defaults


# ---------------------------------------------------------------------------
# CLI end to end (tiny runs)
# ---------------------------------------------------------------------------

def test_cli_train_then_simulate_reproduces_trajectory(tmp_path):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    out1 = tmp_path / "train_out"
    out2 = tmp_path / "sim_out"
    assert main(["train", "--config", str(cfg_path), "--out", str(out1)]) == 0
    for name in ("policy.bin", "policy.txt", "history.csv", "trajectory.csv",
                 "history.png", "trajectory.png", "manifest.json"):
        assert (out1 / name).exists(), name
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out2),
                 "--policy", str(out1 / "policy.bin")]) == 0
    assert (out1 / "trajectory.csv").read_bytes() == \
        (out2 / "trajectory.csv").read_bytes()


def test_cli_refuses_overwrite_without_force(tmp_path, capsys):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 2
    assert "refusing to overwrite" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg_path), "--out", str(out),
                 "--force"]) == 0


def test_cli_manifest_contents(tmp_path):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    out = tmp_path / "out"
    main(["train", "--config", str(cfg_path), "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 7
    assert manifest["config"]["train"]["M"] == 3
    assert len(manifest["config_sha256"]) == 64
    assert manifest["version"]


def test_cli_robustness_and_doa_paths(tmp_path):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    out = tmp_path / "t"
    main(["train", "--config", str(cfg_path), "--out", str(out)])
    rob = tmp_path / "rob"
    rc = main(["robustness", "--config", str(cfg_path), "--out", str(rob),
               "--policy", str(out / "policy.bin"), "--jobs", "2"])
    assert rc == 0
    summary = json.loads((rob / "summary.json").read_text())
    assert "terminal_potential_bound" in summary
    assert summary["terminal_potential_bound"]["plus_variant"] >= \
        summary["terminal_potential_bound"]["minus_variant_as_printed"]
    assert (rob / "records.csv").exists()
    assert (rob / "phase.png").exists() and (rob / "positions.png").exists()

    doa = tmp_path / "doa"
    rc = main(["doa", "--config", str(cfg_path), "--out", str(doa),
               "--policy", str(out / "policy.bin")])
    assert rc == 0
    rows = (doa / "doa.csv").read_text().splitlines()
    assert rows[0] == "x1,x2,success" and len(rows) == 10
    assert (doa / "doa.png").exists()


def test_cli_dose_requires_plasma(tmp_path, capsys):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    rc = main(["dose", "--config", str(cfg_path), "--out", str(tmp_path / "d"),
               "--policy", "unused"])
    assert rc == 2
    assert "plasma" in capsys.readouterr().err


PLASMA_TINY = """\
[problem]
name = plasma

[train]
M = 3
gamma = 30
hidden = 8 8
seed = 1

[experiments.dose]
n_points = 5
radius = 3.0
gamma = 30
"""


def test_cli_dose_plasma_end_to_end(tmp_path):
    cfg_path = write_config(tmp_path, PLASMA_TINY)
    out = tmp_path / "t"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    dose = tmp_path / "dose"
    rc = main(["dose", "--config", str(cfg_path), "--out", str(dose),
               "--policy", str(out / "policy.bin")])
    assert rc == 0
    summary = json.loads((dose / "summary.json").read_text())
    assert summary["aggregates"]["n_records"] == 6
    assert (dose / "dose.png").exists()


def test_cli_missing_policy_is_usage_error(tmp_path, capsys):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    rc = main(["simulate", "--config", str(cfg_path),
               "--out", str(tmp_path / "s")])
    assert rc == 2
    assert "--policy" in capsys.readouterr().err


def test_cli_bad_config_is_usage_error(tmp_path, capsys):
    path = write_config(tmp_path, MINIMAL + "\n[train]\ngama = 1\n")
    rc = main(["train", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "gama" in capsys.readouterr().err


def test_run_api_dispatch(tmp_path):
    spec = parse_config(write_config(tmp_path, TINY_TRAIN))
    out = tmp_path / "api_out"
    assert run(spec, "train", out=str(out)) == 0
    assert (out / "policy.bin").exists()
    with pytest.raises(Exception, match="unknown command"):
        run(spec, "explode")


def test_cli_env_seed_override(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path, TINY_TRAIN)
    monkeypatch.setenv(ENV_SEED, "99")
    out = tmp_path / "env_out"
    main(["train", "--config", str(cfg_path), "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 99
