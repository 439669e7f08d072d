import json
import subprocess
import sys

import numpy as np
import pytest

from phicaloric import cli, config, runner
from phicaloric.errors import ConfigError, NonConvergence


def small_config(**over):
    cfg = {
        "name": "small",
        "phi": {"kind": "power", "p": 3.0},
        "cylinder_sets": {"mid": [{"id": "a", "x0": [0.5, 0.5], "R": 0.15},
                                  {"id": "b", "x0": [0.45, 0.5], "R": 0.12}]},
        "runs": [
            {"id": "eig", "preset": "eigenmode", "grid": {"n": 2, "cells": 16, "dt": 0.01, "T": 0.1},
             "cylinders": "mid"},
            {"id": "rs", "preset": "random_smooth", "seed": 2,
             "grid": {"n": 2, "cells": 16, "dt": 0.01, "T": 0.1}, "cylinders": "mid"},
        ],
        "checks": [
            {"check": "verify_main_bound", "id": "mb", "runs": ["eig", "rs"]},
            {"check": "verify_decay", "id": "dec"},
        ],
    }
    cfg.update(over)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


# --- config ------------------------------------------------------------------------

def test_missing_phi_is_pointered():
    cfg = small_config()
    del cfg["phi"]
    with pytest.raises(ConfigError, match=r"^/: 'phi' is a required property"):
        config.load_config(cfg)


@pytest.mark.parametrize("mutate,where", [
    (lambda c: c["runs"][0]["grid"].update(cells=4), "/runs/0/grid/cells"),
    (lambda c: c["runs"][0].update(preset="nope"), "/runs/0/preset"),
    (lambda c: c["runs"][1].update(id="eig"), "/runs/1/id"),
    (lambda c: c["runs"][0]["grid"].pop("dt"), "/runs/0/grid"),
    (lambda c: c["checks"][0].update(runs=["ghost"]), "/checks/0"),
    (lambda c: c["runs"][0].update(cylinders="ghost"), "/runs/0/cylinders"),
])
def test_semantic_errors(mutate, where):
    cfg = small_config()
    mutate(cfg)
    with pytest.raises(ConfigError) as info:
        config.load_config(cfg)
    assert str(info.value).startswith(where)


def test_defaults_and_hash_stable():
    a = config.load_config(small_config())
    assert a["seed"] == 0 and a["solver"]["stride"] == 1
    assert a["runs"][0]["mode"] == "parabolic"
    assert config.digest(a) == config.digest(config.load_config(small_config()))
    assert config.digest(a) != config.digest(config.load_config(small_config(seed=1)))


def test_bundled_suite_validates():
    cfg = config.load_config(config.bundled())
    assert len(cfg["checks"]) >= 10
    assert config.code_version().startswith("0.1.0+")


# --- experiments -----------------------------------------------------------------------

def test_empty_run_list(tmp_path):
    res = runner.run_experiment({"phi": {"kind": "power", "p": 2}, "runs": [], "checks": []}, tmp_path)
    assert res.status == 0 and len(res.config_hash) == 64
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config_hash"] == res.config_hash and summary["checks"] == []


def test_check_reports_and_determinism(tmp_path):
    a = runner.run_experiment(small_config(), tmp_path / "a")
    b = runner.run_experiment(small_config(), tmp_path / "b", use_cache=False)
    assert a.status == b.status == 0
    for name in ("mb.csv", "dec.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    head = (tmp_path / "a" / "mb.csv").read_text().splitlines()
    assert head[0] == "run_id,cyl_id,k,quantity,value"
    assert len(head) == 1 + 2 * 2 * 3
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["status"] == 0 and summary["checks"][0]["pass"]


def test_cache_bitwise(tmp_path):
    cfg = config.load_config(small_config())
    ctx = runner.Context(cfg, tmp_path)
    fresh = ctx.field("eig")
    cached = runner.Context(cfg, tmp_path).field("eig")
    assert len(list(tmp_path.glob("eig-*.npz"))) == 1
    for key in ("t", "u", "v", "gradV"):
        assert np.array_equal(getattr(fresh, key), getattr(cached, key))
    assert fresh.meta == cached.meta


def test_seed_override_changes_random_runs(tmp_path):
    cfg = small_config()
    del cfg["runs"][1]["seed"]
    cfg = config.load_config(cfg)
    k0 = runner.run_hash(cfg, cfg["runs"][1])
    cfg["seed"] = 5
    assert runner.run_hash(cfg, cfg["runs"][1]) != k0


def test_solve_snapshots_csv_and_json(tmp_path):
    cfg = small_config(checks=[])
    cfg["runs"] = cfg["runs"][:1]
    runner.run_experiment(cfg, tmp_path / "c", solve_only=True)
    files = sorted((tmp_path / "c" / "snapshots" / "eig").glob("*.csv"))
    assert len(files) == 11
    first = files[-1].read_text().splitlines()
    head = json.loads(first[0][2:])
    assert head["t"] == pytest.approx(0.1) and head["cells"] == [16, 16] and head["N"] == 1
    assert len(first) == 2 + 17 * 17
    runner.run_experiment(cfg, tmp_path / "j", solve_only=True, fmt="json")
    d = tmp_path / "j" / "snapshots" / "eig"
    u = np.fromfile(d / "snap_00010.bin", dtype="<f8")
    ref = np.array([float(x) for x in first[2:]])
    np.testing.assert_array_equal(u, ref)


def test_json_report_format(tmp_path):
    runner.run_experiment(small_config(), tmp_path, fmt="json")
    rows = json.loads((tmp_path / "mb.json").read_text())
    assert {"run_id", "cyl_id", "k", "quantity", "value"} == set(rows[0])


def test_failing_envelope_exit_1(tmp_path):
    cfg = small_config()
    cfg["checks"][0]["envelope"] = {"min_cylinders": 100}
    assert runner.run_experiment(cfg, tmp_path).status == 1


def test_nonconvergence_exit_3(tmp_path, monkeypatch):
    def boom(cfg, run):
        raise NonConvergence("forced", 1.0, 0.05)

    monkeypatch.setattr(runner, "solve_run", boom)
    cfg = small_config()
    cfg["checks"] = [{"check": "verify_decay", "id": "dec"}] + cfg["checks"][:1]
    res = runner.run_experiment(cfg, tmp_path, use_cache=False)
    assert res.status == 3 and "t=0.05" in res.message
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == 3
    assert (tmp_path / "config.resolved.json").exists()


# --- CLI -----------------------------------------------------------------------------

def test_cli_list_presets(capsys):
    assert cli.main(["list-presets"]) == 0
    out = capsys.readouterr().out
    for name in ("barenblatt", "eigenmode", "affine", "radial_pharmonic", "random_smooth"):
        assert name in out


def test_cli_describe_check(capsys):
    assert cli.main(["describe-check", "verify_main_bound"]) == 0
    assert "Theorem main" in capsys.readouterr().out
    assert cli.main(["describe-check", "nope"]) == 2


def test_cli_config_error(tmp_path, capsys):
    cfg = small_config()
    del cfg["phi"]
    assert cli.main(["check", "--config", str(write(tmp_path, cfg))]) == 2
    assert "'phi' is a required property" in capsys.readouterr().err
    assert cli.main(["check", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_check_runs(tmp_path, capsys):
    p = write(tmp_path, small_config())
    assert cli.main(["check", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("PASS mb")
    status = json.loads(out[-1])
    assert status["status"] == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["seed"] == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "phicaloric", "describe-check", "stationary_check"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("stationary_check:")
