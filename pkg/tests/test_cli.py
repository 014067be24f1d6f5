import json

import numpy as np
import pytest

from dojo import cli
from dojo.sim import SolverFailure


def write_config(tmp_path, **fields):
    path = tmp_path / "cfg.json"
    fields.setdefault("output_dir", str(tmp_path / "out"))
    path.write_text(json.dumps(fields))
    return path


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])


def test_missing_config_exits_2(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
    assert "cannot load config" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path):
    path = write_config(tmp_path, scenario="box_drop", h=-1.0)
    assert cli.main(["run", str(path)]) == 2


def test_missing_dataset_exits_2(tmp_path):
    path = write_config(tmp_path, scenario="sysid")
    assert cli.main(["sysid", str(tmp_path / "none.csv"), str(path)]) == 2


def test_box_drop_passes(tmp_path, capsys):
    path = write_config(tmp_path, scenario="box_drop", timesteps=[0.1], drop_height=0.2, drop_duration=1.0,
                        r_tol=1e-8, kappa_tol=1e-8)
    assert cli.main(["run", str(path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert any(p.suffix == ".csv" for p in (tmp_path / "out").iterdir())
    assert any(p.suffix == ".gp" for p in (tmp_path / "out").iterdir())


def test_failed_check_exits_1(tmp_path, capsys):
    # loose tolerances leave a visible rest gap of about kappa / gamma
    path = write_config(tmp_path, scenario="box_drop", timesteps=[0.1], drop_height=0.2, drop_duration=1.0,
                        r_tol=1e-3, kappa_tol=1e-3)
    assert cli.main(["run", str(path)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_solver_failure_exits_2(tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise SolverFailure("no progress", "max_iter", None, 3)
    monkeypatch.setattr(cli, "run_scenario", boom)
    path = write_config(tmp_path, scenario="box_drop")
    assert cli.main(["run", str(path)]) == 2
    assert "step 3" in capsys.readouterr().err


def test_gen_data_then_sysid(tmp_path, capsys):
    data = tmp_path / "data.csv"
    path = write_config(tmp_path, scenario="sysid", n_traj=2, traj_steps=8, dataset_file=str(data),
                        max_gn_iters=2, perturbation=0.0)
    assert cli.main(["gen-data", str(path)]) == 0
    assert data.exists() and len(data.read_text().splitlines()) == 1 + 2 * 6
    assert cli.main(["sysid", str(data), str(path)]) == 0
    result = json.loads((tmp_path / "out" / "sysid_result.json").read_text())
    assert result["c_f"] == pytest.approx(0.3)
    assert (tmp_path / "out" / "sysid_trace.csv").exists()
