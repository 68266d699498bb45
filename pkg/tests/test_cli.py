import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tribody import cli, fixtures
from tribody import dataset as ds

ROOT = Path(__file__).resolve().parents[1]


def run(argv, capsys=None):
    code = cli.run(argv)
    return code


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    line = [l for l in err if l.startswith("error: ")][-1]
    return json.loads(line[len("error: "):])


def test_unknown_subcommand(capsys):
    assert cli.run(["fly"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert cli.run(["simulate", "--no-such-flag", "1"]) == 2


@pytest.mark.parametrize("argv", [["generate"], ["train", "esn"], ["train", "hnn"], ["train", "lstm"],
                                  ["evaluate"], ["simulate"], ["lyapunov"]])
def test_help_lists_every_flag(argv, capsys):
    with pytest.raises(SystemExit) as info:
        cli.build_parser().parse_args(argv + ["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--seed", "--out", "--workers", "--quiet"):
        assert flag in text
    for key, default in cli._schemas()[" ".join(argv)]:
        assert "--" + key.replace("_", "-") in text
        assert f"(default: {cli._show(default)})" in " ".join(text.split())


def test_flag_table_in_readme():
    readme = (ROOT / "README.md").read_text()
    assert cli.flag_table().strip() in readme


def test_config_error_exit_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert cli.run(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert error_line(capsys)["exit_code"] == 3
    cfg.write_text(json.dumps({"t_end": "long"}))
    assert cli.run(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 3


def test_runtime_error_exit_1(tmp_path, capsys):
    code = cli.run(["evaluate", "--kind", "esn", "--model", str(tmp_path / "missing.json"),
                    "--dataset", str(tmp_path / "nothing" / "manifest.json"), "--out", str(tmp_path)])
    assert code == 1
    assert error_line(capsys)["exit_code"] == 1


def test_simulate_figure8_periodic(tmp_path):
    T = fixtures.FIGURE8_PERIOD
    code = cli.run(["simulate", "--t-end", repr(T), "--sample-interval", repr(T / 100),
                    "--converged", "--quiet", "--out", str(tmp_path)])
    assert code == 0
    traj = ds.read_trajectory(tmp_path / "runs" / "simulate" / "trajectory.csv")
    assert len(traj) == 101
    start = fixtures.figure8()
    assert np.abs(traj.positions[-1] - start.positions).max() < 1e-3
    assert np.abs(traj.velocities[-1] - start.velocities).max() < 1e-3
    assert (tmp_path / "runs" / "simulate" / "trajectory.svg").exists()
    records = list((tmp_path / "runs").glob("*-simulate.json"))
    rec = json.loads(records[0].read_text())
    assert rec["resolved"]["converged"] is True and rec["seeds"]["base_seed"] == 0
    assert "tribody" in rec["versions"]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"t_end": 0.5, "sample_interval": 0.25, "method": "rk4", "step": 0.01}))
    assert cli.run(["simulate", "--config", str(cfg), "--t-end", "1.0", "--quiet", "--out", str(tmp_path)]) == 0
    traj = ds.read_trajectory(tmp_path / "runs" / "simulate" / "trajectory.csv")
    assert traj.times[-1] == pytest.approx(1.0) and len(traj) == 5


def test_pipeline_and_determinism(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert cli.run(["generate", "--n-train", "3", "--n-test", "2", "--steps", "30",
                        "--quiet", "--out", str(out)]) == 0
        assert cli.run(["train", "esn", "--reservoir-size", "40", "--washout", "5",
                        "--quiet", "--out", str(out)]) == 0
        assert cli.run(["evaluate", "--kind", "esn", "--warmup", "5", "--resamples", "100",
                        "--no-lyapunov", "--quiet", "--out", str(out)]) == 0
    assert (out_a / "dataset" / "manifest.json").exists()
    assert (out_a / "models" / "esn-general-2d.json").exists()
    for rel in ("dataset/manifest.json", "models/esn-general-2d.json", "reports/esn/report.json",
                "reports/esn/trajectories.csv", "reports/esn/summary.svg"):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel
    report = json.loads((out_a / "reports" / "esn" / "report.json").read_text())
    assert set(report["aggregate"]["horizon_ci"]) == {"0.9", "0.95", "0.98"}


def test_train_recipe_dimension_check(tmp_path, capsys):
    assert cli.run(["generate", "--n-train", "2", "--n-test", "1", "--steps", "25",
                    "--quiet", "--out", str(tmp_path)]) == 0
    assert cli.run(["train", "esn", "--recipe", "general-3d", "--quiet", "--out", str(tmp_path)]) == 3


def test_train_periodic_recipe(tmp_path):
    assert cli.run(["train", "hnn", "--recipe", "periodic", "--epochs", "5", "--hidden", "8,8",
                    "--quiet", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "models" / "hnn-periodic.json").exists()


def test_lyapunov_prints_json(tmp_path, capsys):
    assert cli.run(["lyapunov", "--horizon", "20", "--out", str(tmp_path), "--quiet"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["lambda_max"] < 0.5


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "tribody", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tribody" in proc.stdout


def test_init_model_chains_periodic_into_general(tmp_path):
    out = str(tmp_path)
    assert cli.run(["generate", "--n-train", "2", "--n-test", "1", "--steps", "25", "--quiet", "--out", out]) == 0
    assert cli.run(["train", "lstm", "--recipe", "periodic", "--epochs", "3", "--hidden-size", "8",
                    "--quiet", "--out", out]) == 0
    assert cli.run(["train", "lstm", "--epochs", "2", "--hidden-size", "8", "--quiet", "--out", out,
                    "--init-model", str(tmp_path / "models" / "lstm-periodic.json")]) == 0
    from tribody import lstm
    model = lstm.load_model(tmp_path / "models" / "lstm-general-2d.json")
    assert len(model.history) == 1 + 3 + 2
    assert cli.run(["train", "esn", "--recipe", "periodic", "--reservoir-size", "30", "--washout", "5",
                    "--quiet", "--out", out]) == 0
    assert cli.run(["train", "esn", "--quiet", "--out", out, "--washout", "5",
                    "--init-model", str(tmp_path / "models" / "esn-periodic.json")]) == 0
    from tribody import esn
    a = esn.load_model(tmp_path / "models" / "esn-periodic.json")
    b = esn.load_model(tmp_path / "models" / "esn-general-2d.json")
    assert np.array_equal(a.W, b.W) and not np.array_equal(a.W_out, b.W_out)
