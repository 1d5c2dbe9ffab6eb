import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gaitmpc.cli import main
from gaitmpc.config import ExperimentConfig


@pytest.fixture()
def tiny_config(tmp_path):
    cfg = ExperimentConfig().replaced(
        episode_seconds=0.9,
        initial_phases=[0.0, np.pi, np.pi, 0.0],
        cem={"horizon": 12, "iterations": 2, "population": 24, "elite_frac": 0.25},
        training={"n": 5, "epochs": 4, "batch_size": 64},
        schedule={"episodes": 4, "episodes_per_update": 2, "warmup_episodes": 2},
    )
    path = tmp_path / "tiny.json"
    cfg.save(path)
    return path


def test_learn_eval_report_roundtrip(tiny_config, tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert main(["learn", "--config", str(tiny_config), "--out", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert str(run_dir) in out
    assert (run_dir / "manifest.json").exists()
    assert (run_dir / "model.ckpt").exists()
    assert (run_dir / "buffer.traj").exists()

    assert main(["eval", str(run_dir), "--task", "backward", "--episodes", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["kind"] == "backward"
    assert (run_dir / "eval_backward.json").exists()

    assert main(["report", str(run_dir)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert any("report_speed_tracking" in line for line in printed)
    assert any("report_gait" in line for line in printed)


def test_learn_is_reproducible_from_config(tiny_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["learn", "--config", str(tiny_config), "--out", str(a)]) == 0
    assert main(["learn", "--config", str(tiny_config), "--out", str(b)]) == 0
    assert (a / "returns.csv").read_bytes() == (b / "returns.csv").read_bytes()
    assert (a / "buffer.traj").read_bytes() == (b / "buffer.traj").read_bytes()
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()


def test_warmup_only_schedule_is_valid(tmp_path):
    cfg = ExperimentConfig().replaced(
        episode_seconds=0.6,
        training={"n": 3, "epochs": 2},
        schedule={"episodes": 2, "episodes_per_update": 1, "warmup_episodes": 2},
    )
    p = tmp_path / "warmup.json"
    cfg.save(p)
    run_dir = tmp_path / "run"
    assert main(["learn", "--config", str(p), "--out", str(run_dir)]) == 0
    with open(run_dir / "returns.csv") as f:
        f.readline()
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert all(r["kind"] == "warmup" for r in rows)
    assert len(list((run_dir / "checkpoints").glob("*.ckpt"))) == 1  # initial fit only


def test_bad_config_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"cem": {"population": -3}}')
    assert main(["learn", "--config", str(p), "--out", str(tmp_path / "x")]) == 1
    assert "config error" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path):
    assert main(["learn", "--config", str(tmp_path / "nope.json")]) == 1


def test_eval_missing_run_exits_2(tmp_path):
    assert main(["eval", str(tmp_path / "norun")]) == 2


def test_report_empty_dir_exits_2(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty)]) == 2


def test_episode_log_format(tiny_config, tmp_path):
    run_dir = tmp_path / "run"
    main(["learn", "--config", str(tiny_config), "--out", str(run_dir)])
    log_path = run_dir / "logs" / "episode_002.csv"
    with open(log_path) as f:
        version = f.readline()
        assert version.startswith("# gaitmpc-run-log")
        rows = list(csv.DictReader(f))
    assert len(rows) == 150   # 0.9 s at 6 ms
    row = rows[0]
    for col in ("step", "vx", "yaw", "phase_FL", "a_swing_FL", "a_omega_BR",
                "reward", "plan_seq", "replan"):
        assert col in row
    # one row per control step, consecutive
    assert [int(r["step"]) for r in rows] == list(range(150))
    # replan flag set on the replan grid
    assert row["replan"] == "1"
    # planner diagnostics emitted for MPC episodes
    assert (run_dir / "logs" / "planner_002.csv").exists()


def test_ablate_cli_smoke(tmp_path):
    cfg = ExperimentConfig().replaced(
        episode_seconds=0.6,
        cem={"horizon": 10, "iterations": 2, "population": 16, "elite_frac": 0.25},
        training={"n": 3, "epochs": 3},
        schedule={"episodes": 3, "episodes_per_update": 2, "warmup_episodes": 1},
    )
    p = tmp_path / "cfg.json"
    cfg.save(p)
    out = tmp_path / "abl"
    assert main(["ablate", "async", "--config", str(p), "--out", str(out),
                 "--episodes-per-cell", "1"]) == 0
    table = out / "ablate_async.csv"
    assert table.exists()
    with open(table) as f:
        f.readline()
        rows = list(csv.DictReader(f))
    assert [r["value"] for r in rows] == ["on", "off"]
