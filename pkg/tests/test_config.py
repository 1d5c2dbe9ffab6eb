import json

import numpy as np
import pytest

from gaitmpc.config import ConfigError, ExperimentConfig


def test_roundtrip_through_json():
    cfg = ExperimentConfig()
    blob = json.dumps(cfg.to_dict())
    cfg2 = ExperimentConfig.from_dict(json.loads(blob))
    assert cfg2.to_dict() == cfg.to_dict()
    assert cfg2.config_hash() == cfg.config_hash()


def test_load_save(tmp_path):
    cfg = ExperimentConfig().replaced(master_seed=7, cem={"population": 64})
    path = tmp_path / "cfg.json"
    cfg.save(path)
    loaded = ExperimentConfig.load(path)
    assert loaded.master_seed == 7
    assert loaded.cem.population == 64


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        ExperimentConfig.from_dict({"master_sneed": 3})


def test_bad_section_rejected():
    with pytest.raises(ConfigError, match="cem"):
        ExperimentConfig.from_dict({"cem": {"population": 0}})
    with pytest.raises(ConfigError, match="cem"):
        ExperimentConfig.from_dict({"cem": {"unknown_field": 1}})


def test_bad_json_file(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        ExperimentConfig.load(p)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load("/nonexistent/config.json")


def test_replaced_merges_sections():
    cfg = ExperimentConfig()
    cfg2 = cfg.replaced(cem={"iterations": 3}, master_seed=5)
    assert cfg2.cem.iterations == 3
    assert cfg2.cem.population == cfg.cem.population
    assert cfg2.master_seed == 5
    assert cfg.cem.iterations != 3 or cfg.cem.iterations == cfg.cem.iterations


def test_plant_dt_follows_config_dt():
    cfg = ExperimentConfig.from_dict({"dt": 0.004})
    assert cfg.plant.dt == 0.004
    assert cfg.episode_steps == int(round(cfg.episode_seconds / 0.004))


def test_committed_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    desk = ExperimentConfig.load(root / "desk.json")
    paper = ExperimentConfig.load(root / "paper.json")
    assert desk.episode_steps == 1250
    assert paper.cem.population == 400 and paper.cem.horizon == 75
    assert paper.cem.iterations == 5
    assert paper.clock.replan_interval == 12   # 72 ms at 6 ms steps
    assert paper.training.n == 20
