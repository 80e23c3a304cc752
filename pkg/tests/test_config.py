import json

import pytest

from cogevo.config import Ablation, ConfigError, SimulationConfig, config_from_dict, load_config

BASE = {"item_bank_ref": "/tmp/b.json", "dataset_ref": "/tmp/t.jsonl"}


def test_defaults_fill_in():
    cfg = config_from_dict(BASE)
    assert cfg.concept_dim == 16 and cfg.master_seed == 0 and cfg.ablation == frozenset()
    assert cfg.hyper.lambda_pop == 8


def test_missing_field_named():
    with pytest.raises(ConfigError, match="dataset_ref"):
        config_from_dict({"item_bank_ref": "x"})


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({**BASE, "bogus": 1})
    with pytest.raises(ConfigError, match=r"hyper\.nope"):
        config_from_dict({**BASE, "hyper": {"nope": 1}})


def test_type_errors_name_the_path():
    with pytest.raises(ConfigError, match="concept_dim"):
        config_from_dict({**BASE, "concept_dim": "16"})
    with pytest.raises(ConfigError, match=r"hyper\.v\[2\]"):
        config_from_dict({**BASE, "hyper": {"v": [1, 1, "x", 1]}})
    with pytest.raises(ConfigError, match="ablation"):
        config_from_dict({**BASE, "ablation": ["no-brain"]})
    with pytest.raises(ConfigError, match="hyper"):
        config_from_dict({**BASE, "hyper": {"alpha_sem": 0.9}})


def test_relative_paths_resolve_against_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"item_bank_ref": "b.json", "dataset_ref": "t.jsonl", "ablation": ["no-icap"]}))
    cfg = load_config(p)
    assert cfg.item_bank_ref == str(tmp_path / "b.json")
    assert cfg.ablation == {Ablation.NO_ICAP}
    p.write_text("{oops")
    with pytest.raises(ConfigError):
        load_config(p)


def test_value_checks():
    with pytest.raises(ConfigError):
        SimulationConfig(jobs=0)
    with pytest.raises(ConfigError):
        SimulationConfig(generator_kind="remote")
    with pytest.raises(ConfigError):
        SimulationConfig(master_seed=-1)


def test_to_dict_round_trips():
    cfg = config_from_dict({**BASE, "ablation": ["no-evo-update"], "hyper": {"gamma": 2.0}})
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
