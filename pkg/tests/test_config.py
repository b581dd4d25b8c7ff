import json

import pytest

from fedcil.config import ExperimentConfig, schema_text, validate_config
from fedcil.errors import ConfigError


def test_defaults_fill_in():
    cfg = validate_config({"synthetic": {"enabled": True}})
    assert cfg["seed"] == 0
    assert cfg["model"]["hidden_dims"] == [300, 300, 300]
    assert cfg["clear"]["buffer_capacity"] == 100
    assert cfg["federation"]["clients"] == 10
    assert cfg["train"]["lr"] == 0.01


def test_unknown_keys_rejected_at_any_level():
    with pytest.raises(ConfigError, match="unknown config keys"):
        validate_config({"sneed": 1})
    with pytest.raises(ConfigError, match="train"):
        validate_config({"train": {"lrr": 0.1}})


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError, match="seed"):
        validate_config({"seed": "seven"})
    with pytest.raises(ConfigError, match="hidden_dims"):
        validate_config({"model": {"hidden_dims": [300, "x"]}})


def test_number_fields_accept_ints():
    cfg = validate_config({"train": {"lr": 1}})
    assert cfg["train"]["lr"] == 1.0


def test_dataset_xor_synthetic(tmp_path):
    cfg = ExperimentConfig.from_dict({})
    with pytest.raises(ConfigError):
        cfg.uses_synthetic()
    both = ExperimentConfig.from_dict(
        {"synthetic": {"enabled": True}, "dataset": {"flow_csv": "x.csv"}})
    with pytest.raises(ConfigError):
        both.uses_synthetic()


def test_load_applies_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "synthetic": {"enabled": True}}))
    cfg = ExperimentConfig.load(path, overrides={"seed": 9, "output.dir": "elsewhere"})
    assert cfg.seed == 9
    assert cfg.raw["output"]["dir"] == "elsewhere"


def test_schema_text_lists_every_leaf():
    text = schema_text()
    for key in ("seed:", "dataset.flow_csv", "federation.local_iterations",
                "clear.replay_fraction", "output.dir"):
        assert key in text


def test_invalid_json_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)
