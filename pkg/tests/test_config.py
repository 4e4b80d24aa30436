import json

import pytest

from faceref.config import AppConfig, config_from_dict, load_config
from faceref.errors import InvalidArgumentError


def test_defaults_validate():
    config = AppConfig().validate()
    assert config.pool.c1 == 8 and config.pool.c2 == 4
    assert config.pool.delta == 0.5
    assert config.training.dropout_prob == 0.5
    assert config.degradation.sigma_range == (0.2, 10.0)
    assert config.degradation.r_range == (1, 16)
    assert config.degradation.delta_range == (0.0, 15.0)
    assert config.degradation.q_range == (30, 100)


def test_partial_override():
    config = config_from_dict({"model": {"channels": 16},
                               "pool": {"delta": 0.7}})
    assert config.model.channels == 16
    assert config.model.latent_scale == 4   # untouched default
    assert config.pool.delta == 0.7


def test_unknown_section_rejected():
    with pytest.raises(InvalidArgumentError, match="vae"):
        config_from_dict({"vae": {}})


def test_unknown_key_rejected():
    with pytest.raises(InvalidArgumentError, match="channles"):
        config_from_dict({"model": {"channles": 16}})


def test_invalid_value_rejected():
    with pytest.raises(InvalidArgumentError):
        config_from_dict({"metrics": {"ssim_window": 4}})


def test_json_round_trip(tmp_path):
    config = AppConfig().validate()
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config.to_json()))
    loaded = load_config(path)
    assert loaded.to_json() == config.to_json()


def test_lists_coerced_to_tuples(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"degradation": {"r_range": [2, 4]}}))
    config = load_config(path)
    assert config.degradation.r_range == (2, 4)
