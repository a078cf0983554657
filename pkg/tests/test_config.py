import json

import pytest

from sdmcl import config
from sdmcl.errors import ConfigError

MINIMAL = {"model": {"kind": "sdmlp"}, "optimizer": {"kind": "sgd", "lr": 0.1}, "tasks": {"epochs_per_task": 5}}


def test_defaults_fill_in():
    cfg = config.resolve(MINIMAL)
    assert cfg["model"]["r"] == 1000
    assert cfg["model"]["k_max"] == 1000
    assert cfg["tasks"]["classes_per_task"] == 2
    assert cfg["tasks"]["epochs_per_task"] == 5
    assert cfg["training"]["batch_size"] == 128


def test_other_model_kind_drops_sdmlp_defaults():
    cfg = config.resolve({**MINIMAL, "model": {"kind": "relu"}})
    assert cfg["model"] == {"kind": "relu", "r": 1000}


def test_dotted_overrides():
    cfg = config.resolve(MINIMAL, {"model.k_target": 3, "regularizer.method": "ewc", "tasks.seeds": [4, 5]})
    assert cfg["model"]["k_target"] == 3
    assert cfg["regularizer"]["method"] == "ewc"
    assert cfg["tasks"]["seeds"] == [4, 5]


@pytest.mark.parametrize(
    "doc",
    [
        {**MINIMAL, "extra": 1},
        {**MINIMAL, "model": {"kind": "sdmlp", "width": 3}},
        {**MINIMAL, "model": {"kind": "transformer"}},
        {**MINIMAL, "optimizer": {"kind": "sgd", "lr": -1}},
        {**MINIMAL, "model": {"kind": "sdmlp", "r": 4, "k_target": 5}},
        {"model": {"kind": "sdmlp"}},
        [],
    ],
)
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        config.resolve(doc)


def test_invalid_override_rejected():
    with pytest.raises(ConfigError):
        config.resolve(MINIMAL, {"model.mode": "bogus"})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        config.load(bad)


def test_dumps_round_trip(tmp_path):
    cfg = config.resolve(MINIMAL)
    path = tmp_path / "c.json"
    path.write_text(config.dumps(cfg))
    assert config.load(path) == cfg
    assert json.loads(config.dumps(cfg)) == cfg
