import json
from pathlib import Path

import pytest

from kickmix.config import g_functions, load_config, parse_config
from kickmix.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_negative_dt_names_the_field():
    with pytest.raises(ConfigurationError) as err:
        parse_config({"experiment": "mixing", "solver": {"dt": -1}})
    assert "solver.dt" in str(err.value) and "-1" in str(err.value)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="colour"):
        parse_config({"experiment": "mixing", "colour": "blue"})
    with pytest.raises(ConfigurationError, match="experiment"):
        parse_config({"experiment": "plot"})


def test_too_many_kicks_rejected():
    with pytest.raises(ConfigurationError, match="exceed"):
        parse_config({"experiment": "run-kicked", "truncation": {"n_max": 2}, "kicks": {"n_kick": 9}})


def test_hash_is_stable_and_sensitive():
    a = parse_config({"experiment": "mixing", "seed": 1})
    b = parse_config({"seed": 1, "experiment": "mixing", "solver": {"nu": 0.5}})
    c = parse_config({"experiment": "mixing", "seed": 2})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    with pytest.raises(ConfigurationError, match="line 1"):
        load_config(bad)
    bad.write_text("[1]")
    with pytest.raises(ConfigurationError, match="object"):
        load_config(bad)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.model_dump(mode="json")["experiment"] == json.loads(path.read_text())["experiment"]


def test_g_functions():
    g, dg = g_functions(parse_config({"experiment": "mixing"}).force.g)
    assert g(3.0) == 1.0 and dg(3.0) == 0.0
    cfg = parse_config({"experiment": "mixing", "force": {"kind": "zonal_from_g", "g": {"type": "sine", "amplitude": 2}}})
    g, dg = g_functions(cfg.force.g)
    assert g(0.0) == 0.0 and dg(0.0) == 2.0
