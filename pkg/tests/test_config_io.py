import json

import numpy as np
import pytest

from latthresh.config import ConfigError, config_hash, load_config, parse_config
from latthresh.io import read_csv, write_csv, write_json


def test_defaults_and_grid():
    cfg = parse_config({"dim": 2, "k": {"grid": {"lo": -1, "hi": 1, "num": [3, 2]}}, "mu": [1, 2]})
    assert cfg.ks.shape == (6, 2) and cfg.mus == [1.0, 2.0]
    assert cfg.potential.values == {(0, 0): -1.0}
    assert cfg.eps.coeffs[(0, 0)] == 2.0


def test_tables_and_ranges():
    cfg = parse_config({
        "dim": 1,
        "dispersion": [{"s": [0], "value": 1.0}, {"s": [1], "value": -0.5}, {"s": [-1], "value": -0.5}],
        "potential": [{"x": [0], "value": -1.0}, {"x": [1], "value": -0.3}],
        "mu": {"start": 1.0, "stop": 2.0, "num": 3},
        "k": [[0.0], [1.0]],
    })
    assert cfg.mus == [1.0, 1.5, 2.0]
    assert cfg.potential.values[(-1,)] == -0.3
    assert cfg.ks.shape == (2, 1)


@pytest.mark.parametrize("raw,key", [
    ({"dim": 0}, "dim"),
    ({"dim": 1, "mu": -1.0}, "mu"),
    ({"dim": 1, "extra": 1}, "extra"),
    ({"dim": 1, "quadrature": {"tol": 0}}, "quadrature/tol"),
    ({"dim": 1, "potential": {"delta": 0.5}}, "potential"),
])
def test_schema_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert key.split("/")[0] in str(err.value)


def test_semantic_errors():
    with pytest.raises(ConfigError, match="components"):
        parse_config({"dim": 2, "k": [0.0]})
    with pytest.raises(ConfigError, match="non-positive"):
        parse_config({"dim": 1, "potential": [{"x": [0], "value": 1.0}]})
    with pytest.raises(ConfigError, match="missing key"):
        parse_config({"dim": 1, "potential": [{"value": -1.0}]})


def test_load_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(str(p))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.json"))


def test_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_csv_roundtrip(tmp_path):
    path = write_csv(str(tmp_path / "t.csv"), ["x", "y"], [[1, 0.1], [2, np.float64(1 / 3)]],
                     {"config_hash": "abc"})
    meta, header, rows = read_csv(path)
    assert meta["config_hash"] == "abc" and "version" in meta
    assert header == ["x", "y"] and float(rows[1][1]) == 1 / 3


def test_json_plain(tmp_path):
    path = write_json(str(tmp_path / "r.json"), {"a": np.arange(3), "b": np.float64(np.inf),
                                                 "c": np.bool_(True)})
    data = json.load(open(path))
    assert data == {"a": [0, 1, 2], "b": "inf", "c": True}
