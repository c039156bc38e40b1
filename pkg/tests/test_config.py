import json
import os

import pytest

from dni_lab.config import apply_overrides, load_config, normalize, train_config_fields, validate_config
from dni_lab.errors import ConfigError

PRESET_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "experiment_configs")
THEORY_PRESETS = ("theorem1.json", "appendixA.json")


def _raw(**sections):
    raw = {"dataset": {"kind": "linear", "k": 2}, "network": {"hidden_layers": 2, "hidden_width": 8}}
    raw.update(sections)
    return raw


def _error(raw):
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    return info.value


def test_defaults():
    config = validate_config(_raw())
    assert config.experiment == "single"
    assert config.network.layer_dims == (2, 8, 8, 2)
    assert config.network.method == "backprop"
    assert config.training.iterations == 1000 and config.training.lr_main == 3e-5
    assert config.analysis.snapshots == (0, 100, 500, 1000)
    assert config.output_dir == "runs"


def test_unknown_key_reports_its_path():
    error = _error(_raw(network={"hidden_layers": 1, "hidden_width": 4, "sg_kindd": "linear"}))
    assert str(error) == "network.sg_kindd: unknown key"
    assert error.key_path == "network.sg_kindd"
    assert str(_error({"datasett": {}})) == "datasett: unknown key"


def test_bool_is_not_an_int():
    error = _error(_raw(training={"iterations": True}))
    assert error.key_path == "training.iterations"
    assert "got bool" in str(error)
    assert _error(_raw(training={"batch_size": "50"})).key_path == "training.batch_size"


def test_nulls_mean_defaults():
    config = validate_config(_raw(training={"iterations": None, "lr_main": 1}))
    assert config.training.iterations == 1000
    assert config.training.lr_main == 1.0


def test_overrides():
    raw = apply_overrides(_raw(), ["training.iterations=50", "network.method=sg", "network.sg_insertions=[1]",
                                   "analysis.probe_regress=true"])
    config = validate_config(raw)
    assert config.training.iterations == 50
    assert config.network.method == "sg" and config.network.insertion_points() == (1,)
    assert config.analysis.probe_regress is True
    with pytest.raises(ConfigError):
        apply_overrides(_raw(), ["training.iterations"])
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 1}, ["seed.inner=2"])


def test_hash_ignores_nulls_and_follows_seed():
    a = validate_config(_raw())
    b = validate_config(_raw(compare_with_backprop=None))
    c = validate_config(_raw(seed=4))
    assert a.config_hash == b.config_hash
    assert a.config_hash != c.config_hash
    assert c.run_name == f"{c.config_hash[:10]}_seed4"
    assert normalize({"a": None, "b": [{"c": None, "d": 1}]}) == {"b": [{"d": 1}]}


def test_layer_dims_must_fit_the_dataset():
    assert _error(_raw(network={"layer_dims": [3, 4, 2]})).key_path == "network.layer_dims"
    config = validate_config(_raw(network={"layer_dims": [2, 4, 2]}))
    assert config.network.layer_dims == (2, 4, 2)


def test_csv_datasets_need_a_path_and_layer_dims():
    assert _error({"dataset": {"kind": "csv"}}).key_path == "dataset.path"
    assert _error({"dataset": {"kind": "csv", "path": "x.csv"}, "network": {"hidden_layers": 1}}).key_path \
        == "network.layer_dims"


def test_network_validation_becomes_config_error():
    error = _error(_raw(network={"hidden_layers": 1, "hidden_width": 4, "method": "sg"}))
    assert error.key_path == "network"
    assert "needs at least one SG insertion" in str(error)


def test_experiment_specific_rules():
    assert _error(_raw(experiment="loss_surface")).key_path == "dataset.kind"
    assert _error({"experiment": "table3"}).key_path == "table3.cells"
    assert _error(_raw(experiment="table3", table3={"cells": [{"dataset": "linear", "k": 2}]})).key_path == "network"
    bad_cell = {"experiment": "table3", "table3": {"cells": [{"dataset": "linear", "k": 2, "depth": "medium"}]}}
    assert _error(bad_cell).key_path == "table3.cells[0].depth"
    sweep = {"experiment": "depth_sweep", "dataset": {"kind": "mnist"}, "network": {"hidden_layers": 3}}
    assert _error(sweep).key_path == "network.hidden_layers"


def test_range_checks():
    assert _error(_raw(dataset={"kind": "grid", "range": [1, -1]})).key_path == "dataset.range"
    assert _error(_raw(dataset={"kind": "linear", "test_fraction": 1.5})).key_path == "dataset.test_fraction"
    assert _error(_raw(training={"lr_main": 0})).key_path == "training"
    assert _error(_raw(experiment="replay")).key_path == "experiment"


def test_load_config_applies_flags(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(_raw()))
    config = load_config(str(path), ["training.batch_size=10"], seed=7, output_dir=str(tmp_path / "out"))
    assert config.seed == 7 and config.training.seed == 7
    assert config.training.batch_size == 10
    assert config.output_dir == str(tmp_path / "out")


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(OSError):
        load_config(str(tmp_path / "missing.json"))


@pytest.mark.parametrize("name", sorted(n for n in os.listdir(PRESET_DIR) if n not in THEORY_PRESETS))
def test_presets_validate(name):
    config = load_config(os.path.join(PRESET_DIR, name))
    assert config.experiment in ("single", "table3", "loss_surface", "depth_sweep")


def test_example_config_validates():
    config = load_config(os.path.join(os.path.dirname(PRESET_DIR), "config.example.json"))
    assert config.network.layer_dims == (2, 20, 20, 20, 20, 2)
    assert config.compare_with_backprop


def test_train_config_fields():
    assert "seed" not in train_config_fields()
    assert "iterations" in train_config_fields()
