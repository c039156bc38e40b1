#!/usr/bin/env python3
"""
Experiment Configuration
Loads a JSON experiment config, applies flag overrides and validates it before any work starts

Unknown keys, wrong types and out-of-range values raise ConfigError carrying the key path.
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

from dni_lab.data import GENERATORS
from dni_lab.errors import ConfigError, ValidationError
from dni_lab.trainer import NetworkSpec, Table3Cell, TrainConfig

logger = logging.getLogger(__name__)

EXPERIMENTS = ("single", "table3", "loss_surface", "depth_sweep")
DATASET_KINDS = tuple(GENERATORS) + ("grid", "mnist", "csv")
KNOWN_DIMS = {"grid": (2, 2), "mnist": (784, 10)}

# key -> accepted types; None is accepted everywhere and means "use the default"
SCHEMA = {
    "": {"experiment": (str,), "description": (str,), "seed": (int,), "output_dir": (str,),
         "compare_with_backprop": (bool,), "dataset": (dict,), "network": (dict,), "training": (dict,),
         "analysis": (dict,), "table3": (dict,), "depth_sweep": (dict,)},
    "dataset": {"kind": (str,), "k": (int,), "n_points": (int,), "resolution": (int,), "range": (list,),
                "labeler": (str,), "subset": (int,), "data_dir": (str,), "path": (str,),
                "test_fraction": (float, int)},
    "network": {"layer_dims": (list,), "hidden_layers": (int,), "hidden_width": (int,), "activation": (str,),
                "batchnorm": (bool,), "loss": (str,), "sg_insertions": (str, list), "sg_kind": (str,),
                "method": (str,), "sgprop_alpha": (float, int), "fixed_init": (str,), "block_order": (str,)},
    "training": {"iterations": (int,), "batch_size": (int,), "lr_main": (float, int), "lr_sg": (float, int),
                 "l2_penalty": (float, int), "eps_tracking_monitor": (bool,), "log_every": (int,),
                 "checkpoint_every": (int,), "grad_tol": (float, int)},
    "analysis": {"snapshots": (list,), "rdm_samples": (int,), "probe_steps": (int,), "probe_lr": (float, int),
                 "probe_regress": (bool,), "probe_batch_size": (int,)},
    "table3": {"cells": (list,), "replicates": (int,), "hidden_width": (int,), "sg_kind": (str,)},
    "depth_sweep": {"depths": (list,), "hidden_width": (int,)},
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "linear"
    k: int = 2
    n_points: Optional[int] = None
    resolution: int = 20
    range: Tuple[float, float] = (-2.0, 2.0)
    labeler: str = "linear_with_noise"
    subset: Optional[int] = None
    data_dir: Optional[str] = None
    path: Optional[str] = None
    test_fraction: Optional[float] = None

    def dims(self) -> Optional[Tuple[int, int]]:
        """(input, output) sizes when known without reading data"""
        if self.kind in GENERATORS:
            return self.k, 2
        return KNOWN_DIMS.get(self.kind)


@dataclass(frozen=True)
class AnalysisToggles:
    snapshots: Tuple[int, ...] = (0, 100, 500, 1000)
    rdm_samples: int = 400
    probe_steps: int = 2000
    probe_lr: float = 1e-3
    probe_regress: bool = False
    probe_batch_size: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: str
    dataset: DatasetSpec
    network: Optional[NetworkSpec]
    training: TrainConfig
    analysis: AnalysisToggles
    compare_with_backprop: bool = False
    table3_cells: Tuple[Table3Cell, ...] = ()
    table3_replicates: int = 10
    table3_hidden_width: int = 20
    table3_sg_kind: str = "linear"
    depths: Tuple[int, ...] = (3, 5, 10, 20)
    depth_hidden_width: int = 512
    normalized: Dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.normalized, sort_keys=True).encode("utf-8")).hexdigest()

    @property
    def run_name(self) -> str:
        return f"{self.config_hash[:10]}_seed{self.seed}"


def _type_name(types) -> str:
    return " or ".join(t.__name__ for t in types)


def _check_section(path: str, section: Dict) -> None:
    allowed = SCHEMA[path]
    for key, value in section.items():
        key_path = f"{path}.{key}" if path else key
        if key not in allowed:
            raise ConfigError(key_path, "unknown key")
        if value is None:
            continue
        types = allowed[key]
        # bool is an int subclass; keep them apart
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(key_path, f"expected {_type_name(types)}, got bool")
        if not isinstance(value, types):
            raise ConfigError(key_path, f"expected {_type_name(types)}, got {type(value).__name__}")
        if dict in types:
            _check_section(key, value)


def _set_path(raw: Dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, f"'{part}' is not a section")
    node[parts[-1]] = value


def apply_overrides(raw: Dict, overrides: Sequence[str]) -> Dict:
    """Apply 'a.b=value' overrides; values are parsed as JSON, falling back to plain strings"""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        _set_path(raw, key.strip(), value)
    return raw


def _positive(key_path: str, value, allow_zero: bool = False) -> None:
    if value is not None and (value < 0 or (value == 0 and not allow_zero)):
        raise ConfigError(key_path, f"must be {'>= 0' if allow_zero else '> 0'}, got {value}")


def _build_dataset(section: Dict) -> DatasetSpec:
    spec = DatasetSpec(**{k: v for k, v in section.items() if v is not None and k != "range"},
                       **({"range": tuple(float(v) for v in section["range"])} if section.get("range") else {}))
    if spec.kind not in DATASET_KINDS:
        raise ConfigError("dataset.kind", f"must be one of {list(DATASET_KINDS)}, got {spec.kind!r}")
    _positive("dataset.k", spec.k)
    _positive("dataset.n_points", spec.n_points)
    _positive("dataset.subset", spec.subset)
    if spec.resolution < 2:
        raise ConfigError("dataset.resolution", "must be >= 2")
    if len(spec.range) != 2 or not spec.range[0] < spec.range[1]:
        raise ConfigError("dataset.range", "must be [lo, hi] with lo < hi")
    if spec.labeler not in ("linear_with_noise", "random"):
        raise ConfigError("dataset.labeler", f"unsupported labeler {spec.labeler!r}")
    if spec.kind == "csv" and not spec.path:
        raise ConfigError("dataset.path", "required for csv datasets")
    if spec.test_fraction is not None and not 0.0 < spec.test_fraction < 1.0:
        raise ConfigError("dataset.test_fraction", "must lie in (0, 1)")
    return spec


def _build_network(section: Dict, dataset: DatasetSpec) -> NetworkSpec:
    section = dict(section)
    layer_dims = section.pop("layer_dims", None)
    hidden_layers = section.pop("hidden_layers", None)
    hidden_width = section.pop("hidden_width", None)
    dims = dataset.dims()
    if layer_dims is None:
        if dims is None:
            raise ConfigError("network.layer_dims", f"required for {dataset.kind} datasets")
        if hidden_layers is None:
            raise ConfigError("network.hidden_layers", "give layer_dims or hidden_layers/hidden_width")
        if hidden_layers > 0 and not hidden_width:
            raise ConfigError("network.hidden_width", "required when hidden_layers > 0")
        layer_dims = [dims[0]] + [hidden_width] * hidden_layers + [dims[1]]
    elif not all(isinstance(d, int) and not isinstance(d, bool) for d in layer_dims):
        raise ConfigError("network.layer_dims", "must be a list of integers")
    elif dims is not None and (layer_dims[0], layer_dims[-1]) != dims:
        raise ConfigError("network.layer_dims", f"must start with {dims[0]} and end with {dims[1]} "
                                                f"for {dataset.kind} data")
    kwargs = {k: v for k, v in section.items() if v is not None}
    try:
        return NetworkSpec(tuple(layer_dims), **kwargs).validate()
    except ValidationError as e:
        raise ConfigError("network", str(e)) from e


def _build_sweep_base(section: Dict) -> NetworkSpec:
    """Depth sweeps set layer_dims, method and insertions per run; the rest comes from the config"""
    fixed = {"layer_dims", "hidden_layers", "hidden_width", "method", "sg_insertions"}
    present = sorted(k for k in fixed & set(section) if section[k] is not None)
    if present:
        raise ConfigError(f"network.{present[0]}", "set by the depth sweep; use depth_sweep.depths/hidden_width")
    kwargs = {k: v for k, v in section.items() if v is not None}
    try:
        return NetworkSpec((1, 1), **kwargs).validate()
    except ValidationError as e:
        raise ConfigError("network", str(e)) from e


def _build_training(section: Dict, seed: int) -> TrainConfig:
    kwargs = {k: v for k, v in section.items() if v is not None}
    for key in ("lr_main", "lr_sg", "l2_penalty", "grad_tol"):
        if key in kwargs:
            kwargs[key] = float(kwargs[key])
    try:
        return TrainConfig(seed=seed, **kwargs).validate()
    except ValidationError as e:
        raise ConfigError("training", str(e)) from e


def _build_cells(cells: List) -> Tuple[Table3Cell, ...]:
    built = []
    for i, cell in enumerate(cells):
        path = f"table3.cells[{i}]"
        if not isinstance(cell, dict) or set(cell) - {"dataset", "k", "depth", "loss"}:
            raise ConfigError(path, "cells take dataset, k, depth and loss")
        built_cell = Table3Cell(**cell)
        if built_cell.dataset not in GENERATORS:
            raise ConfigError(f"{path}.dataset", f"must be one of {list(GENERATORS)}")
        if built_cell.depth not in ("shallow", "deep"):
            raise ConfigError(f"{path}.depth", "must be shallow or deep")
        if built_cell.loss not in ("mse", "logloss"):
            raise ConfigError(f"{path}.loss", "must be mse or logloss")
        built.append(built_cell)
    return tuple(built)


def validate_config(raw: Dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    _check_section("", raw)
    experiment = raw.get("experiment") or "single"
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {list(EXPERIMENTS)}, got {experiment!r}")
    seed = raw.get("seed") or 0
    dataset = _build_dataset(raw.get("dataset") or {})
    training = _build_training(raw.get("training") or {}, seed)
    analysis_raw = {k: v for k, v in (raw.get("analysis") or {}).items() if v is not None}
    if "snapshots" in analysis_raw:
        analysis_raw["snapshots"] = tuple(int(s) for s in analysis_raw["snapshots"])
    analysis = AnalysisToggles(**analysis_raw)
    if analysis.probe_steps < 1 or analysis.rdm_samples < 2:
        raise ConfigError("analysis", "probe_steps must be >= 1 and rdm_samples >= 2")

    network = None
    if experiment in ("single", "loss_surface"):
        network = _build_network(raw.get("network") or {}, dataset)
    elif experiment == "depth_sweep":
        network = _build_sweep_base(raw.get("network") or {})
    elif raw.get("network"):
        raise ConfigError("network", "table3 experiments build their own networks; use the table3 section")
    if experiment == "loss_surface" and dataset.kind != "grid":
        raise ConfigError("dataset.kind", "loss_surface experiments need a grid dataset")

    table3 = raw.get("table3") or {}
    depth = raw.get("depth_sweep") or {}
    cells = _build_cells(table3.get("cells") or [])
    if experiment == "table3" and not cells:
        raise ConfigError("table3.cells", "at least one cell is required")
    config = ExperimentConfig(
        experiment=experiment, seed=seed, output_dir=raw.get("output_dir") or "runs",
        dataset=dataset, network=network, training=training, analysis=analysis,
        compare_with_backprop=bool(raw.get("compare_with_backprop")),
        table3_cells=cells, table3_replicates=table3.get("replicates") or 10,
        table3_hidden_width=table3.get("hidden_width") or 20, table3_sg_kind=table3.get("sg_kind") or "linear",
        depths=tuple(depth.get("depths") or (3, 5, 10, 20)), depth_hidden_width=depth.get("hidden_width") or 512,
        normalized=normalize(raw),
    )
    logger.debug(f"Validated {experiment} config {config.run_name}")
    return config


def normalize(raw: Dict) -> Dict:
    """Drop nulls so equivalent configs hash alike"""
    if isinstance(raw, dict):
        return {k: normalize(v) for k, v in raw.items() if v is not None}
    if isinstance(raw, list):
        return [normalize(v) for v in raw]
    return raw


def load_config(path: str, overrides: Sequence[str] = (), seed: Optional[int] = None,
                output_dir: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise OSError(f"Could not read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("", f"{path} is not valid JSON: {e}") from e
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = output_dir
    return validate_config(raw)


def train_config_fields() -> List[str]:
    return [f.name for f in fields(TrainConfig) if f.name != "seed"]
