"""Run configuration: a YAML document mapped onto validated dataclasses.

Example::

    data:
      path: demand.csv
      timestamp_column: timestamp
      value_column: load
    split: [0.7, 0.1, 0.2]
    window: {lookback: 336, horizon: 96, stride: 1}
    vmd: {num_modes: 4, alpha: 5661}      # or: vmd: auto
    search: {k_min: 2, k_max: 15, n_restarts: 20}
    model: {d_model: 64, tcn_channels: [32, 64, 64]}
    train: {batch_size: 64, lr: 0.001, max_epochs: 20, patience: 3}
    seeds: [2021, 2022, 2023, 2024, 2025]
    output_dir: runs/demand
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import ConfigError
from .search import SearchConfig, SearchSpace
from .training import TrainHyper
from .vmd import VmdConfig
from .windowing import WindowSpec

DEFAULT_SEEDS = (2021, 2022, 2023, 2024, 2025)


@dataclass(frozen=True)
class DataConfig:
    path: Optional[str] = None
    timestamp_column: str = "timestamp"
    value_column: str = "value"
    synthetic: Optional[dict] = None  # e.g. {kind: periodic, n: 20000, seed: 0}

    def __post_init__(self):
        if self.path is None and self.synthetic is None:
            raise ConfigError("data: set either 'path' (a CSV file) or 'synthetic'")


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 64
    tcn_channels: tuple = (32, 64, 64)
    kernel_size: int = 3
    dropout: float = 0.1
    use_freq_embed: bool = True
    parallel_decoding: bool = True
    use_vmd: bool = True
    extend_to_receptive_field: bool = True
    fusion_hidden: Optional[int] = None


@dataclass(frozen=True)
class SearchSection:
    k_min: int = 2
    k_max: int = 15
    alpha_min: float = 500.0
    alpha_max: float = 10000.0
    n_restarts: int = 20
    inner_grid_points: int = 5
    inner_refine_iters: int = 3
    ar_order: int = 2
    mi_bins: int = 16
    validate: bool = False  # score candidate pairs with a short training run
    validate_epochs: int = 2
    validate_batches: int = 20

    def space(self) -> SearchSpace:
        return SearchSpace(self.k_min, self.k_max, self.alpha_min, self.alpha_max)

    def config(self, seed: int, vmd: VmdConfig) -> SearchConfig:
        return SearchConfig(self.n_restarts, self.inner_grid_points, self.inner_refine_iters,
                            self.ar_order, self.mi_bins, seed, vmd)


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    window: WindowSpec
    vmd: Union[VmdConfig, str] = "auto"
    split: tuple = (0.7, 0.1, 0.2)
    eval_stride: int = 1
    search: SearchSection = field(default_factory=SearchSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainHyper = field(default_factory=TrainHyper)
    seeds: tuple = DEFAULT_SEEDS
    output_dir: str = "runs/default"
    workers: int = 1
    cache: bool = True

    @property
    def auto_vmd(self) -> bool:
        return isinstance(self.vmd, str)


def _build(cls, section: str, raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"'{section}' must be a mapping, got {type(raw).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in '{section}'; allowed: {sorted(names)}")
    try:
        return cls(**raw)
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    """Validate a parsed document and build a :class:`RunConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    allowed = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}")
    if "data" not in doc or "window" not in doc:
        raise ConfigError("config needs both a 'data' and a 'window' section")
    kwargs = {
        "data": _build(DataConfig, "data", doc["data"]),
        "window": _build(WindowSpec, "window", doc["window"]),
    }
    if kwargs["window"].lookback < 8:
        raise ConfigError(f"window.lookback must be >= 8 for decomposition, got {kwargs['window'].lookback}")
    vmd = doc.get("vmd", "auto")
    if isinstance(vmd, str):
        if vmd != "auto":
            raise ConfigError(f"vmd must be a mapping or the string 'auto', got {vmd!r}")
        kwargs["vmd"] = "auto"
    else:
        kwargs["vmd"] = _build(VmdConfig, "vmd", vmd)
    if "split" in doc:
        split = doc["split"]
        if not isinstance(split, (list, tuple)) or len(split) != 3:
            raise ConfigError(f"split must be a list of 3 fractions, got {split!r}")
        split = tuple(float(s) for s in split)
        if any(s <= 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {list(split)}")
        kwargs["split"] = split
    if "search" in doc:
        kwargs["search"] = _build(SearchSection, "search", doc["search"])
        kwargs["search"].space()  # validates bounds
    if "model" in doc:
        kwargs["model"] = _build(ModelSection, "model", doc["model"])
    if "train" in doc:
        kwargs["train"] = _build(TrainHyper, "train", doc["train"])
    if "seeds" in doc:
        seeds = doc["seeds"]
        if isinstance(seeds, int):
            seeds = [seeds]
        if not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError(f"seeds must be a non-empty list of integers, got {seeds!r}")
        kwargs["seeds"] = tuple(seeds)
    for key in ("eval_stride", "workers"):
        if key in doc:
            if not isinstance(doc[key], int) or doc[key] < 1:
                raise ConfigError(f"{key} must be a positive integer, got {doc[key]!r}")
            kwargs[key] = doc[key]
    if "output_dir" in doc:
        kwargs["output_dir"] = str(doc["output_dir"])
    if "cache" in doc:
        kwargs["cache"] = bool(doc["cache"])
    return RunConfig(**kwargs)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return from_dict(doc or {})


def to_dict(cfg: RunConfig) -> dict:
    """Plain-data view of a config (round-trips through :func:`from_dict`)."""
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj
    return plain(cfg)


def override(cfg: RunConfig, **changes) -> RunConfig:
    """Apply dotted overrides such as ``{"train.max_epochs": 5}``."""
    doc = to_dict(cfg)
    for key, value in changes.items():
        if value is None:
            continue
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return from_dict(doc)
