"""Stages of a forecasting run: ingest, decompose, search, train, evaluate, predict.

Every stage writes its outputs under ``<output_dir>``::

    cache/                      decomposed windows (binary, checksummed)
    search/seed<S>/trace.jsonl  one record per criteria evaluation
    search/seed<S>/result.json  chosen (K, alpha) and per-K tables
    <variant>/seed<S>/model.ckpt, history.json, metrics.json
    <variant>/summary.json      per-seed metrics plus mean and sample std
    ablation.json, ablation.txt side-by-side variant table
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import config as config_mod
from . import synthetic
from .config import RunConfig
from .errors import (ConfigError, DataError, EmptyFile, MissingColumn,
                     NonMonotonicTimestamps, VmdNetError)
from .model import ModelConfig, VmdNet
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .search import SearchResult, stackelberg_search
from .signal import Signal
from .training import TrainHyper, dataset_mse, evaluate, train
from .vmd import VmdConfig
from .windowing import (DecomposedDataset, NormStats, WindowSpec, decompose_windows,
                        decompose_windows_cached, make_windows, split_and_normalize)

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_vmd", "no_freq", "no_parallel", "fixed_params")
# Pair used by the fixed_params variant.
DEFAULT_PAIR = (4, 5661.0)


# ---------------------------------------------------------------------------
# ingestion


def ingest(data_path, timestamp_column: str = "timestamp", value_column: str = "value") -> Signal:
    """Read a comma-separated file with a header row into a :class:`Signal`.

    Timestamps must be strictly increasing; the sampling step is taken from
    the first two rows.  Errors name the offending file line (1-based,
    header is line 1).
    """
    path = Path(data_path)
    if not path.exists():
        raise DataError(f"data file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path} is empty")
        header = [h.strip() for h in header]
        for col in (timestamp_column, value_column):
            if col not in header:
                raise MissingColumn(f"{path}: column {col!r} not found; available: {header}")
        ti, vi = header.index(timestamp_column), header.index(value_column)
        stamps, values = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                stamp = np.datetime64(row[ti].strip(), "s")
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path} line {line_no}: unparseable timestamp: {exc}") from exc
            try:
                value = float(row[vi])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path} line {line_no}: unparseable value {row[vi:vi + 1]}") from exc
            if not math.isfinite(value):
                raise DataError(f"{path} line {line_no}: non-finite value {value}")
            if stamps and stamp <= stamps[-1]:
                raise NonMonotonicTimestamps(
                    f"{path} line {line_no}: timestamp {row[ti].strip()} does not increase")
            stamps.append(stamp)
            values.append(value)
    if not values:
        raise EmptyFile(f"{path} has a header but no data rows")
    step = stamps[1] - stamps[0] if len(stamps) > 1 else np.timedelta64(3600, "s")
    return Signal(np.array(values), start=stamps[0], step=step)


def load_series(cfg: RunConfig) -> Signal:
    d = cfg.data
    if d.path is not None:
        return ingest(d.path, d.timestamp_column, d.value_column)
    spec = dict(d.synthetic)
    kind = spec.pop("kind", "periodic")
    if kind != "periodic":
        raise ConfigError(f"data.synthetic.kind must be 'periodic', got {kind!r}")
    return synthetic.periodic_series(**spec)


# ---------------------------------------------------------------------------
# data preparation


class SplitAccessLog:
    """Records which stage read which split; used to audit test-set access."""

    def __init__(self):
        self.events = []

    def record(self, split: str, stage: str):
        self.events.append((split, stage))

    def reads(self, split: str):
        return [stage for s, stage in self.events if s == split]


@dataclass
class Prepared:
    """Normalized splits.  Read them through :meth:`get` so access is logged."""

    train: Signal
    val: Signal
    test: Signal
    stats: NormStats
    log: SplitAccessLog = field(default_factory=SplitAccessLog)

    def get(self, split: str, stage: str) -> Signal:
        self.log.record(split, stage)
        return getattr(self, split)


def prepare(cfg: RunConfig, series: Optional[Signal] = None) -> Prepared:
    series = load_series(cfg) if series is None else series
    spec = cfg.window
    train_s, val_s, test_s, stats = split_and_normalize(series, cfg.split, spec.lookback + spec.horizon)
    return Prepared(train_s, val_s, test_s, stats)


def _spec(cfg: RunConfig, split: str) -> WindowSpec:
    stride = cfg.window.stride if split == "train" else cfg.eval_stride
    return WindowSpec(cfg.window.lookback, cfg.window.horizon, stride)


def raw_dataset(signal: Signal, spec: WindowSpec, stats=None) -> DecomposedDataset:
    """Undecomposed windows as a one-mode dataset (input of the no_vmd variant)."""
    ds = make_windows(signal, spec)
    return DecomposedDataset(U=ds.X[:, None, :].copy(), Omega=np.zeros((len(ds), 1)), Y=ds.Y,
                             vmd_config=None, norm_stats=stats, time_features=ds.time_features,
                             endpoints=ds.endpoints)


def build_dataset(cfg: RunConfig, signal: Signal, split: str, vmd: Optional[VmdConfig],
                  stats: NormStats) -> DecomposedDataset:
    spec = _spec(cfg, split)
    if vmd is None:
        return raw_dataset(signal, spec, stats)
    ds = make_windows(signal, spec)
    cache_dir = Path(cfg.output_dir) / "cache" if cfg.cache else None
    return decompose_windows_cached(ds, vmd, cache_dir, cfg.workers, stats, tag=f"{split}_")


# ---------------------------------------------------------------------------
# search


def base_vmd(cfg: RunConfig) -> VmdConfig:
    return VmdConfig() if cfg.auto_vmd else cfg.vmd


def search_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.output_dir) / "search" / f"seed{seed}"


def run_search(cfg: RunConfig, prepared: Prepared, seed: int) -> SearchResult:
    """Leader/follower search on the training split; writes trace and result files."""
    out = search_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    trace = out / "trace.jsonl"
    if trace.exists():
        trace.unlink()
    train_s = prepared.get("train", "search")
    evaluator = None
    if cfg.search.validate:
        val_s = prepared.get("val", "search")

        def evaluator(pair):
            vmd = replace(base_vmd(cfg), num_modes=int(pair[0]), alpha=float(pair[1]))
            hyper = replace(cfg.train, max_epochs=cfg.search.validate_epochs,
                            max_batches_per_epoch=cfg.search.validate_batches, seed=seed)
            model = VmdNet(model_config(cfg, vmd.num_modes, "full", seed))
            tr = build_dataset(cfg, train_s, "train", vmd, prepared.stats)
            va = build_dataset(cfg, val_s, "val", vmd, prepared.stats)
            train(model, tr, va, hyper)
            return dataset_mse(model, va)

    scfg = cfg.search.config(seed, base_vmd(cfg))
    result = stackelberg_search(train_s.samples, evaluator, cfg.search.space(), scfg, trace_path=trace)
    result.write(out / "result.json")
    return result


def resolve_vmd(cfg: RunConfig, prepared: Prepared, seed: int, variant: str = "full") -> Optional[VmdConfig]:
    """VMD settings for one run; ``None`` for the undecomposed variant."""
    if variant == "no_vmd":
        return None
    if variant == "fixed_params":
        return replace(base_vmd(cfg), num_modes=DEFAULT_PAIR[0], alpha=DEFAULT_PAIR[1])
    if not cfg.auto_vmd:
        return cfg.vmd
    saved = search_dir(cfg, seed) / "result.json"
    result = SearchResult.read(saved) if saved.exists() else run_search(cfg, prepared, seed)
    return replace(base_vmd(cfg), num_modes=result.chosen_k, alpha=result.chosen_alpha)


# ---------------------------------------------------------------------------
# model, training, evaluation


def model_config(cfg: RunConfig, K: int, variant: str, seed: int) -> ModelConfig:
    m = cfg.model
    mc = ModelConfig(K=K, P=cfg.window.lookback, F=cfg.window.horizon, d_model=m.d_model,
                     tcn_channels=tuple(m.tcn_channels), kernel_size=m.kernel_size,
                     dropout=m.dropout, use_vmd=m.use_vmd, use_freq_embed=m.use_freq_embed,
                     parallel_decoding=m.parallel_decoding,
                     extend_to_receptive_field=m.extend_to_receptive_field,
                     fusion_hidden=m.fusion_hidden, rng_seed=seed)
    if variant == "no_vmd":
        return replace(mc, K=1, use_vmd=False)
    return mc.variant(variant)


def run_dir(cfg: RunConfig, variant: str, seed: int) -> Path:
    return Path(cfg.output_dir) / variant / f"seed{seed}"


def _json_dump(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def _vmd_record(vmd: Optional[VmdConfig]):
    return None if vmd is None else asdict(vmd)


def train_stage(cfg: RunConfig, prepared: Prepared, seed: int, variant: str = "full"):
    """Train one model and write its checkpoint; returns ``(model, history, vmd)``."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    vmd = resolve_vmd(cfg, prepared, seed, variant)
    K = 1 if vmd is None else vmd.num_modes
    model = VmdNet(model_config(cfg, K, variant, seed))
    tr = build_dataset(cfg, prepared.get("train", "train"), "train", vmd, prepared.stats)
    va = build_dataset(cfg, prepared.get("val", "train"), "val", vmd, prepared.stats)
    hyper = replace(cfg.train, seed=seed)
    model, history = train(model, tr, va, hyper)
    out = run_dir(cfg, variant, seed)
    meta = {"model": model.config.to_dict(), "vmd": _vmd_record(vmd), "variant": variant,
            "seed": seed, "norm_stats": asdict(prepared.stats),
            "window": asdict(cfg.window), "num_parameters": model.num_parameters()}
    save_checkpoint(out / "model.ckpt", model.params, meta)
    _json_dump(out / "history.json", history.to_dict())
    return model, history, vmd


def load_model(path):
    """Rebuild a model and its run metadata from a checkpoint."""
    params, meta = load_checkpoint(path)
    model = VmdNet(ModelConfig.from_dict(meta["model"]))
    model.params.load(params)
    return model, meta


def evaluate_stage(cfg: RunConfig, prepared: Prepared, model: VmdNet, vmd: Optional[VmdConfig],
                   seed: int, variant: str = "full") -> dict:
    """Score a trained model on the test split (the only reader of that split)."""
    test = build_dataset(cfg, prepared.get("test", "evaluate"), "test", vmd, prepared.stats)
    m = evaluate(model, test)
    std = prepared.stats.std
    m.update({"mse_original": m["mse"] * std ** 2, "mae_original": m["mae"] * std,
              "seed": seed, "variant": variant, "K": None if vmd is None else vmd.num_modes,
              "alpha": None if vmd is None else vmd.alpha, "n_windows": len(test),
              "num_parameters": model.num_parameters()})
    _json_dump(run_dir(cfg, variant, seed) / "metrics.json", m)
    return m


def run_seed(cfg: RunConfig, seed: int, variant: str = "full", prepared: Optional[Prepared] = None) -> dict:
    prepared = prepare(cfg) if prepared is None else prepared
    model, history, vmd = train_stage(cfg, prepared, seed, variant)
    metrics = evaluate_stage(cfg, prepared, model, vmd, seed, variant)
    metrics["best_epoch"] = history.best_epoch
    return metrics


def aggregate(values: Sequence[float]) -> dict:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(np.mean(v)), "std": std, "n": int(v.size)}


def summarize(per_seed: dict, failures: dict) -> dict:
    ok = [m for m in per_seed.values()]
    return {
        "per_seed": per_seed,
        "failures": failures,
        "successes": len(ok),
        "mse": aggregate([m["mse"] for m in ok]),
        "mae": aggregate([m["mae"] for m in ok]),
    }


def run_experiment(cfg: RunConfig, variant: str = "full", series: Optional[Signal] = None) -> dict:
    """Full pipeline once per seed; a failing seed is recorded, not fatal."""
    prepared = prepare(cfg, series)
    per_seed, failures = {}, {}
    for seed in cfg.seeds:
        try:
            per_seed[str(seed)] = run_seed(cfg, seed, variant, prepared)
        except VmdNetError as exc:
            logger.error("seed %s failed: %s", seed, exc)
            failures[str(seed)] = f"{type(exc).__name__}: {exc}"
    summary = summarize(per_seed, failures)
    summary["variant"] = variant
    _json_dump(Path(cfg.output_dir) / variant / "summary.json", summary)
    return summary


def run_ablation(cfg: RunConfig, variants: Sequence[str] = ("full", "no_vmd", "no_parallel"),
                 series: Optional[Signal] = None) -> dict:
    """Run each variant with the same seeds and write a comparison table."""
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
    series = load_series(cfg) if series is None else series
    table = {v: run_experiment(cfg, v, series) for v in variants}
    _json_dump(Path(cfg.output_dir) / "ablation.json", table)
    (Path(cfg.output_dir) / "ablation.txt").write_text(format_table(table))
    return table


def format_table(table: dict) -> str:
    seeds = sorted({s for t in table.values() for s in t["per_seed"]})
    head = ["variant", "mse mean", "mse std", "mae mean"] + [f"mse[{s}]" for s in seeds]
    rows = [head]
    for v, t in table.items():
        row = [v, _fmt(t["mse"]["mean"]), _fmt(t["mse"]["std"]), _fmt(t["mae"]["mean"])]
        row += [_fmt(t["per_seed"][s]["mse"]) if s in t["per_seed"] else "failed" for s in seeds]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def _fmt(x):
    return "-" if x is None else f"{x:.4f}"


# ---------------------------------------------------------------------------
# prediction


def predict_series(checkpoint, series: Signal) -> tuple:
    """Forecast the ``F`` steps after the end of ``series`` in original units.

    Returns ``(timestamps, values)``.
    """
    model, meta = load_model(checkpoint)
    mc = model.config
    stats = NormStats(**meta["norm_stats"])
    if series.length < mc.P:
        raise DataError(f"need at least {mc.P} samples to forecast, got {series.length}")
    tail = series.slice(series.length - mc.P, series.length)
    z = stats.apply(tail.samples)
    ds = make_windows(tail.with_samples(np.concatenate([z, np.zeros(mc.F)])),
                      WindowSpec(mc.P, mc.F, 1))
    if meta["vmd"] is None:
        U, Omega = ds.X[:, None, :], np.zeros((1, 1))
    else:
        dd = decompose_windows(ds, VmdConfig(**meta["vmd"]))
        U, Omega = dd.U, dd.Omega
    pred = model.predict(U, Omega, ds.time_features)[0]
    stamps = series.timestamps()[-1] + series.step * np.arange(1, mc.F + 1)
    return stamps, stats.invert(pred)
