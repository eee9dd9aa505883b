"""Command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import pipeline
from .errors import ConfigError, DataError, NumericalError, ShapeMismatch, VmdNetError
from .nn.checkpoint import CheckpointError
from .windowing import CacheError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

# flag -> dotted config key
OVERRIDES = {
    "data": "data.path",
    "output_dir": "output_dir",
    "lookback": "window.lookback",
    "horizon": "window.horizon",
    "stride": "window.stride",
    "eval_stride": "eval_stride",
    "num_modes": "vmd.num_modes",
    "alpha": "vmd.alpha",
    "max_epochs": "train.max_epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "patience": "train.patience",
    "n_restarts": "search.n_restarts",
    "workers": "workers",
}


def _add_common(p, seeds=True):
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--data", help="CSV file (overrides data.path)")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--eval-stride", dest="eval_stride", type=int)
    p.add_argument("--num-modes", dest="num_modes", type=int, help="fixed K (disables search)")
    p.add_argument("--alpha", type=float, help="fixed alpha (disables search)")
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--n-restarts", dest="n_restarts", type=int)
    p.add_argument("--workers", type=int)
    if seeds:
        p.add_argument("--seeds", type=int, nargs="+", help="overrides the seeds list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmdnet", description="VMD-based forecasting pipeline")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose train/val/test windows into the cache")
    _add_common(p)

    p = sub.add_parser("search", help="select (K, alpha) on the training split")
    _add_common(p)

    p = sub.add_parser("train", help="train one model per seed and write checkpoints")
    _add_common(p)
    p.add_argument("--variant", default="full", choices=pipeline.VARIANTS)

    p = sub.add_parser("evaluate", help="score trained checkpoints on the test split")
    _add_common(p)
    p.add_argument("--variant", default="full", choices=pipeline.VARIANTS)

    p = sub.add_parser("run", help="train and evaluate every seed, then aggregate")
    _add_common(p)
    p.add_argument("--variant", default="full", choices=pipeline.VARIANTS)

    p = sub.add_parser("ablate", help="compare model variants over shared seeds")
    _add_common(p)
    p.add_argument("--variants", nargs="+", default=["full", "no_vmd", "no_parallel"],
                   choices=pipeline.VARIANTS)

    p = sub.add_parser("predict", help="forecast the steps after the end of a CSV series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="CSV file with history")
    p.add_argument("--timestamp-column", default="timestamp")
    p.add_argument("--value-column", default="value")
    p.add_argument("--output", help="CSV to write (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the engine and a tiny model")
    p.add_argument("--seeds", type=int, default=5)
    return parser


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config)
    changes = {key: getattr(args, flag, None) for flag, key in OVERRIDES.items()}
    if getattr(args, "seeds", None):
        changes["seeds"] = list(args.seeds)
    if cfg.auto_vmd and (changes.get("vmd.num_modes") is not None or changes.get("vmd.alpha") is not None):
        if changes.get("vmd.num_modes") is None or changes.get("vmd.alpha") is None:
            raise ConfigError("--num-modes and --alpha must be given together when the config uses vmd: auto")
    return config_mod.override(cfg, **changes)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_decompose(args):
    cfg = _load_config(args)
    prepared = pipeline.prepare(cfg)
    out = {}
    for seed in cfg.seeds:
        vmd = pipeline.resolve_vmd(cfg, prepared, seed)
        for split in ("train", "val", "test"):
            dd = pipeline.build_dataset(cfg, getattr(prepared, split), split, vmd, prepared.stats)
            err = np.linalg.norm(dd.X - pipeline.make_windows(getattr(prepared, split),
                                                               pipeline._spec(cfg, split)).X,
                                 axis=1)
            out.setdefault(str(seed), {})[split] = {
                "windows": len(dd), "K": dd.K, "alpha": vmd.alpha,
                "mean_omega": dd.Omega.mean(axis=0).tolist(),
                "mean_abs_reconstruction_gap": float(err.mean()),
            }
    _print(out)


def cmd_search(args):
    cfg = _load_config(args)
    prepared = pipeline.prepare(cfg)
    results = {}
    for seed in cfg.seeds:
        r = pipeline.run_search(cfg, prepared, seed)
        results[str(seed)] = {"K": r.chosen_k, "alpha": r.chosen_alpha,
                              "restart_pairs": [list(p) for p in r.restart_traces]}
    _print(results)


def cmd_train(args):
    cfg = _load_config(args)
    prepared = pipeline.prepare(cfg)
    out = {}
    for seed in cfg.seeds:
        model, history, vmd = pipeline.train_stage(cfg, prepared, seed, args.variant)
        out[str(seed)] = {"checkpoint": str(pipeline.run_dir(cfg, args.variant, seed) / "model.ckpt"),
                          "best_epoch": history.best_epoch,
                          "best_val_mse": min(history.val_loss) if history.val_loss else None}
    _print(out)


def cmd_evaluate(args):
    cfg = _load_config(args)
    prepared = pipeline.prepare(cfg)
    per_seed = {}
    for seed in cfg.seeds:
        ckpt = pipeline.run_dir(cfg, args.variant, seed) / "model.ckpt"
        if not ckpt.exists():
            raise ConfigError(f"no checkpoint at {ckpt}; run 'vmdnet train' first")
        model, meta = pipeline.load_model(ckpt)
        from .vmd import VmdConfig
        vmd = None if meta["vmd"] is None else VmdConfig(**meta["vmd"])
        per_seed[str(seed)] = pipeline.evaluate_stage(cfg, prepared, model, vmd, seed, args.variant)
    summary = pipeline.summarize(per_seed, {})
    _print({"mse": summary["mse"], "mae": summary["mae"]})


def cmd_run(args):
    cfg = _load_config(args)
    summary = pipeline.run_experiment(cfg, args.variant)
    _print({"mse": summary["mse"], "mae": summary["mae"], "failures": summary["failures"]})
    if summary["successes"] == 0:
        raise NumericalError("every seed failed")


def cmd_ablate(args):
    cfg = _load_config(args)
    table = pipeline.run_ablation(cfg, args.variants)
    print(pipeline.format_table(table), end="")


def cmd_predict(args):
    series = pipeline.ingest(args.input, args.timestamp_column, args.value_column)
    stamps, values = pipeline.predict_series(args.checkpoint, series)
    lines = ["timestamp,forecast"] + [f"{np.datetime_as_string(t, unit='s')},{v!r}"
                                      for t, v in zip(stamps, values.tolist())]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gradcheck(args):
    from .gradsuite import run_suite
    report = run_suite(n_seeds=args.seeds)
    for name, (err, tol) in report.items():
        status = "ok" if err <= tol else "FAIL"
        print(f"{name:<24} max rel err {err:.2e} (tol {tol:.0e}) {status}")
    if any(err > tol for err, tol in report.values()):
        raise NumericalError("gradient check failed")


COMMANDS = {
    "decompose": cmd_decompose, "search": cmd_search, "train": cmd_train,
    "evaluate": cmd_evaluate, "run": cmd_run, "ablate": cmd_ablate,
    "predict": cmd_predict, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeMismatch, CacheError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VmdNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
