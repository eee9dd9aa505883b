"""Mini-batch training with Adam and early stopping, plus evaluation metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NonFiniteLoss, NumericalError, ShapeMismatch
from .model import VmdNet
from .nn import engine as ops
from .nn.optim import adam_step
from .seeding import substream
from .windowing import DecomposedDataset

logger = logging.getLogger(__name__)


@dataclass
class TrainHyper:
    batch_size: int = 64
    lr: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    trainable: Optional[Sequence[str]] = None  # name prefixes; None trains everything
    max_batches_per_epoch: Optional[int] = None


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)


def _inputs(ds: DecomposedDataset, idx):
    tf = None if ds.time_features is None else ds.time_features[idx]
    return ds.U[idx], ds.Omega[idx], tf


def _check_compatible(model: VmdNet, ds: DecomposedDataset, label: str):
    cfg = model.config
    if ds.U.shape[1:] != (cfg.K, cfg.P) or ds.Y.shape[1] != cfg.F:
        raise ShapeMismatch(
            f"{label} dataset has K={ds.U.shape[1]}, P={ds.U.shape[2]}, F={ds.Y.shape[1]} "
            f"but the model expects K={cfg.K}, P={cfg.P}, F={cfg.F}")


def predict_dataset(model: VmdNet, ds: DecomposedDataset, batch_size: int = 256) -> np.ndarray:
    out = np.empty(ds.Y.shape)
    for lo in range(0, len(ds), batch_size):
        idx = slice(lo, lo + batch_size)
        out[idx] = model.predict(*_inputs(ds, idx))
    return out


def dataset_mse(model: VmdNet, ds: DecomposedDataset, batch_size: int = 256) -> float:
    pred = predict_dataset(model, ds, batch_size)
    return float(np.mean((pred - ds.Y) ** 2))


def train(model: VmdNet, train_ds: DecomposedDataset, val_ds: Optional[DecomposedDataset],
          hyper: TrainHyper = TrainHyper()):
    """Train in place with MSE loss; returns ``(model, history)``.

    Early stopping watches validation MSE: training stops once the epoch
    count since the last improvement exceeds ``patience``, and the best
    parameters are restored.  Without a validation set every epoch runs.
    """
    _check_compatible(model, train_ds, "training")
    if val_ds is not None:
        _check_compatible(model, val_ds, "validation")
    shuffle_rng = substream(hyper.seed, "shuffle")
    dropout_rng = substream(hyper.seed, "dropout")
    store = model.params
    if hyper.trainable is not None:
        frozen = [n for n in store.names() if not any(n.startswith(p) for p in hyper.trainable)]
    else:
        frozen = []
    history = History()
    best = math.inf
    best_params = store.snapshot()
    wait = 0
    n = len(train_ds)
    for epoch in range(hyper.max_epochs):
        model.train_mode(True)
        order = shuffle_rng.permutation(n)
        batches = [order[i:i + hyper.batch_size] for i in range(0, n, hyper.batch_size)]
        if hyper.max_batches_per_epoch:
            batches = batches[:hyper.max_batches_per_epoch]
        total, count = 0.0, 0
        for idx in batches:
            idx = np.sort(idx)
            store.zero_grad()
            try:
                pred = model.forward(*_inputs(train_ds, idx), rng=dropout_rng)
                loss = ops.mse_loss(pred, train_ds.Y[idx])
            except NumericalError as exc:
                raise NonFiniteLoss(f"epoch {epoch}: forward pass failed: {exc}") from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch}: loss is {value}")
            loss.backward()
            for name in frozen:
                store[name].grad = None
            adam_step(store, lr=hyper.lr)
            total += value * len(idx)
            count += len(idx)
        model.train_mode(False)
        history.train_loss.append(total / max(count, 1))
        if val_ds is None:
            history.best_epoch = epoch
            best_params = store.snapshot()
            continue
        val = dataset_mse(model, val_ds)
        history.val_loss.append(val)
        logger.info("epoch %d train %.5f val %.5f", epoch, history.train_loss[-1], val)
        if val < best:
            best, wait = val, 0
            history.best_epoch = epoch
            best_params = store.snapshot()
        else:
            wait += 1
            if wait > hyper.patience:
                history.stopped_early = True
                break
    store.load(best_params)
    model.train_mode(False)
    return model, history


def evaluate(model: VmdNet, test_ds: DecomposedDataset) -> dict:
    """MSE and MAE over every test window, in the normalized scale.

    Also returns per-horizon-step curves under ``mse_per_step``/``mae_per_step``.
    """
    _check_compatible(model, test_ds, "test")
    pred = predict_dataset(model, test_ds)
    return metrics(pred, test_ds.Y)


def metrics(pred, target) -> dict:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return {
        "mse": float(np.mean(err ** 2)),
        "mae": float(np.mean(np.abs(err))),
        "mse_per_step": np.mean(err ** 2, axis=0).tolist(),
        "mae_per_step": np.mean(np.abs(err), axis=0).tolist(),
    }
