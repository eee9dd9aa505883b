"""Finite-difference gradient checks over every engine op and a tiny model.

Used by the ``gradcheck`` command and the test suite.
"""
from __future__ import annotations

import numpy as np

from .model import ModelConfig, VmdNet
from .nn import engine as ops
from .nn.engine import Tensor
from .nn.gradcheck import check_op, numeric_grad, relative_error

OP_TOL = 1e-4
MODEL_TOL = 1e-3


def _t(rng, *shape, positive=False):
    a = rng.normal(size=shape)
    if positive:
        a = np.abs(a) + 0.5
    return Tensor(a, requires_grad=True)


def _cases(rng):
    """``name -> (build, inputs)`` with freshly drawn random shapes."""
    b, n, m = (int(v) for v in rng.integers(2, 5, size=3))
    idx = rng.integers(0, n, size=7)
    mask_seed = int(rng.integers(1 << 30))
    k, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    T, ci, co = int(rng.integers(5, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    return {
        "add": (ops.add, [_t(rng, b, n), _t(rng, n)]),
        "sub": (ops.sub, [_t(rng, b, n), _t(rng, b, 1)]),
        "mul": (ops.mul, [_t(rng, b, n), _t(rng, b, n)]),
        "matmul": (ops.matmul, [_t(rng, b, n), _t(rng, n, m)]),
        "linear": (ops.linear, [_t(rng, b, n), _t(rng, n, m), _t(rng, m)]),
        "sum": (lambda x: ops.tsum(x, axis=1), [_t(rng, b, n, m)]),
        "mean": (lambda x: ops.mean(x, axis=0), [_t(rng, b, n)]),
        "reshape": (lambda x: ops.reshape(x, (n, b)), [_t(rng, b, n)]),
        "transpose": (lambda x: ops.transpose(x, (1, 0, 2)), [_t(rng, b, n, m)]),
        "getitem": (lambda x: x[:, 1::2], [_t(rng, b, n + 2)]),
        "stack": (lambda x, y: ops.stack([x, y], axis=1), [_t(rng, b, n), _t(rng, b, n)]),
        "concat": (lambda x, y: ops.concat([x, y], axis=-1), [_t(rng, b, n), _t(rng, b, m)]),
        "embedding": (lambda w: ops.embedding(w, idx), [_t(rng, n, m)]),
        "gelu": (ops.gelu, [_t(rng, b, n)]),
        "dropout": (lambda x: ops.dropout(x, 0.3, np.random.default_rng(mask_seed), training=True),
                    [_t(rng, b, n)]),
        "mse_loss": (ops.mse_loss, [_t(rng, b, n), _t(rng, b, n)]),
        "conv1d": (lambda x, w, bias: ops.causal_dilated_conv1d(x, w, d, bias),
                   [_t(rng, b, ci, T), _t(rng, co, ci, k), _t(rng, co)]),
    }


def op_errors(seed: int) -> dict:
    """Maximum relative gradient error per op for one random draw."""
    rng = np.random.default_rng(seed)
    return {name: check_op(build, inputs, h=1e-4, seed=seed)
            for name, (build, inputs) in _cases(rng).items()}


def tiny_model(seed: int = 0, **overrides) -> VmdNet:
    cfg = dict(K=2, P=16, F=4, d_model=8, tcn_channels=(8,), dropout=0.0, rng_seed=seed)
    cfg.update(overrides)
    return VmdNet(ModelConfig(**cfg))


def model_error(seed: int = 0, n_params: int = 50, h: float = 1e-5, **overrides) -> float:
    """Finite differences on ``n_params`` random parameter entries of a tiny model."""
    rng = np.random.default_rng(seed)
    model = tiny_model(seed, **overrides)
    cfg = model.config
    B = 3
    U = rng.normal(size=(B, cfg.K, cfg.P))
    Omega = np.sort(rng.uniform(0, 0.5, size=(B, cfg.K)), axis=1)
    tf = rng.normal(size=(B, cfg.P, cfg.n_time_features))
    Y = rng.normal(size=(B, cfg.F))

    def loss():
        return ops.mse_loss(model.forward(U, Omega, tf), Y)

    model.params.zero_grad()
    loss().backward()
    names = model.params.names()
    sizes = np.array([model.params[n].data.size for n in names])
    flat = rng.choice(int(sizes.sum()), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        p = model.params[names[i]]
        j = int(f - offsets[i])
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)[j]
        numeric = numeric_grad(lambda: float(loss().data), p.data, h, [j]).reshape(-1)[j]
        worst = max(worst, float(relative_error(analytic, numeric, floor=1e-6)))
    return worst


def run_suite(n_seeds: int = 5) -> dict:
    """``name -> (max error over seeds, tolerance)`` for every op plus the model."""
    report = {}
    for seed in range(n_seeds):
        for name, err in op_errors(seed).items():
            prev = report.get(name, (0.0, OP_TOL))[0]
            report[name] = (max(prev, err), OP_TOL)
    report["model"] = (model_error(0), MODEL_TOL)
    return report
