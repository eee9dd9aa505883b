"""Central finite-difference checks for the differentiation engine."""
from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_grad(fn, array, h=1e-4, indices=None):
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``array`` (edited in place)."""
    flat = array.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(array.shape)


def check_op(build, inputs, h=1e-4, seed=0):
    """Compare analytic and numeric gradients of ``sum(R * build(*inputs))``.

    ``inputs`` are Tensors with ``requires_grad=True``; ``R`` is a fixed
    random projection.  Returns the maximum relative error over all inputs.
    """
    out = build(*inputs)
    proj = np.random.default_rng(seed).normal(size=out.shape)

    def loss_value():
        return float(np.sum(build(*inputs).data * proj))

    for t in inputs:
        t.grad = None
    (out * proj).sum().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(loss_value, t.data, h)
        worst = max(worst, float(np.max(relative_error(analytic, numeric))))
    return worst
