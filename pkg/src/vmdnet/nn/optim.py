"""Named parameter storage and the Adam optimizer."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .engine import Tensor


class ParamStore:
    """Ordered map of uniquely named trainable tensors plus optimizer state."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: dict = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load(self, values: dict, strict: bool = True):
        for k, p in self.params.items():
            if k not in values:
                if strict:
                    raise KeyError(f"missing parameter {k!r}")
                continue
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != p.data.shape:
                raise ValueError(f"{k}: shape {v.shape} does not match {p.data.shape}")
            p.data = v.copy()
        if strict:
            extra = set(values) - set(self.params)
            if extra:
                raise KeyError(f"unexpected parameters {sorted(extra)}")


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter that has a gradient."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        if p.grad is None:
            continue
        m, v = store.state.get(name, (None, None))
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        g = p.grad
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.state[name] = (m, v)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
