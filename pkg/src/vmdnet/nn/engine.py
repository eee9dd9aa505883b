"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes its output gradient back to them.  :meth:`Tensor.backward`
walks the recorded graph in reverse topological order and then drops the
graph references so the tape is freed.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError, ShapeMismatch

# Fail fast on NaN/Inf in any forward value or gradient.
CHECK_FINITE = True

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = _op
        self.name = name

    def __repr__(self):
        label = self.name or self.op or "tensor"
        return f"Tensor({label}, shape={self.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Back-propagate from this tensor (a scalar unless ``grad`` is given)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if CHECK_FINITE:
                    for p in node._parents:
                        if p.grad is not None and not np.all(np.isfinite(p.grad)):
                            raise NumericalError(f"non-finite gradient flowing into {p!r} from {node.op}")
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None
                if not node.requires_grad:
                    node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite value produced by {op}")
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    out = Tensor(data, _parents=parents, _op=op)
    if any(p.requires_grad or p._parents for p in parents):
        out._backward = backward
    else:
        out._parents = ()
    return out


def _needs(t):
    return isinstance(t, Tensor) and (t.requires_grad or bool(t._parents))


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _needs(a):
            a._accumulate(g)
        if _needs(b):
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _needs(a):
            a._accumulate(g)
        if _needs(b):
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _needs(a):
            a._accumulate(g * b.data)
        if _needs(b):
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), "mul", backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")

    def backward(g):
        if _needs(a):
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if _needs(b):
            if a.ndim > 2 and b.ndim == 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                b._accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def linear(x, weight, bias=None):
    """Affine map over the trailing axis: ``x @ W + b`` with ``W`` of shape d_in x d_out."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input trailing dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def tsum(x, axis=None):
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _make(np.sum(x.data, axis=axis), (x,), "sum", backward)


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), "reshape", backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        x._accumulate(np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), "transpose", backward)


def getitem(x, index):
    x = as_tensor(x)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            # basic indexing never repeats an element
            full[index] += g
        else:
            np.add.at(full, index, g)
        x._accumulate(full)

    return _make(x.data[index], (x,), "getitem", backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if _needs(t):
                t._accumulate(np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if _needs(t):
                t._accumulate(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def embedding(table, indices):
    """Row lookup ``table[indices]``; gradients scatter-add back into the table."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        table._accumulate(full)

    return _make(table.data[indices], (table,), "embedding", backward)


# ---------------------------------------------------------------------------
# activations, regularization, loss


def gelu(x):
    """GELU, tanh approximation ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    x = as_tensor(x)
    v = x.data
    v2 = v * v
    th = np.tanh(GELU_C * v * (1.0 + GELU_A * v2))
    out = 0.5 * v * (1.0 + th)

    def backward(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * v2)
        x._accumulate(g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner))

    return _make(out, (x,), "gelu", backward)


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout: identity in evaluation mode, scaled random mask otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        x._accumulate(g * mask)

    return _make(x.data * mask, (x,), "dropout", backward)


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        if _needs(pred):
            pred._accumulate(g * 2.0 * diff / n)
        if _needs(target):
            target._accumulate(-g * 2.0 * diff / n)

    return _make(np.asarray(np.mean(diff ** 2)), (pred, target), "mse", backward)


# ---------------------------------------------------------------------------
# causal dilated convolution


def _im2col(xp, k, d, T):
    """Stack the k dilated taps of a left-padded (B, T + pad, C) array along channels."""
    return np.concatenate([xp[:, j * d:j * d + T, :] for j in range(k)], axis=2)


def conv1d_causal_nlc(x, weight, bias=None, dilation=1):
    """Causal dilated convolution in channels-last layout.

    ``x`` is (batch, time, c_in), ``weight`` (c_out, c_in, k).  The input is
    left-padded with ``(k - 1) * dilation`` zeros, so output step ``t`` sees
    ``x[t - (k - 1 - j) * dilation]`` for tap ``j`` and nothing later.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeMismatch(f"conv1d expects 3-D input and kernel, got {x.shape} and {weight.shape}")
    c_out, c_in, k = weight.shape
    B, T, C = x.shape
    if C != c_in:
        raise ShapeMismatch(f"conv1d: input has {C} channels, kernel expects {c_in}")
    if dilation < 1 or k < 1:
        raise ValueError("dilation and kernel width must be >= 1")
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((B, pad, C)), x.data], axis=1) if pad else x.data
    cols = _im2col(xp, k, dilation, T)
    w2 = weight.data.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = (cols.reshape(B * T, k * c_in) @ w2).reshape(B, T, c_out)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(B * T, c_out)
        if _needs(weight):
            dw2 = cols.reshape(B * T, k * c_in).T @ g2
            weight._accumulate(dw2.reshape(k, c_in, c_out).transpose(2, 1, 0))
        if bias is not None and _needs(bias):
            bias._accumulate(g2.sum(axis=0))
        if _needs(x):
            dcols = (g2 @ w2.T).reshape(B, T, k * c_in)
            dxp = np.zeros((B, T + pad, C))
            for j in range(k):
                dxp[:, j * dilation:j * dilation + T, :] += dcols[:, :, j * c_in:(j + 1) * c_in]
            x._accumulate(dxp[:, pad:, :])

    return _make(out, (x, weight, bias), "conv1d", backward)


def causal_dilated_conv1d(x, kernel, dilation=1, bias=None):
    """Causal dilated convolution on (batch, c_in, time) input, returning (batch, c_out, time)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"conv1d expects (batch, channels, time), got {x.shape}")
    out = conv1d_causal_nlc(transpose(x, (0, 2, 1)), kernel, bias, dilation)
    return transpose(out, (0, 2, 1))
