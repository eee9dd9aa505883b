import numpy as np
import pytest

from vmdnet import gradsuite
from vmdnet.errors import NumericalError, ShapeMismatch
from vmdnet.nn import engine as ops
from vmdnet.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from vmdnet.nn.engine import Tensor
from vmdnet.nn.gradcheck import numeric_grad, relative_error
from vmdnet.nn.optim import ParamStore, adam_step


@pytest.mark.parametrize("seed", range(25))
def test_every_op_matches_finite_differences(seed):
    errors = gradsuite.op_errors(seed)
    bad = {k: v for k, v in errors.items() if v > gradsuite.OP_TOL}
    assert not bad


def test_linear_identity():
    x = np.random.default_rng(0).normal(size=(3, 4))
    out = ops.linear(x, np.eye(4), np.zeros(4))
    np.testing.assert_array_equal(out.data, x)


def test_linear_scalar():
    x = Tensor([[2.0]], requires_grad=True)
    w = Tensor([[3.0]], requires_grad=True)
    b = Tensor([1.0], requires_grad=True)
    out = ops.linear(x, w, b)
    assert out.data.item() == 7.0
    out.sum().backward()
    assert w.grad.item() == 2.0 and x.grad.item() == 3.0 and b.grad.item() == 1.0


def test_linear_random_map_gradient():
    rng = np.random.default_rng(4)
    x, w, b = (Tensor(rng.normal(size=s), requires_grad=True) for s in [(3, 4), (4, 5), (5,)])
    for t in (x, w, b):
        t.grad = None
    ops.linear(x, w, b).sum().backward()
    for t in (x, w, b):
        numeric = numeric_grad(lambda: float(ops.linear(x.data, w.data, b.data).data.sum()), t.data, 1e-4)
        assert relative_error(t.grad, numeric, floor=1e-6).max() <= 1e-4


def test_linear_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ops.linear(np.ones((2, 3)), np.ones((4, 5)))


def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(2, 1, 9))
    out = ops.causal_dilated_conv1d(x, np.ones((1, 1, 1)), dilation=1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_impulse_response():
    x = np.zeros((1, 1, 12))
    x[0, 0, 5] = 1.0
    out = ops.causal_dilated_conv1d(x, np.ones((1, 1, 2)), dilation=2).data[0, 0]
    assert set(np.flatnonzero(out)) == {5, 7}


def test_conv_jacobian_is_causal():
    rng = np.random.default_rng(2)
    T = 10
    x = Tensor(rng.normal(size=(1, 2, T)), requires_grad=True)
    w = rng.normal(size=(3, 2, 3))
    for t in range(T):
        x.grad = None
        out = ops.causal_dilated_conv1d(x, w, dilation=2)
        out[:, :, t].sum().backward()
        assert np.all(x.grad[:, :, t + 1:] == 0.0)
        assert np.any(x.grad[:, :, t] != 0.0)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        ops.causal_dilated_conv1d(np.ones((1, 2, 5)), np.ones((1, 3, 2)))
    with pytest.raises(ShapeMismatch):
        ops.causal_dilated_conv1d(np.ones((2, 5)), np.ones((1, 2, 2)))


def test_gelu_values_and_gradient():
    assert ops.gelu(np.zeros(1)).data[0] == 0.0
    x = np.random.default_rng(3).normal(scale=3.0, size=100)
    t = Tensor(x.copy(), requires_grad=True)
    ops.gelu(t).sum().backward()
    numeric = numeric_grad(lambda: float(ops.gelu(t.data).data.sum()), t.data, 1e-4)
    assert relative_error(t.grad, numeric, floor=1e-6).max() <= 1e-4


def test_dropout_modes():
    x = Tensor(np.ones((50, 40)), requires_grad=True)
    assert ops.dropout(x, 0.5, training=False) is x
    out = ops.dropout(x, 0.25, np.random.default_rng(0), training=True)
    kept = out.data != 0
    np.testing.assert_allclose(out.data[kept], 1 / 0.75)
    assert 0.6 < kept.mean() < 0.9
    out.sum().backward()
    np.testing.assert_array_equal(x.grad, out.data)
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, np.random.default_rng(0), training=True)


def test_mse_of_identical_is_zero():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    loss = ops.mse_loss(p, np.arange(6.0).reshape(2, 3))
    loss.backward()
    assert loss.data == 0.0 and np.all(p.grad == 0.0)


def test_non_finite_fails_fast():
    with pytest.raises(NumericalError):
        ops.mul(Tensor([1.0, 2.0]), np.array([np.inf, 1.0]))


def test_backward_frees_tape():
    a = Tensor(np.ones(3), requires_grad=True)
    out = (a * 2.0).sum()
    out.backward()
    assert out._parents == () and out._backward is None


def test_adam_zero_gradient_keeps_params():
    store = ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    adam_step(store, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr():
    store = ParamStore()
    p = store.add("w", np.array([0.5]))
    p.grad = np.array([1.0])
    adam_step(store, lr=0.01)
    assert p.data[0] == pytest.approx(0.5 - 0.01, rel=1e-6)


def test_adam_reduces_quadratic():
    store = ParamStore()
    w = store.add("w", np.array([1.0]))
    # oracle: the same recursion written out by hand
    m = v = 0.0
    ref = 1.0
    for t in range(1, 11):
        store.zero_grad()
        (w * w).sum().backward()
        adam_step(store, lr=0.1)
        g = 2 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert w.data[0] == pytest.approx(ref, rel=1e-12)
    assert abs(w.data[0]) < 1.0


def test_param_store_names_unique():
    store = ParamStore()
    store.add("a", np.zeros(2))
    with pytest.raises(KeyError):
        store.add("a", np.zeros(2))


def test_checkpoint_roundtrip(tmp_path):
    store = ParamStore()
    store.add("layer.w", np.random.default_rng(0).normal(size=(3, 4)))
    store.add("layer.b", np.zeros(4))
    store.add("scalar", np.array(2.5))
    path = save_checkpoint(tmp_path / "m.ckpt", store, {"K": 3, "note": "x"})
    params, meta = load_checkpoint(path)
    assert meta == {"K": 3, "note": "x"}
    assert list(params) == ["layer.w", "layer.b", "scalar"]
    for name, p in store:
        np.testing.assert_array_equal(params[name], p.data)


def test_checkpoint_detects_corruption(tmp_path):
    store = ParamStore()
    store.add("w", np.ones(10))
    path = save_checkpoint(tmp_path / "m.ckpt", store)
    data = bytearray(path.read_bytes())
    data[40] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
