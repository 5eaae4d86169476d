import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glfc import tensor as T
from glfc.errors import ContractError, ShapeError
from glfc.optim import Adam, AdamState, adam_step
from glfc.tensor import Tensor, no_grad
from glfc.verify import fd_check, gradcheck_op


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_scalar_chain_rule():
    x = leaf(3.0)
    y = x * x + T.exp(x) / 2.0
    y.backward()
    assert x.grad == pytest.approx(2 * 3.0 + np.exp(3.0) / 2)


def test_gradient_accumulates_over_reuse():
    x = leaf([1.0, -2.0])
    (x + x + x).sum().backward()
    np.testing.assert_allclose(x.grad, [3.0, 3.0])


def test_broadcast_gradient_reduces_to_shape():
    x = leaf(np.ones((2, 3)))
    b = leaf(np.ones(3))
    T.mul(x, b).sum().backward()
    np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])


def test_non_scalar_backward_rejected():
    with pytest.raises(ContractError):
        leaf(np.ones(3)).backward()


def test_no_grad_builds_no_graph():
    x = leaf(np.ones(2))
    with no_grad():
        y = T.exp(x)
    assert not y.requires_grad


def test_clip_gradient_masks_outside():
    x = leaf([-2.0, 0.0, 2.0])
    T.clip(x, -1.0, 1.0).sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])
    with pytest.raises(ContractError):
        T.clip(x, 1.0, 1.0)


def test_l1_mean_shape_mismatch():
    with pytest.raises(ShapeError):
        T.l1_mean(leaf(np.ones(3)), leaf(np.ones(4)))


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 5))
    for i in range(5):
        for j in range(5):
            ref[:, :, i, j] = np.einsum("bchw,ochw->bo", xp[:, :, i:i + 3, j:j + 3], w) + b
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_maxpool_and_upsample_shapes():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(T.maxpool2(x).data[0, 0], [[5, 7], [13, 15]])
    assert T.upsample2(x).shape == (1, 1, 8, 8)


def test_instance_norm_zero_mean_unit_var():
    x = Tensor(np.random.default_rng(1).normal(3, 2, (2, 3, 8, 8)))
    y = T.instance_norm(x).data
    np.testing.assert_allclose(y.mean(axis=(2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(2, 3)), 1, atol=1e-3)


@pytest.mark.parametrize("name", ["mul", "div", "softplus", "clip", "matmul", "conv2d",
                                  "depthwise_conv2d", "layer_norm", "getitem"])
def test_op_gradients(name):
    r = gradcheck_op(name, trials=5)
    assert r.passed, r.line()


def test_gradcheck_detects_wrong_backward(monkeypatch):
    # a clip whose backward passes the gradient everywhere must be caught
    def bad_clip(x, lo, hi):
        return T.make_op(np.clip(x.data, lo, hi), [x], lambda g: [g])

    monkeypatch.setattr(T, "clip", bad_clip)
    r = gradcheck_op("clip", trials=5)
    assert not r.passed and "clip" in r.line()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_matmul_gradient_property(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng.normal(size=(n, 3))), leaf(rng.normal(size=(3, m)))
    err = fd_check(lambda: T.tsum(T.matmul(a, b) * T.matmul(a, b)), [a, b], rng=rng)
    assert err < 1e-4


def test_adam_first_step_is_lr_sign():
    p = leaf([1.0, -1.0])
    state = AdamState.for_params([p], lr=0.1)
    adam_step([p], [np.array([0.5, -2.0])], state)
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


def test_adam_minimises_quadratic():
    p = leaf([5.0])
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        (p * p).sum().backward()
        opt.step()
    assert abs(p.data[0]) < 0.05
