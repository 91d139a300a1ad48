import numpy as np
import pytest
from hypothesis import given, strategies as st

from steinflow import nn
from steinflow.numcore import RngStream

from conftest import central_fd


def linear(W, b=None, act="identity"):
    W = np.asarray(W, dtype=float)
    return nn.Mlp([nn.Layer(W, np.zeros(W.shape[0]) if b is None else np.asarray(b, float), act)])


def test_identity_layer_passes_input():
    x = np.array([0.3, -1.2, 2.0])
    out, _ = nn.forward(linear(np.eye(3)), x)
    assert np.array_equal(out, x)


def test_zero_tanh_layer_outputs_zero():
    out, _ = nn.forward(linear(np.zeros((2, 3)), act="tanh"), np.ones(3))
    assert np.array_equal(out, np.zeros(2))


def test_two_layer_forward_matches_manual_recomputation(rng):
    net = nn.Mlp.create([3, 4, 2], ["tanh", "softplus"], rng=rng)
    x = rng.normal(3)
    l1, l2 = net.layers
    hidden = [np.tanh(sum(l1.W[i, j] * x[j] for j in range(3)) + l1.b[i]) for i in range(4)]
    expect = [np.log1p(np.exp(sum(l2.W[i, j] * hidden[j] for j in range(4)) + l2.b[i])) for i in range(2)]
    out, _ = nn.forward(net, x)
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.forward(linear(np.eye(3)), np.ones(2))


def test_chain_and_softmax_position_validated():
    with pytest.raises(ValueError):
        nn.Mlp([nn.Layer(np.ones((2, 3)), np.zeros(2)), nn.Layer(np.ones((2, 4)), np.zeros(2))])
    with pytest.raises(ValueError):
        nn.Mlp.create([2, 3, 2], ["softmax", "identity"])


def test_zero_cotangent_gives_zero_grads(rng):
    net = nn.Mlp.create([3, 5, 2], ["tanh", "identity"], rng=rng)
    _, tape = nn.forward(net, rng.normal(3))
    grads, gx = nn.backward(net, tape, np.zeros(2))
    assert all(not dW.any() and not db.any() for dW, db in grads)
    assert not gx.any()


def test_linear_layer_gradients_closed_form(rng):
    W, b = rng.normal((2, 3)), rng.normal(2)
    net = linear(W, b)
    x, u = rng.normal(3), rng.normal(2)
    _, tape = nn.forward(net, x)
    (dW, db), = nn.backward(net, tape, u)[0]
    gx = nn.backward(net, tape, u)[1]
    assert np.allclose(dW, np.outer(u, x))
    assert np.allclose(db, u)
    assert np.allclose(gx, W.T @ u)


def test_stale_tape_rejected(rng):
    net = nn.Mlp.create([2, 2], ["tanh"], rng=rng)
    _, tape = nn.forward(net, np.ones(2))
    net.set_flat(net.get_flat() + 1.0)
    with pytest.raises(ValueError, match="stale tape"):
        nn.backward(net, tape, np.ones(2))
    other = net.copy()
    _, tape2 = nn.forward(other, np.ones(2))
    with pytest.raises(ValueError, match="stale tape"):
        nn.backward(net, tape2, np.ones(2))


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


@pytest.mark.parametrize("act", ["tanh", "softplus", "leaky_relu", "identity", "softmax"])
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_backward_matches_central_differences(act, seed):
    rng = RngStream(seed, 1)
    net = nn.Mlp.create([3, 4, 3], ["tanh", act], rng=rng)
    x, u = rng.normal(3), rng.normal(3)
    # keep leaky-relu kinks away from the difference stencil
    pre = nn.forward(nn.Mlp(net.layers[:1]), x)[0] @ net.layers[1].W.T + net.layers[1].b
    if act == "leaky_relu" and np.min(np.abs(pre)) < 1e-3:
        return
    _, tape = nn.forward(net, x)
    grads, gx = nn.backward(net, tape, u)
    flat = net.get_flat()

    def f_params(p):
        return float(nn.forward(net.with_flat(p), x)[0] @ u)
    assert _rel_err(nn.flatten_grads(grads), central_fd(f_params, flat, 1e-5)) < 1e-4
    assert _rel_err(gx, central_fd(lambda v: float(nn.forward(net, v)[0] @ u), x, 1e-5)) < 1e-4


def test_identity_and_linear_jacobians(rng):
    assert np.allclose(nn.input_jacobian(linear(np.eye(3)), rng.normal(3)), np.eye(3))
    A = rng.normal((2, 5))
    J = nn.input_jacobian(linear(A), rng.normal(5), slice(3, 5))
    assert np.array_equal(J, A[:, 3:5])


def test_tanh_jacobian_matches_fd(rng):
    net = nn.Mlp.create([3, 6, 2], ["tanh", "tanh"], rng=rng)
    x = rng.normal(3)
    J = nn.input_jacobian(net, x)
    fd = np.stack([central_fd(lambda v, i=i: nn.forward(net, v)[0][i], x, 1e-5) for i in range(2)])
    assert _rel_err(J, fd) < 1e-4


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_jacobian_transpose_product_equals_backward(seed):
    rng = RngStream(seed, 2)
    net = nn.Mlp.create([4, 5, 3], ["softplus", "tanh"], rng=rng)
    x, u = rng.normal(4), rng.normal(3)
    _, tape = nn.forward(net, x)
    assert np.allclose(nn.input_jacobian(net, x).T @ u, nn.backward(net, tape, u)[1], atol=1e-10)


def test_batched_jacobian_matches_single(rng):
    net = nn.Mlp.create([3, 4, 2], ["tanh", "identity"], rng=rng)
    xs = rng.normal((5, 3))
    batch = nn.input_jacobian(net, xs, slice(1, 3))
    for i in range(5):
        assert np.allclose(batch[i], nn.input_jacobian(net, xs[i], slice(1, 3)), atol=1e-14)


def test_flat_roundtrip_and_init(rng):
    net = nn.Mlp.create([3, 4, 2], ["leaky_relu", "identity"], rng=rng)
    flat = net.get_flat()
    assert flat.size == net.n_params == 3 * 4 + 4 + 4 * 2 + 2
    assert np.array_equal(net.with_flat(flat).get_flat(), flat)
    assert all(not l.b.any() for l in net.layers)
    assert not nn.Mlp.create([3, 2], ["tanh"], weights="zeros").get_flat().any()


def test_leaky_slope():
    out, _ = nn.forward(linear(np.eye(2), act="leaky_relu"), np.array([-1.0, 2.0]))
    assert np.array_equal(out, [-0.2, 2.0])
