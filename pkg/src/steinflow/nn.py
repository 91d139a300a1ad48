"""Small multilayer perceptrons with hand-written forward and reverse passes.

Inputs are row vectors: a batch has shape ``(B, d_in)``, a single input
shape ``(d_in,)``. Weights are stored ``(d_out, d_in)`` so a layer computes
``x @ W.T + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import RngStream, sigmoid, softplus

ACTIVATIONS = ("tanh", "softplus", "leaky_relu", "identity", "softmax")
LEAKY_SLOPE = 0.2


def _activate(kind, a):
    if kind == "tanh":
        return np.tanh(a)
    if kind == "softplus":
        return softplus(a)
    if kind == "leaky_relu":
        return np.where(a > 0, a, LEAKY_SLOPE * a)
    if kind == "identity":
        return a
    if kind == "softmax":
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_vjp(kind, a, h, g):
    """Pull cotangent ``g`` on the activation output back to the pre-activation."""
    if kind == "tanh":
        return g * (1.0 - h * h)
    if kind == "softplus":
        return g * sigmoid(a)
    if kind == "leaky_relu":
        return g * np.where(a > 0, 1.0, LEAKY_SLOPE)
    if kind == "identity":
        return g
    if kind == "softmax":
        return h * (g - np.sum(g * h, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "tanh"

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


class Mlp:
    """Feed-forward network; ``version`` bumps on every parameter write."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(layers) - 1:
                raise ValueError("softmax is only allowed as the final activation")
            if layer.b.shape != (layer.n_out,):
                raise ValueError(f"layer {i}: bias shape {layer.b.shape} != ({layer.n_out},)")
            if i > 0 and layer.n_in != layers[i - 1].n_out:
                raise ValueError(
                    f"layer {i} expects {layer.n_in} inputs but layer {i - 1} gives {layers[i - 1].n_out}"
                )
        self.layers = layers
        self.version = 0

    @classmethod
    def create(cls, sizes, activations, rng: RngStream | None = None, weights: str = "normal"):
        """Build a net with ``W ~ N(0, 1/fan_in)`` and zero biases.

        ``sizes`` lists the widths from input to output; ``activations`` has one
        entry per layer. ``weights="zeros"`` gives an all-zero net.
        """
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            if weights == "zeros" or rng is None:
                W = np.zeros((n_out, n_in))
            else:
                W = rng.normal((n_out, n_in)) / np.sqrt(n_in)
            layers.append(Layer(W, np.zeros(n_out), act))
        return cls(layers)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def n_params(self):
        return sum(l.W.size + l.b.size for l in self.layers)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        pos = 0
        for l in self.layers:
            nw = l.W.size
            l.W = flat[pos:pos + nw].reshape(l.W.shape).copy()
            pos += nw
            l.b = flat[pos:pos + l.b.size].copy()
            pos += l.b.size
        self.version += 1

    def copy(self) -> "Mlp":
        net = Mlp([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])
        return net

    def with_flat(self, flat) -> "Mlp":
        net = self.copy()
        net.set_flat(flat)
        return net

    def __repr__(self):
        widths = [self.n_in] + [l.n_out for l in self.layers]
        acts = [l.activation for l in self.layers]
        return f"Mlp(widths={widths}, activations={acts})"


@dataclass
class Tape:
    """Per-call cache of layer inputs, pre-activations and outputs."""
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    version: int = -1
    net_id: int = -1
    single: bool = False


def forward(net: Mlp, x) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != net.n_in:
        raise ValueError(f"input has {h.shape[-1]} features, net expects {net.n_in}")
    tape = Tape(version=net.version, net_id=id(net), single=single)
    for l in net.layers:
        tape.inputs.append(h)
        a = h @ l.W.T + l.b
        h = _activate(l.activation, a)
        tape.pre.append(a)
        tape.post.append(h)
    return (h[0] if single else h), tape


def backward(net: Mlp, tape: Tape, cotangent):
    """Reverse pass for ``<cotangent, output>``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is a list of
    ``(dW, db)`` summed over the batch and ``input_grad`` has the input's shape.
    """
    if tape.net_id != id(net) or tape.version != net.version:
        raise ValueError("stale tape: network parameters changed since forward")
    g = np.asarray(cotangent, dtype=float)
    if tape.single:
        g = g[None, :]
    if g.shape != tape.post[-1].shape:
        raise ValueError(f"cotangent shape {g.shape} does not match output {tape.post[-1].shape}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        ga = _activation_vjp(l.activation, tape.pre[i], tape.post[i], g)
        grads[i] = (ga.T @ tape.inputs[i], ga.sum(axis=0))
        g = ga @ l.W
    return grads, (g[0] if tape.single else g)


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


def input_jacobian(net: Mlp, x, wrt: slice | None = None) -> np.ndarray:
    """Jacobian of the output with respect to ``x[wrt]``.

    For a single input the result is ``(d_out, |wrt|)``; for a batch it is
    ``(B, d_out, |wrt|)``. One reverse pass per output coordinate.
    """
    x = np.asarray(x, dtype=float)
    wrt = slice(None) if wrt is None else wrt
    out, tape = forward(net, x)
    rows = []
    for i in range(net.n_out):
        e = np.zeros_like(out)
        e[..., i] = 1.0
        _, gx = backward(net, tape, e)
        rows.append(gx[..., wrt])
    return np.stack(rows, axis=-2)
