"""Amortised code sampler ``z = f(x, xi)`` with ``xi ~ N(0, I)``."""
from __future__ import annotations

import numpy as np

from . import nn
from .numcore import RngStream, batched_log_abs_det, gaussian_logpdf_std
from .svgd import Adam, AdamConfig


class SingularCodeMapError(FloatingPointError):
    pass


class RecognitionNet:
    """MLP over ``concat(x_normalised, xi)`` producing a ``d_z`` code.

    ``x_shift``/``x_scale`` standardise the data half of the input and leave
    the noise half untouched, so Jacobians in ``xi`` are unaffected.
    """

    def __init__(self, net: nn.Mlp, x_dim: int, noise_dim: int, x_shift=None, x_scale=None):
        if net.n_in != x_dim + noise_dim:
            raise ValueError(f"net input {net.n_in} != x_dim + noise_dim = {x_dim + noise_dim}")
        self.net = net
        self.x_dim = int(x_dim)
        self.noise_dim = int(noise_dim)
        self.x_shift = np.zeros(x_dim) if x_shift is None else np.asarray(x_shift, dtype=float)
        self.x_scale = np.ones(x_dim) if x_scale is None else np.asarray(x_scale, dtype=float)
        self.adam: Adam | None = None

    @classmethod
    def create(cls, x_dim, code_dim, hidden=(100,), activation="tanh", rng: RngStream | None = None,
               x_shift=None, x_scale=None):
        sizes = [x_dim + code_dim, *hidden, code_dim]
        acts = [activation] * len(hidden) + ["identity"]
        return cls(nn.Mlp.create(sizes, acts, rng=rng), x_dim, code_dim, x_shift, x_scale)

    @property
    def code_dim(self):
        return self.net.n_out

    def copy(self):
        rec = RecognitionNet(self.net.copy(), self.x_dim, self.noise_dim,
                             self.x_shift.copy(), self.x_scale.copy())
        if self.adam is not None:
            rec.adam = Adam(self.adam.m.shape, self.adam.config)
            rec.adam.m, rec.adam.v, rec.adam.t = self.adam.m.copy(), self.adam.v.copy(), self.adam.t
        return rec

    def inputs(self, x, noise):
        """Stack network inputs for every ``(datum, noise)`` pair.

        ``x`` is ``(B, d_x)``; ``noise`` is ``(M, d_xi)`` shared across data or
        ``(B, M, d_xi)`` per datum. Returns ``(B, M, d_x + d_xi)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        noise = np.asarray(noise, dtype=float)
        if x.shape[-1] != self.x_dim:
            raise ValueError(f"x has {x.shape[-1]} features, expected {self.x_dim}")
        if noise.shape[-1] != self.noise_dim:
            raise ValueError(f"noise has {noise.shape[-1]} dims, expected {self.noise_dim}")
        if noise.ndim == 2:
            noise = np.broadcast_to(noise, (x.shape[0],) + noise.shape)
        B, M = noise.shape[:2]
        xn = (x - self.x_shift) / self.x_scale
        return np.concatenate([np.broadcast_to(xn[:, None, :], (B, M, self.x_dim)), noise], axis=-1)


def draw_codes(rec: RecognitionNet, x, noise) -> np.ndarray:
    """Codes ``(B, M, d_z)``; a single datum ``(d_x,)`` gives ``(M, d_z)``."""
    single = np.asarray(x).ndim == 1
    inp = rec.inputs(x, noise)
    out, _ = nn.forward(rec.net, inp.reshape(-1, inp.shape[-1]))
    z = out.reshape(inp.shape[:2] + (rec.code_dim,))
    return z[0] if single else z


def fit_codes(rec: RecognitionNet, x, noise, targets, steps: int = 5, lr: float = 1e-3,
              optimizer: str = "sgd") -> list[float]:
    """Take ``steps`` gradient steps on ``sum ||f(x_n, xi_j) - z'_nj||^2``.

    The parameter gradient is the reverse pass with cotangent ``2 (f - z')``.
    ``optimizer="adam"`` keeps Adam state on ``rec`` across calls. Returns the
    loss before each step followed by the final loss.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(targets)):
        raise ValueError("fit targets must be finite")
    inp = rec.inputs(x, noise)
    flat_in = inp.reshape(-1, inp.shape[-1])
    flat_t = targets.reshape(-1, rec.code_dim)
    if flat_t.shape[0] != flat_in.shape[0]:
        raise ValueError("targets do not match the (datum, noise) grid")
    if optimizer == "adam" and rec.adam is None:
        rec.adam = Adam((rec.net.n_params,), AdamConfig(lr=lr))
    trace = []
    for _ in range(steps):
        out, tape = nn.forward(rec.net, flat_in)
        resid = out - flat_t
        trace.append(float(np.sum(resid * resid)))
        grads, _ = nn.backward(rec.net, tape, 2.0 * resid)
        g = nn.flatten_grads(grads)
        params = rec.net.get_flat()
        if optimizer == "adam":
            rec.net.set_flat(rec.adam.step(params, g))
        elif optimizer == "sgd":
            rec.net.set_flat(params - lr * g)
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
    out, _ = nn.forward(rec.net, flat_in)
    trace.append(float(np.sum((out - flat_t) ** 2)))
    return trace


def code_log_density(rec: RecognitionNet, x, noise) -> np.ndarray | float:
    """``log q0(xi) - log|det df/dxi|`` for each ``(datum, noise)`` pair.

    Shapes follow :func:`draw_codes`; a single ``x`` with a single ``xi``
    returns a float.
    """
    if rec.noise_dim != rec.code_dim:
        raise ValueError("density evaluation needs noise_dim == code_dim")
    x_arr = np.asarray(x, dtype=float)
    nz = np.asarray(noise, dtype=float)
    single_x = x_arr.ndim == 1
    single_xi = nz.ndim == 1
    if single_xi:
        nz = nz[None]
    inp = rec.inputs(x_arr, nz)
    flat = inp.reshape(-1, inp.shape[-1])
    J = nn.input_jacobian(rec.net, flat, slice(rec.x_dim, None))
    logdet, sign = batched_log_abs_det(J)
    if np.any(sign == 0) or not np.all(np.isfinite(logdet)):
        bad = int(np.argmax((sign == 0) | ~np.isfinite(logdet)))
        raise SingularCodeMapError(f"non-invertible code map at sample {bad}")
    lq = gaussian_logpdf_std(flat[:, rec.x_dim:]) - logdet
    lq = lq.reshape(inp.shape[:2])
    if single_x:
        lq = lq[0]
        return float(lq[0]) if single_xi else lq
    return lq[:, 0] if single_xi else lq
