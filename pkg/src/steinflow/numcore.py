"""Numerical substrate: seeded RNG streams, sampling, log-sum-exp, log-determinants.

Vectors and matrices are plain ``numpy`` arrays throughout the package.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by the Philox bit generator. Two streams built from the same pair
    produce identical draws; distinct stream ids give independent sequences.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def sample_gaussian(rng: RngStream, d: int) -> np.ndarray:
    """Draw ``d`` independent standard normals."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return rng.normal(d)


def sample_uniform(rng: RngStream, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return rng.uniform(d)


def log_sum_exp(values, axis=None) -> np.ndarray | float:
    """Shift-stabilised ``log(sum(exp(values)))``.

    All ``-inf`` entries along a slice give ``-inf`` for that slice.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValueError("empty reduction")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_mean_exp(values, axis=None):
    v = np.asarray(values, dtype=float)
    n = v.size if axis is None else v.shape[axis]
    return log_sum_exp(v, axis=axis) - np.log(n)


def lu_log_abs_det(m) -> tuple[float, float]:
    """Return ``(log|det m|, sign)`` via LU factorisation.

    A singular matrix gives ``(-inf, 0.0)``.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    sign, logdet = np.linalg.slogdet(a)
    if sign == 0:
        return -np.inf, 0.0
    return float(logdet), float(sign)


def batched_log_abs_det(mats) -> tuple[np.ndarray, np.ndarray]:
    """``lu_log_abs_det`` over a stack of square matrices ``(..., d, d)``."""
    a = np.asarray(mats, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected stacked square matrices, got shape {a.shape}")
    sign, logdet = np.linalg.slogdet(a)
    logdet = np.where(sign == 0, -np.inf, logdet)
    return logdet, sign


def gaussian_logpdf_std(x, axis=-1):
    """Log density of an isotropic standard normal, summed over ``axis``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[axis]
    return -0.5 * np.sum(x * x, axis=axis) - 0.5 * d * np.log(2 * np.pi)


def softplus(x):
    x = np.asarray(x, dtype=float)
    # linear branch above 30 avoids overflow in exp
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_sigmoid(x):
    x = np.asarray(x, dtype=float)
    return -softplus(-x)
