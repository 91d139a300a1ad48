"""RBF kernel ``k(x, y) = exp(-||x - y||^2 / h)`` and the median bandwidth heuristic."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BANDWIDTH_MODES = ("squared", "unsquared")


def _lower_median(values, axis=-1):
    v = np.asarray(values)
    n = v.shape[axis]
    kth = (n - 1) // 2
    return np.take(np.partition(v, kth, axis=axis), kth, axis=axis)


def pairwise_sq_dists(points, others=None) -> np.ndarray:
    """Squared distances between rows; works on stacks ``(..., n, d)``.

    Low-dimensional clouds accumulate one coordinate at a time so no
    ``(..., n, m, d)`` temporary is built.
    """
    p = np.asarray(points, dtype=float)
    q = p if others is None else np.asarray(others, dtype=float)
    d = p.shape[-1]
    if d <= 16:
        out = np.zeros(p.shape[:-1] + (q.shape[-2],))
        for c in range(d):
            diff = p[..., :, None, c] - q[..., None, :, c]
            out += diff * diff
        return out
    diff = p[..., :, None, :] - q[..., None, :, :]
    return np.sum(diff * diff, axis=-1)


def bandwidth_from_sq(sq, mode: str = "squared"):
    """Median heuristic from a precomputed ``(..., n, n)`` squared-distance matrix."""
    if mode not in BANDWIDTH_MODES:
        raise ValueError(f"bandwidth mode must be one of {BANDWIDTH_MODES}")
    n = sq.shape[-1]
    lead = sq.shape[:-2]
    if n < 2:
        return 1.0 if not lead else np.ones(lead)
    iu = np.triu_indices(n, k=1)
    vals = sq[..., iu[0], iu[1]]
    if mode == "unsquared":
        vals = np.sqrt(vals)
    h = _lower_median(vals, axis=-1)
    h = np.where(h > 0, h, 1.0)
    return float(h) if not lead else h


def median_bandwidth(points, mode: str = "squared") -> float | np.ndarray:
    """Median heuristic over all unordered pairs.

    ``mode="squared"`` takes the median of squared distances, so a pair at the
    median separation has kernel value ``exp(-1)``; ``"unsquared"`` takes the
    median of plain distances. Even pair counts use the lower median. Fewer
    than two points or a zero median fall back to ``h = 1``.

    Accepts ``(n, d)`` or a stack ``(..., n, d)``; a stack returns one
    bandwidth per leading index.
    """
    if mode not in BANDWIDTH_MODES:
        raise ValueError(f"bandwidth mode must be one of {BANDWIDTH_MODES}")
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    n = p.shape[-2]
    if n == 0:
        raise ValueError("median_bandwidth needs at least one point")
    if n < 2:
        lead = p.shape[:-2]
        return 1.0 if not lead else np.ones(lead)
    return bandwidth_from_sq(pairwise_sq_dists(p), mode)


@dataclass(frozen=True)
class RbfKernel:
    h: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")

    def eval(self, x, y) -> float:
        x, y = _check_pair(x, y)
        d = x - y
        return float(np.exp(-np.dot(d, d) / self.h))

    def grad_first(self, x, y) -> np.ndarray:
        """Gradient of ``k(x, y)`` in its first argument: ``-(2/h)(x - y) k(x, y)``."""
        x, y = _check_pair(x, y)
        return -(2.0 / self.h) * (x - y) * self.eval(x, y)

    def matrix(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        diff = xs[:, None, :] - ys[None, :, :]
        return np.exp(-np.sum(diff * diff, axis=-1) / self.h)


def _check_pair(x, y):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def rbf_eval(k: RbfKernel, x, y) -> float:
    return k.eval(x, y)


def rbf_grad_first(k: RbfKernel, x, y) -> np.ndarray:
    return k.grad_first(x, y)
