"""Importance-weighted Stein transport across ``k`` independent particle groups.

Group ``i`` holds ``M`` particles. Directions pool all ``k * M`` particles as
kernel sources, each source weighted by its group's normalised importance
weight ``w_i / sum_i' w_i'``. With ``k = 1`` everything reduces to plain SVGD.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import median_bandwidth
from .numcore import log_sum_exp
from .svgd import check_scores, fd_divergence, stein_direction


class DegenerateWeightsError(FloatingPointError):
    pass


@dataclass
class WeightVector:
    """Log importance weights over groups (axis 0) and their log normaliser."""
    log_weights: np.ndarray
    log_norm: np.ndarray

    @classmethod
    def from_log_weights(cls, log_w):
        log_w = np.asarray(log_w, dtype=float)
        if np.any(np.isnan(log_w)):
            raise DegenerateWeightsError("NaN importance weight")
        if np.any(np.all(np.isneginf(log_w), axis=0)):
            raise DegenerateWeightsError("degenerate importance weights")
        return cls(log_w, log_sum_exp(log_w, axis=0))

    @property
    def normalized(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_norm)

    @property
    def k(self):
        return self.log_weights.shape[0]


def group_log_weights(log_ratios) -> WeightVector:
    """Group weights ``w_i = (1/M) sum_{n,j} ratio_inj`` from log ratios ``(k, B, M)``."""
    lr = np.asarray(log_ratios, dtype=float)
    k, M = lr.shape[0], lr.shape[-1]
    return WeightVector.from_log_weights(log_sum_exp(lr.reshape(k, -1), axis=1) - np.log(M))


def datum_log_weights(log_ratios) -> WeightVector:
    """Per-datum weights ``w_in = (1/M) sum_j ratio_inj``; result has shape ``(k, B)``."""
    lr = np.asarray(log_ratios, dtype=float)
    return WeightVector.from_log_weights(log_sum_exp(lr, axis=-1) - np.log(lr.shape[-1]))


def kde_log_density(particles, query, h=None, mode="squared"):
    """Gaussian KDE over ``particles (M, d)`` evaluated at ``query (..., d)``.

    Each kernel is ``N(p_j, (h/2) I)``, the normalised form of ``exp(-||.||^2/h)``.
    """
    p = np.asarray(particles, dtype=float)
    q = np.asarray(query, dtype=float)
    if h is None:
        h = median_bandwidth(p, mode=mode)
    var = h / 2.0
    d = p.shape[-1]
    diff = q[..., None, :] - p
    lk = -np.sum(diff * diff, axis=-1) / (2 * var) - 0.5 * d * np.log(2 * np.pi * var)
    return log_sum_exp(lk, axis=-1) - np.log(p.shape[0])


def iw_direction_theta(bank, weights, scores, mode="squared", h=None) -> np.ndarray:
    """Weighted directions for a ``(k, M, d)`` bank.

    ``weights`` are normalised group weights ``(k,)`` (or a :class:`WeightVector`).
    The bandwidth is the median heuristic over all ``k * M`` particles.
    """
    bank = np.asarray(bank, dtype=float)
    k, M, d = bank.shape
    wbar = weights.normalized if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    scores = check_scores(np.asarray(scores, dtype=float).reshape(k * M, d))
    src = bank.reshape(k * M, d)
    w_src = np.repeat(wbar, M)
    out = stein_direction(src, scores, h=h, weights=w_src, norm=M, mode=mode)
    return out.reshape(k, M, d)


def iw_direction_z(bank, weights, scores, mode="squared") -> np.ndarray:
    """Per-datum weighted directions for codes ``(k, B, M, d_z)`` with weights ``(k, B)``."""
    bank = np.asarray(bank, dtype=float)
    k, B, M, d = bank.shape
    wbar = weights.normalized if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    sc = check_scores(np.asarray(scores, dtype=float), what="code")
    src = bank.transpose(1, 0, 2, 3).reshape(B, k * M, d)
    sc = sc.transpose(1, 0, 2, 3).reshape(B, k * M, d)
    w_src = np.repeat(wbar.T, M, axis=1)
    out = stein_direction(src, sc, weights=w_src, norm=M, mode=mode)
    return out.reshape(B, k, M, d).transpose(1, 0, 2, 3)


def kl_k_from_log_ratios(log_ratios) -> tuple[float, float]:
    """Multi-sample KL estimate and its standard error from ``(G, k)`` log ratios ``log p - log q``."""
    lr = np.asarray(log_ratios, dtype=float)
    if lr.ndim == 1:
        lr = lr[:, None]
    G, k = lr.shape
    per_group = -(log_sum_exp(lr, axis=1) - np.log(k))
    se = float(np.std(per_group, ddof=1) / np.sqrt(G)) if G > 1 else float("nan")
    return float(np.mean(per_group)), se


def kl_k_estimate(samples, log_p, log_q) -> float:
    """``-(1/G) sum_g [log sum_i p/q (Theta^{g,i}) - log k]`` for samples ``(G, k, ...)`` from q."""
    s = np.asarray(samples, dtype=float)
    if s.ndim < 2:
        raise ValueError("samples must have shape (G, k, ...)")
    return kl_k_from_log_ratios(np.asarray(log_p(s)) - np.asarray(log_q(s)))[0]


def iw_kl_directional_derivative(samples, log_p, log_q, score, psi, div_psi=None) -> float:
    """Weighted estimate ``-E[(1/w~) sum_i w_i (score . psi + div psi)(Theta^i)]``.

    ``samples`` has shape ``(G, k, d)``; the callables act on ``(N, d)`` arrays.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 2:
        s = s[..., None]
    G, k, d = s.shape
    flat = s.reshape(G * k, d)
    if div_psi is None:
        div_psi = fd_divergence(psi)
    lr = (np.asarray(log_p(flat)) - np.asarray(log_q(flat))).reshape(G, k)
    wbar = np.exp(lr - log_sum_exp(lr, axis=1)[:, None])
    trace = (np.sum(np.asarray(score(flat)).reshape(G * k, d) * np.asarray(psi(flat)).reshape(G * k, d), axis=1)
             + np.asarray(div_psi(flat)).reshape(G * k)).reshape(G, k)
    return float(-np.mean(np.sum(wbar * trace, axis=1)))
