"""Stein variational transport of particle sets.

The direction for particle ``x_j`` is

    delta_j = (1/M) sum_j' [ k(x_j', x_j) score(x_j') + grad_{x_j'} k(x_j', x_j) ]

and is treated as an ascent direction. All heavy lifting goes through
:func:`stein_direction`, which also serves the importance-weighted variant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import bandwidth_from_sq, pairwise_sq_dists

ScoreFn = Callable[[np.ndarray], np.ndarray]


class NonFiniteScoreError(FloatingPointError):
    pass


def check_scores(scores, what="particle"):
    scores = np.asarray(scores, dtype=float)
    bad = ~np.all(np.isfinite(scores), axis=-1)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        idx = idx[0] if len(idx) == 1 else idx
        raise NonFiniteScoreError(f"non-finite score at {what} index {idx}")
    return scores


def stein_direction(sources, scores, targets=None, h=None, weights=None, norm=None,
                    mode="squared"):
    """Kernel-smoothed Stein direction evaluated at ``targets``.

    Shapes: ``sources`` and ``scores`` are ``(..., S, d)``, ``targets``
    ``(..., T, d)`` (defaults to ``sources``), ``h`` broadcasts against the
    leading dims, ``weights`` is ``(..., S)`` (defaults to ones). The sum over
    sources is divided by ``norm`` (defaults to ``S``).
    """
    src = np.asarray(sources, dtype=float)
    sc = np.asarray(scores, dtype=float)
    tgt = src if targets is None else np.asarray(targets, dtype=float)
    if sc.shape != src.shape:
        raise ValueError(f"scores shape {sc.shape} does not match particles {src.shape}")
    sq = pairwise_sq_dists(src, tgt)
    if h is None:
        h = bandwidth_from_sq(sq if targets is None else pairwise_sq_dists(src), mode)
    h = np.asarray(h, dtype=float)[..., None, None]
    w = np.ones(src.shape[:-1]) if weights is None else np.asarray(weights, dtype=float)
    if norm is None:
        norm = src.shape[-2]
    Kw = np.exp(-sq / h) * w[..., :, None]
    KwT = np.swapaxes(Kw, -1, -2)
    drive = KwT @ sc
    # sum_s Kw[s, t] (src_s - tgt_t), without materialising the differences
    pull = KwT @ src - Kw.sum(axis=-2)[..., :, None] * tgt
    return (drive + pull * (-2.0 / h)) / norm


def svgd_direction(particles, score, h=None, mode="squared") -> np.ndarray:
    """SVGD update directions for an ``(M, d)`` particle array.

    ``score`` is either a callable mapping one particle to its score vector or
    a precomputed ``(M, d)`` array.
    """
    x = np.asarray(particles, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 1:
        raise ValueError("need at least one particle")
    if callable(score):
        s = np.stack([np.atleast_1d(np.asarray(score(p), dtype=float)) for p in x])
    else:
        s = np.asarray(score, dtype=float).reshape(x.shape)
    check_scores(s)
    return stein_direction(x, s, h=h, mode=mode)


@dataclass
class CodeBank:
    """Latent-code particles ``(N, M, d_z)`` with an id -> row map."""
    codes: np.ndarray
    ids: list | None = None

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=float)
        if self.codes.ndim != 3:
            raise ValueError("codes must have shape (N, M, d_z)")
        if self.ids is None:
            self.ids = list(range(self.codes.shape[0]))
        self._rows = {d: i for i, d in enumerate(self.ids)}

    def row(self, datum) -> int:
        try:
            return self._rows[datum]
        except KeyError:
            raise KeyError(f"datum {datum!r} not in code bank") from None


def svgd_direction_codes(bank: CodeBank, datum, score, mode="squared") -> np.ndarray:
    """Per-datum SVGD directions over that datum's M codes."""
    z = bank.codes[bank.row(datum)]
    return svgd_direction(z, score, mode=mode)


def code_directions(codes, scores, mode="squared", weights=None, norm=None):
    """Batched per-datum directions for codes ``(B, M, d_z)``; each datum gets
    its own median bandwidth."""
    codes = np.asarray(codes, dtype=float)
    check_scores(scores, what="code")
    return stein_direction(codes, scores, weights=weights, norm=norm, mode=mode)


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Elementwise Adam minimiser over an array of fixed shape."""

    def __init__(self, shape, config: AdamConfig | None = None):
        self.config = config or AdamConfig()
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params, grad):
        c = self.config
        if grad.shape != self.m.shape:
            raise ValueError(f"gradient shape {grad.shape} != optimiser shape {self.m.shape}")
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        mhat = self.m / (1 - c.beta1 ** self.t)
        vhat = self.v / (1 - c.beta2 ** self.t)
        return params - c.lr * mhat / (np.sqrt(vhat) + c.eps)


@dataclass
class ParticleSet:
    """Particles ``(..., M, d)`` plus optimiser state.

    ``optimizer="adam"`` feeds ``-delta`` to Adam; ``"sgd"`` applies the raw
    step ``x + lr * delta``.
    """
    particles: np.ndarray
    lr: float = 2e-4
    optimizer: str = "adam"
    adam: Adam | None = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        self.particles = np.array(self.particles, dtype=float)
        if self.particles.ndim < 2 or self.particles.shape[-2] < 1:
            raise ValueError("particles must have shape (..., M, d) with M >= 1")
        if not np.all(np.isfinite(self.particles)):
            raise ValueError("particles must be finite")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.adam is None:
            self.adam = Adam(self.particles.shape, AdamConfig(lr=self.lr))

    @property
    def n_particles(self):
        return self.particles.shape[-2]

    @property
    def dim(self):
        return self.particles.shape[-1]


def apply_step(pset: ParticleSet, deltas) -> ParticleSet:
    """Move particles along ascent directions ``deltas`` (in place)."""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != pset.particles.shape:
        raise ValueError(f"delta shape {deltas.shape} != particle shape {pset.particles.shape}")
    if pset.optimizer == "adam":
        pset.particles = pset.adam.step(pset.particles, -deltas)
    else:
        pset.particles = pset.particles + pset.lr * deltas
    pset.t += 1
    return pset


def fd_divergence(psi, eps=1e-5):
    """Central-difference divergence of a vector field acting on ``(S, d)``."""
    def div(x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[0])
        for i in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[i] = eps
            total += (psi(x + e)[:, i] - psi(x - e)[:, i]) / (2 * eps)
        return total
    return div


def kl_directional_derivative(samples, psi, score, div_psi=None) -> float:
    """Sample estimate of d/de KL(q_T || p) at e = 0 for ``T(x) = x + e psi(x)``.

    ``samples`` are draws from q, shape ``(S,)`` or ``(S, d)``. ``psi`` and
    ``score`` map ``(S, d)`` arrays to ``(S, d)``; ``div_psi`` maps to ``(S,)``
    and defaults to a finite-difference divergence.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if div_psi is None:
        div_psi = fd_divergence(psi)
    p = np.asarray(psi(x), dtype=float).reshape(x.shape)
    s = np.asarray(score(x), dtype=float).reshape(x.shape)
    d = np.asarray(div_psi(x), dtype=float).reshape(x.shape[0])
    return float(-np.mean(np.sum(s * p, axis=1) + d))
