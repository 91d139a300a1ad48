"""ELBO / S-ELBO estimates, posterior diagnostics and a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Decoder, GmmPosterior
from .numcore import RngStream, log_mean_exp, log_sum_exp
from .recognition import RecognitionNet, code_log_density, draw_codes


@dataclass
class ElboReport:
    elbo: np.ndarray            # per datum
    s_elbo: np.ndarray          # per datum, averaged over repeats
    log_weights: np.ndarray     # (B, S) log p(x, z_s) - log q(z_s)
    entropy: np.ndarray         # per datum, -mean log q(z_s)
    elbo_se: np.ndarray
    s_elbo_se: np.ndarray
    samples: int
    k: int

    @property
    def mean_elbo(self):
        return float(np.mean(self.elbo))

    @property
    def mean_s_elbo(self):
        return float(np.mean(self.s_elbo))


def _log_joint(dec: Decoder, x, thetas, z, theta_average):
    """``log p(x, z)`` with the decoder particles averaged out, shape ``(B, S)``."""
    lls = np.stack([dec.log_lik(th, x, z) for th in thetas])
    if theta_average == "mean_log":
        ll = lls.mean(axis=0)
    elif theta_average == "log_mean":
        ll = log_mean_exp(lls, axis=0)
    else:
        raise ValueError("theta_average must be 'mean_log' or 'log_mean'")
    return ll + dec.log_prior_z(z)


def log_weights(dec: Decoder, x, thetas, rec: RecognitionNet, noise, theta_average="mean_log"):
    """Log importance ratios ``(B, S)`` for codes drawn with ``noise (S, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    z = draw_codes(rec, x, noise)
    lq = code_log_density(rec, x, noise)
    return _log_joint(dec, x, thetas, z, theta_average) - lq, lq


def elbo(dec, x, thetas, rec, samples=100, rng=None, noise=None, theta_average="mean_log"):
    """Single-sample ELBO averaged over ``samples`` draws; one value per datum."""
    if noise is None:
        noise = (rng or RngStream(0, 0)).normal((samples, rec.noise_dim))
    lw, _ = log_weights(dec, x, thetas, rec, noise, theta_average)
    return lw.mean(axis=1)


def s_elbo_from_log_weights(lw, k):
    """Split ``(B, S)`` log weights into ``S // k`` groups of ``k``; return mean and SE of
    ``log mean_k exp(lw)`` per datum."""
    lw = np.atleast_2d(lw)
    B, S = lw.shape
    reps = S // k
    if reps < 1:
        raise ValueError(f"need at least k={k} draws, got {S}")
    per = log_sum_exp(lw[:, :reps * k].reshape(B, reps, k), axis=-1) - np.log(k)
    se = per.std(axis=1, ddof=1) / np.sqrt(reps) if reps > 1 else np.full(B, np.nan)
    return per.mean(axis=1), se


def s_elbo(dec, x, thetas, rec, k=50, repeats=20, rng=None, noise=None, theta_average="mean_log"):
    if noise is None:
        noise = (rng or RngStream(0, 0)).normal((k * repeats, rec.noise_dim))
    lw, _ = log_weights(dec, x, thetas, rec, noise, theta_average)
    return s_elbo_from_log_weights(lw, k)[0]


def elbo_report(dec, x, thetas, rec, k=50, repeats=20, rng=None, noise=None,
                theta_average="mean_log") -> ElboReport:
    """ELBO and S-ELBO computed from one shared set of ``k * repeats`` draws."""
    if noise is None:
        noise = (rng or RngStream(0, 0)).normal((k * repeats, rec.noise_dim))
    lw, lq = log_weights(dec, x, thetas, rec, noise, theta_average)
    S = lw.shape[1]
    se = lw.std(axis=1, ddof=1) / np.sqrt(S) if S > 1 else np.full(lw.shape[0], np.nan)
    s, s_se = s_elbo_from_log_weights(lw, k)
    return ElboReport(lw.mean(axis=1), s, lw, -lq.mean(axis=1), se, s_se, S, k)


@dataclass
class PosteriorDiag:
    weight: float                 # empirical mass of mode 1
    weight_error: float
    mean_errors: np.ndarray       # Euclidean error per mode
    cov_errors: np.ndarray        # Frobenius error per mode
    mode_mass: np.ndarray         # empirical mass of each mode
    n: int


def posterior_diagnostics(samples, post: GmmPosterior, hard: bool = False) -> PosteriorDiag:
    """Compare code samples with a two-mode Gaussian posterior.

    By default each sample is split between the modes by its responsibility
    under ``post``; for exact posterior draws this makes the mode weight and
    per-mode means unbiased even when the modes overlap. ``hard=True``
    assigns each sample to the nearer mode in the posterior metric.
    """
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    if z.shape[0] < 2:
        raise ValueError("need at least two samples")
    if hard:
        d = []
        for m in (post.mean1, post.mean2):
            r = z - m
            d.append(np.einsum("si,ij,sj->s", r, post.precision, r))
        first = d[0] <= d[1]
        resp = np.stack([first, ~first], axis=1).astype(float)
    else:
        resp = post.responsibilities(z)
    mass = resp.sum(axis=0)
    means = (post.mean1, post.mean2)
    mean_err, cov_err = np.full(2, np.inf), np.full(2, np.inf)
    for i in range(2):
        if mass[i] <= 0:
            continue
        w = resp[:, i] / mass[i]
        mu = w @ z
        mean_err[i] = np.linalg.norm(mu - means[i])
        r = z - mu
        cov_err[i] = np.linalg.norm((w[:, None] * r).T @ r - post.cov)
    weight = float(mass[0] / z.shape[0])
    return PosteriorDiag(weight, abs(weight - post.weight), mean_err, cov_err, mass / z.shape[0], z.shape[0])


def grad_check(fn, grad_fn, point, eps=1e-5) -> float:
    """Largest relative error between ``grad_fn`` and central differences of ``fn``.

    Per coordinate the error is ``|fd - g| / max(|fd|, |g|, 1e-8)``.
    """
    x = np.array(point, dtype=float)
    g = np.asarray(grad_fn(x.copy()), dtype=float).reshape(x.shape)
    worst = 0.0
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        fd = (fn(xp) - fn(xm)) / (2 * eps)
        err = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8)
        worst = max(worst, err)
    return float(worst)
