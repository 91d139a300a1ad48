"""Independent numerical references used to validate trained or closed-form posteriors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .models import PoissonFactorDecoder
from .numcore import RngStream, log_sum_exp


@dataclass
class GridPosterior:
    weight: float
    mean1: np.ndarray
    mean2: np.ndarray
    edge_mass: float      # largest normalised density on the grid boundary


def gmm_grid_posterior(x, theta, sigma, mu1, mu2, n=401, lim=8.0) -> GridPosterior:
    """Two-dimensional trapezoid quadrature of each mixture component's posterior.

    Each component ``N(x; theta z, sigma^2 I) N(z; mu_i, I)`` is integrated
    separately in log space, which yields its evidence (hence the mixture
    weight) and its mean without any closed-form algebra.
    """
    A = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    g = np.linspace(-lim, lim, n)
    Z1, Z2 = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([Z1, Z2], axis=-1)
    resid = x - pts @ A.T
    loglik = -0.5 * np.sum(resid ** 2, axis=-1) / sigma ** 2
    logs, means, edges = [], [], []
    for mu in (np.asarray(mu1, float), np.asarray(mu2, float)):
        lp = loglik - 0.5 * np.sum((pts - mu) ** 2, axis=-1)
        shift = lp.max()
        dens = np.exp(lp - shift)
        Z = trapezoid(trapezoid(dens, g, axis=1), g)
        m = np.array([trapezoid(trapezoid(dens * pts[..., c], g, axis=1), g) for c in range(2)]) / Z
        logs.append(np.log(Z) + shift)
        means.append(m)
        border = np.concatenate([dens[0], dens[-1], dens[:, 0], dens[:, -1]])
        edges.append(border.max())
    logs = np.array(logs)
    w = float(np.exp(logs[0] - log_sum_exp(logs)))
    return GridPosterior(w, means[0], means[1], float(max(edges)))


def pfa_snis_mean(dec: PoissonFactorDecoder, theta, x, n=10 ** 6, rng: RngStream | None = None,
                  chunk=200_000):
    """Posterior mean of the positive factor scores by self-normalised importance sampling.

    Proposals are ``n`` draws from the Gamma prior on the scores; weights are
    the Poisson likelihoods. Returns ``(mean, effective_sample_size)``.
    """
    rng = rng or RngStream(0, 0)
    L = dec.loadings(theta)
    x = np.asarray(x, dtype=float)
    a, b = dec.latent_prior.shape, dec.latent_prior.rate
    logw_all, z_all = [], []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        z = rng.generator.gamma(a, 1.0 / b, size=(m, dec.latent_dim))
        lam = z @ L.T
        logw_all.append(np.sum(x * np.log(lam) - lam, axis=1))
        z_all.append(z)
        done += m
    logw = np.concatenate(logw_all)
    z = np.concatenate(z_all)
    w = np.exp(logw - log_sum_exp(logw))
    return w @ z, float(1.0 / np.sum(w * w))
