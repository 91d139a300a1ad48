"""Likelihood families with exact score functions.

Every decoder works on a flat parameter vector ``theta`` (one particle) and
vectorises over data ``x`` of shape ``(B, P)`` and codes ``z`` of shape
``(B, M, d_z)``. ``log_lik`` returns ``(B, M)``; ``scores`` returns the
gradient with respect to each code and the gradient with respect to
``theta`` summed over every ``(n, j)`` pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import nn
from .numcore import RngStream, log_sigmoid, log_sum_exp, sigmoid, softplus

LOG_2PI = np.log(2 * np.pi)
LOGIT_CLAMP = 30.0
RATE_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# Latent priors
# ---------------------------------------------------------------------------

class StandardNormalPrior:
    def log_prob(self, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI

    def score(self, z):
        return -np.asarray(z, dtype=float)


class GmmPrior:
    """Equal-weight two-component prior ``N(mu1, I)/2 + N(mu2, I)/2``."""

    def __init__(self, mu1, mu2):
        self.mu1 = np.asarray(mu1, dtype=float)
        self.mu2 = np.asarray(mu2, dtype=float)
        if self.mu1.shape != self.mu2.shape:
            raise ValueError("component means must have equal dimension")

    def _component_logs(self, z):
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        c = -0.5 * d * LOG_2PI + np.log(0.5)
        l1 = -0.5 * np.sum((z - self.mu1) ** 2, axis=-1) + c
        l2 = -0.5 * np.sum((z - self.mu2) ** 2, axis=-1) + c
        return np.stack([l1, l2], axis=-1)

    def log_prob(self, z):
        return log_sum_exp(self._component_logs(z), axis=-1)

    def responsibilities(self, z):
        logs = self._component_logs(z)
        return np.exp(logs - log_sum_exp(logs, axis=-1)[..., None])

    def score(self, z):
        z = np.asarray(z, dtype=float)
        r = self.responsibilities(z)
        return r[..., :1] * (self.mu1 - z) + r[..., 1:] * (self.mu2 - z)


def gmm_prior_score(z, mu1, mu2):
    return GmmPrior(mu1, mu2).score(z)


class GammaSoftplusPrior:
    """Gamma(shape, rate) prior on ``softplus(u) + floor``, expressed as a density on ``u``.

    Includes the log-Jacobian ``log sigmoid(u)`` of the reparameterisation.
    """

    def __init__(self, shape=2.0, rate=1.0):
        if shape <= 0 or rate <= 0:
            raise ValueError("gamma shape and rate must be positive")
        self.shape = float(shape)
        self.rate = float(rate)

    def log_prob(self, u):
        u = np.asarray(u, dtype=float)
        z = softplus(u) + RATE_FLOOR
        a, b = self.shape, self.rate
        lp = (a - 1) * np.log(z) - b * z + a * np.log(b) - gammaln(a) + log_sigmoid(u)
        return np.sum(lp, axis=-1)

    def score(self, u):
        u = np.asarray(u, dtype=float)
        z = softplus(u) + RATE_FLOOR
        s = sigmoid(u)
        return ((self.shape - 1) / z - self.rate) * s + (1.0 - s)


# ---------------------------------------------------------------------------
# Decoders
# ---------------------------------------------------------------------------

class Decoder:
    latent_dim: int
    data_dim: int
    latent_prior = StandardNormalPrior()
    prior_scale: float = 1.0

    @property
    def n_theta(self) -> int:
        raise NotImplementedError

    def init_theta(self, rng: RngStream) -> np.ndarray:
        return self.prior_scale * rng.normal(self.n_theta)

    def log_prior_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        s2 = self.prior_scale ** 2
        return -0.5 * np.sum(theta ** 2, axis=-1) / s2 - 0.5 * theta.shape[-1] * np.log(2 * np.pi * s2)

    def prior_score_theta(self, theta):
        return -np.asarray(theta, dtype=float) / self.prior_scale ** 2

    def log_prior_z(self, z):
        return self.latent_prior.log_prob(z)

    def prior_score_z(self, z):
        return self.latent_prior.score(z)

    def check_data(self, x):
        return np.asarray(x, dtype=float)

    def log_lik(self, theta, x, z):
        raise NotImplementedError

    def scores(self, theta, x, z):
        raise NotImplementedError

    def sample(self, theta, z, rng: RngStream):
        raise NotImplementedError


def _as_batch(x, z):
    """Normalise ``x`` to ``(B, P)`` and ``z`` to ``(B, M, d)``; report squeezing."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    squeeze = 0
    if x.ndim == 1:
        x = x[None]
        squeeze += 1
        if z.ndim == 1:
            z = z[None, None]
            squeeze += 1
        elif z.ndim == 2:
            z = z[None]
    elif z.ndim == 2:
        z = z[:, None]
        squeeze = -1
    return x, z, squeeze


def _unsqueeze(arr, squeeze):
    if squeeze == 2:
        return arr[0, 0]
    if squeeze == 1:
        return arr[0]
    if squeeze == -1:
        return arr[:, 0]
    return arr


@dataclass
class GaussianLinearDecoder(Decoder):
    """``x ~ N(theta z, sigma^2 I)`` with ``theta`` a ``(P, K)`` matrix.

    The latent prior is the two-component mixture when ``mu1``/``mu2`` are
    given and a standard normal otherwise.
    """
    data_dim: int
    latent_dim: int
    sigma: float = 0.1
    mu1: np.ndarray | None = None
    mu2: np.ndarray | None = None
    prior_scale: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if (self.mu1 is None) != (self.mu2 is None):
            raise ValueError("give both mixture means or neither")
        if self.mu1 is not None:
            self.latent_prior = GmmPrior(self.mu1, self.mu2)
        else:
            self.latent_prior = StandardNormalPrior()

    @property
    def n_theta(self):
        return self.data_dim * self.latent_dim

    def matrix(self, theta):
        return np.asarray(theta, dtype=float).reshape(self.data_dim, self.latent_dim)

    def log_lik(self, theta, x, z):
        A = self.matrix(theta)
        x, z, sq = _as_batch(x, z)
        r = x[:, None, :] - z @ A.T
        ll = -0.5 * np.sum(r * r, axis=-1) / self.sigma ** 2 - 0.5 * self.data_dim * np.log(
            2 * np.pi * self.sigma ** 2)
        return _unsqueeze(ll, sq)

    def scores(self, theta, x, z):
        A = self.matrix(theta)
        x, z, sq = _as_batch(x, z)
        r = (x[:, None, :] - z @ A.T) / self.sigma ** 2
        gz = r @ A
        gA = np.einsum("bmp,bmk->pk", r, z)
        return _unsqueeze(gz, sq), gA.ravel()

    def sample(self, theta, z, rng):
        z = np.asarray(z, dtype=float)
        mean = z @ self.matrix(theta).T
        return mean + self.sigma * rng.normal(mean.shape)


def gaussian_linear_scores(theta, sigma, x, z):
    """Likelihood scores for one datum: ``(theta^T r / s^2, r z^T / s^2)`` with ``r = x - theta z``."""
    A = np.atleast_2d(np.asarray(theta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    dec = GaussianLinearDecoder(A.shape[0], A.shape[1], sigma)
    gz, gA = dec.scores(A.ravel(), x, z)
    return gz, gA.reshape(A.shape)


class BernoulliMlpDecoder(Decoder):
    """Pixels ``x_p ~ Bernoulli(sigmoid(l_p))`` with logits ``l = g_theta(z)``."""

    def __init__(self, generator: nn.Mlp, prior_scale: float = 1.0):
        if generator.layers[-1].activation != "identity":
            raise ValueError("generator must output raw logits (identity final activation)")
        self.net = generator.copy()
        self.latent_dim = generator.n_in
        self.data_dim = generator.n_out
        self.prior_scale = prior_scale
        self.latent_prior = StandardNormalPrior()
        self._template = generator.get_flat()

    @property
    def n_theta(self):
        return self.net.n_params

    def init_theta(self, rng):
        # fan-in scaled weights rather than the prior draw; biases start at 0
        out = []
        for l in self.net.layers:
            out.append(rng.normal(l.W.size) / np.sqrt(l.n_in))
            out.append(np.zeros(l.b.size))
        return np.concatenate(out)

    def check_data(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all((x == 0) | (x == 1)):
            raise ValueError("Bernoulli data must be binary (0/1)")
        return x

    def _logits(self, theta, z):
        self.net.set_flat(theta)
        flat = z.reshape(-1, z.shape[-1])
        l, tape = nn.forward(self.net, flat)
        return l.reshape(z.shape[:-1] + (self.data_dim,)), tape

    def log_lik(self, theta, x, z):
        x, z, sq = _as_batch(x, z)
        l, _ = self._logits(theta, z)
        lc = np.clip(l, -LOGIT_CLAMP, LOGIT_CLAMP)
        ll = np.sum(x[:, None, :] * lc - softplus(lc), axis=-1)
        return _unsqueeze(ll, sq)

    def scores(self, theta, x, z):
        x, z, sq = _as_batch(x, z)
        l, tape = self._logits(theta, z)
        inside = np.abs(l) < LOGIT_CLAMP
        lc = np.clip(l, -LOGIT_CLAMP, LOGIT_CLAMP)
        cot = (x[:, None, :] - sigmoid(lc)) * inside
        grads, gin = nn.backward(self.net, tape, cot.reshape(-1, self.data_dim))
        gz = gin.reshape(z.shape)
        return _unsqueeze(gz, sq), nn.flatten_grads(grads)

    def sample(self, theta, z, rng):
        l, _ = self._logits(theta, np.asarray(z, dtype=float))
        return (rng.uniform(l.shape) < sigmoid(l)).astype(float)


def bernoulli_scores(dec: BernoulliMlpDecoder, theta, x, z):
    dec.check_data(x)
    return dec.scores(theta, x, z)


class PoissonFactorDecoder(Decoder):
    """``x ~ Pois(theta z)`` with positive loadings and scores.

    Loadings and scores are stored unconstrained; the positive values are
    ``softplus(.) + 1e-6``. Loadings carry independent Gamma(alpha, 1) priors
    and scores Gamma(shape, rate) priors, both with softplus log-Jacobians.
    """

    def __init__(self, data_dim, latent_dim, alpha=1.1, z_shape=2.0, z_rate=1.0):
        self.data_dim = int(data_dim)
        self.latent_dim = int(latent_dim)
        self.latent_prior = GammaSoftplusPrior(z_shape, z_rate)
        self.theta_prior = GammaSoftplusPrior(alpha, 1.0)
        self.alpha = alpha

    @property
    def n_theta(self):
        return self.data_dim * self.latent_dim

    def init_theta(self, rng):
        return rng.normal(self.n_theta)

    def loadings(self, theta):
        t = np.asarray(theta, dtype=float).reshape(self.data_dim, self.latent_dim)
        return softplus(t) + RATE_FLOOR

    def log_prior_theta(self, theta):
        return self.theta_prior.log_prob(np.asarray(theta, dtype=float))

    def prior_score_theta(self, theta):
        return self.theta_prior.score(np.asarray(theta, dtype=float))

    def check_data(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x != np.round(x)):
            raise ValueError("Poisson data must be nonnegative integers")
        return x

    def _rates(self, theta, z):
        L = self.loadings(theta)
        zc = softplus(z) + RATE_FLOOR
        return L, zc, zc @ L.T

    def log_lik(self, theta, x, z):
        x, z, sq = _as_batch(x, z)
        _, _, lam = self._rates(theta, z)
        if np.any((lam <= 0) & (x[:, None, :] > 0)):
            raise FloatingPointError("zero Poisson rate with positive count")
        ll = np.sum(x[:, None, :] * np.log(lam) - lam - gammaln(x[:, None, :] + 1), axis=-1)
        return _unsqueeze(ll, sq)

    def scores(self, theta, x, z):
        x, z, sq = _as_batch(x, z)
        L, zc, lam = self._rates(theta, z)
        g = x[:, None, :] / lam - 1.0              # d loglik / d rate
        gz = (g @ L) * sigmoid(z)
        t = np.asarray(theta, dtype=float).reshape(self.data_dim, self.latent_dim)
        gL = np.einsum("bmp,bmv->pv", g, zc) * sigmoid(t)
        return _unsqueeze(gz, sq), gL.ravel()

    def posterior_quantity(self, z):
        """Map unconstrained codes to the positive factor scores."""
        return softplus(z) + RATE_FLOOR

    def sample(self, theta, z, rng):
        _, _, lam = self._rates(theta, np.asarray(z, dtype=float))
        return rng.generator.poisson(lam).astype(float)


def poisson_scores(dec: PoissonFactorDecoder, theta, x, z):
    """Full log-joint scores (likelihood + priors + log-Jacobians) in unconstrained coordinates."""
    dec.check_data(x)
    gz, gt = dec.scores(theta, x, z)
    return gz + dec.prior_score_z(z), gt + dec.prior_score_theta(theta)


@dataclass
class SoftmaxLabelDecoder:
    """``p(y | z) = softmax(W z)[y]`` with ``W`` a ``(C, d_z)`` matrix; labels are ``0..C-1``."""
    n_classes: int
    latent_dim: int
    prior_scale: float = 1.0

    @property
    def n_theta(self):
        return self.n_classes * self.latent_dim

    def init_theta(self, rng):
        return self.prior_scale * rng.normal(self.n_theta)

    def matrix(self, phi):
        return np.asarray(phi, dtype=float).reshape(self.n_classes, self.latent_dim)

    def check_labels(self, y):
        y = np.asarray(y)
        if np.any((y < 0) | (y >= self.n_classes)) or np.any(y != np.round(y)):
            raise ValueError(f"labels must be integers in [0, {self.n_classes})")
        return y.astype(int)

    def probs(self, phi, z):
        logits = np.asarray(z, dtype=float) @ self.matrix(phi).T
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=-1, keepdims=True)

    def log_lik(self, phi, y, z):
        y = self.check_labels(y)
        z = np.asarray(z, dtype=float)
        logits = z @ self.matrix(phi).T
        lse = log_sum_exp(logits, axis=-1)
        picked = np.take_along_axis(logits, np.broadcast_to(
            y.reshape(y.shape + (1,) * (logits.ndim - y.ndim)), logits.shape[:-1] + (1,)), axis=-1)[..., 0]
        return picked - lse

    def scores(self, phi, y, z):
        """Gradients of ``log softmax(W z)[y]``; ``y`` broadcasts over code samples."""
        y = self.check_labels(y)
        z = np.asarray(z, dtype=float)
        W = self.matrix(phi)
        p = self.probs(phi, z)
        onehot = np.eye(self.n_classes)[y]
        onehot = onehot.reshape(onehot.shape[:-1] + (1,) * (p.ndim - onehot.ndim) + (self.n_classes,))
        r = onehot - p
        gz = r @ W
        gW = r.reshape(-1, self.n_classes).T @ z.reshape(-1, self.latent_dim)
        return gz, gW.ravel()

    def log_prior_theta(self, phi):
        phi = np.asarray(phi, dtype=float)
        s2 = self.prior_scale ** 2
        return -0.5 * np.sum(phi ** 2, axis=-1) / s2 - 0.5 * phi.shape[-1] * np.log(2 * np.pi * s2)

    def prior_score_theta(self, phi):
        return -np.asarray(phi, dtype=float) / self.prior_scale ** 2


def softmax_label_scores(dec: SoftmaxLabelDecoder, phi, y, z):
    gz, gW = dec.scores(phi, y, z)
    return gz, gW.reshape(dec.n_classes, dec.latent_dim)


# ---------------------------------------------------------------------------
# Analytic posterior for the Gaussian-mixture / linear-Gaussian model
# ---------------------------------------------------------------------------

@dataclass
class GmmPosterior:
    weight: float            # posterior probability of component 1
    mean1: np.ndarray
    mean2: np.ndarray
    cov: np.ndarray          # shared covariance (inverse of the precision)
    precision: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"mixture weight {self.weight} outside [0, 1]")

    def log_component_densities(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        _, logdet = np.linalg.slogdet(self.precision)
        d = z.shape[-1]
        out = []
        for m in (self.mean1, self.mean2):
            r = z - m
            out.append(-0.5 * np.einsum("si,ij,sj->s", r, self.precision, r)
                       + 0.5 * logdet - 0.5 * d * LOG_2PI)
        return np.stack(out, axis=-1)

    def responsibilities(self, z):
        logs = self.log_component_densities(z)
        with np.errstate(divide="ignore"):
            logs = logs + np.log([self.weight, 1.0 - self.weight])
        return np.exp(logs - log_sum_exp(logs, axis=-1)[:, None])

    def sample(self, rng: RngStream, n: int):
        L = np.linalg.cholesky(self.cov)
        pick = rng.uniform(n) < self.weight
        eps = rng.normal((n, self.cov.shape[0])) @ L.T
        return np.where(pick[:, None], self.mean1, self.mean2) + eps


def gmm_analytic_posterior(x, theta, sigma, mu1, mu2, reading="standard") -> GmmPosterior:
    """Closed-form posterior of ``z`` under the mixture prior and linear-Gaussian likelihood.

    ``reading="standard"`` completes the square with ``+mu_i`` and weights
    ``exp(-p_i / 2)``. ``reading="as_printed"`` uses ``-mu_i`` and weights
    ``exp(p_i)`` literally; it is kept for comparison only and disagrees with
    numerical integration.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    A = np.atleast_2d(np.asarray(theta, dtype=float))
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    K = A.shape[1]
    prec = A.T @ A / sigma ** 2 + np.eye(K)
    try:
        cov = np.linalg.inv(prec)
    except np.linalg.LinAlgError as exc:
        raise ValueError("posterior precision is singular") from exc
    b = A.T @ x / sigma ** 2
    if reading == "standard":
        m1, m2 = cov @ (b + mu1), cov @ (b + mu2)
        log_w1 = 0.5 * m1 @ prec @ m1 - 0.5 * mu1 @ mu1
        log_w2 = 0.5 * m2 @ prec @ m2 - 0.5 * mu2 @ mu2
        weight = float(sigmoid(log_w1 - log_w2))
    elif reading == "as_printed":
        m1, m2 = cov @ (b - mu1), cov @ (b - mu2)
        base = x @ x / sigma ** 2
        p1 = base + mu1 @ mu1 - m1 @ prec @ m1
        p2 = base + mu2 @ mu2 - m2 @ prec @ m2
        weight = float(sigmoid(p1 - p2))
    else:
        raise ValueError(f"unknown reading {reading!r}")
    return GmmPosterior(weight, m1, m2, cov, prec)
