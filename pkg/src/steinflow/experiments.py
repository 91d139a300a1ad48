"""Desk-scale experiments and the verification harness behind the ``steinflow`` CLI.

Each ``run_*`` function takes a :class:`~steinflow.trainer.RunConfig`, trains
from scratch and returns an :class:`ExperimentResult` holding the metric
history, per-datum code samples and a list of named pass/fail checks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .evaluation import elbo, elbo_report, grad_check, posterior_diagnostics
from .iwsvgd import iw_kl_directional_derivative, kl_k_from_log_ratios
from .kernels import RbfKernel
from .models import (BernoulliMlpDecoder, GammaSoftplusPrior, GaussianLinearDecoder, GmmPrior,
                     PoissonFactorDecoder, SoftmaxLabelDecoder, gmm_analytic_posterior)
from .numcore import RngStream
from .oracles import pfa_snis_mean
from .recognition import RecognitionNet, code_log_density, draw_codes
from .svgd import kl_directional_derivative, svgd_direction
from .trainer import (RunConfig, TrainState, init_state, predict_label,
                      semisup_epoch, stein_vae_epoch, stein_viwae_epoch)

# data streams live well away from the trainer's stream ids
STREAM_TRAIN_DATA = 101
STREAM_TEST_DATA = 102
STREAM_EVAL_NOISE = 103
STREAM_MODEL = 104

GMM_THETA = np.array([[2.0, -1.0], [1.0, -2.0]])
GMM_SIGMA = 0.1
GMM_MU1 = np.array([5.0, 5.0])
GMM_MU2 = np.array([-5.0, -5.0])


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    tag: str
    history: list = field(default_factory=list)        # (epoch, minibatch, name, value)
    samples: list = field(default_factory=list)        # (datum_id, sample_id, dim, value)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    state: TrainState | None = None

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def _epoch_fn(state: TrainState):
    return stein_viwae_epoch if state.k > 1 else stein_vae_epoch


def _sample_rows(codes):
    rows = []
    for n, zs in enumerate(codes):
        for j, z in enumerate(zs):
            for d, v in enumerate(np.atleast_1d(z)):
                rows.append((n, j, d, float(v)))
    return rows


# ---------------------------------------------------------------------------
# Gaussian mixture prior with a linear-Gaussian likelihood
# ---------------------------------------------------------------------------

def gmm_data(seed, n, stream=STREAM_TRAIN_DATA):
    rng = RngStream(seed, stream)
    pick = rng.uniform(n) < 0.5
    z = np.where(pick[:, None], GMM_MU1, GMM_MU2) + rng.normal((n, 2))
    x = z @ GMM_THETA.T + GMM_SIGMA * rng.normal((n, 2))
    return x, z


def gmm_decoder():
    return GaussianLinearDecoder(2, 2, GMM_SIGMA, GMM_MU1, GMM_MU2)


def run_gmm(cfg: RunConfig, log=print) -> ExperimentResult:
    """Amortised inference for the mixture-prior model with the decoder held at its true value."""
    n_train = cfg.n_train or 2000
    n_test = cfg.n_test or 10
    x_tr, _ = gmm_data(cfg.seed, n_train)
    x_te, _ = gmm_data(cfg.seed, n_test, STREAM_TEST_DATA)
    # extra points whose latent sits near z1 + z2 = 0, where both modes carry weight
    z_mid = np.array([[1.0, -1.0], [-0.5, 0.55], [2.0, -2.05]])
    x_te = np.concatenate([x_te, z_mid @ GMM_THETA.T])
    dec = gmm_decoder()
    state = init_state(dec, cfg, x_tr, theta_init=GMM_THETA.ravel())
    posts = [gmm_analytic_posterior(x, GMM_THETA, GMM_SIGMA, GMM_MU1, GMM_MU2) for x in x_te]
    eval_noise = RngStream(cfg.seed, STREAM_EVAL_NOISE).normal((cfg.particles, 2))
    epoch = _epoch_fn(state)

    def evaluate():
        codes = draw_codes(state.rec, x_te, eval_noise)
        diags = [posterior_diagnostics(c, p) for c, p in zip(codes, posts)]
        return codes, diags

    for _ in range(cfg.epochs):
        epoch(state, x_tr, cfg)
        _, diags = evaluate()
        state.log("test_weight_error", np.mean([d.weight_error for d in diags[:n_test]]))
        log(f"epoch {state.epoch}: mean weight error {state.history[-1][3]:.4f}")

    codes, diags = evaluate()
    res = ExperimentResult("gmm", state.history, _sample_rows(codes), state=state)
    for n, (p, d) in enumerate(zip(posts[:n_test], diags[:n_test])):
        res.checks.append(Check(f"datum {n} mode weight", d.weight_error <= 0.15,
                                f"empirical {d.weight:.4f} analytic {p.weight:.4f}"))
        # a mode with negligible analytic weight has no meaningful sample mean
        live = np.array([p.weight, 1 - p.weight]) >= 0.05
        res.checks.append(Check(f"datum {n} mode means", bool(np.all(d.mean_errors[live] <= 0.5)),
                                f"errors {d.mean_errors[0]:.4f} {d.mean_errors[1]:.4f}"))
        if 0.2 <= p.weight <= 0.8:
            res.checks.append(Check(f"datum {n} both modes populated", bool(np.all(d.mode_mass >= 0.05)),
                                    f"mass {d.mode_mass[0]:.3f} {d.mode_mass[1]:.3f}"))
    boundary = [{"analytic_weight": float(p.weight), "empirical_weight": float(d.weight),
                 "mean_errors": d.mean_errors.tolist()} for p, d in zip(posts[n_test:], diags[n_test:])]
    res.summary = {
        "mean_weight_error": float(np.mean([d.weight_error for d in diags[:n_test]])),
        "max_weight_error": float(np.max([d.weight_error for d in diags[:n_test]])),
        "max_mean_error": float(np.max([d.mean_errors[np.array([p.weight, 1 - p.weight]) >= 0.05].max()
                                        for p, d in zip(posts[:n_test], diags[:n_test])])),
        "analytic_weights": [float(p.weight) for p in posts[:n_test]],
        "empirical_weights": [float(d.weight) for d in diags[:n_test]],
        "boundary_points": boundary,
    }
    return res


# ---------------------------------------------------------------------------
# Poisson factor analysis
# ---------------------------------------------------------------------------

PFA_P, PFA_V = 5, 2


def pfa_setup(seed, n, stream=STREAM_TRAIN_DATA):
    """True loadings (fixed by ``seed``) and ``n`` synthetic count vectors."""
    dec = PoissonFactorDecoder(PFA_P, PFA_V)
    rng_m = RngStream(seed, STREAM_MODEL)
    loadings = rng_m.generator.gamma(2.0, 1.0, size=(PFA_P, PFA_V))
    theta = np.log(np.expm1(loadings)).ravel()     # inverse softplus
    rng = RngStream(seed, stream)
    z = rng.generator.gamma(dec.latent_prior.shape, 1.0 / dec.latent_prior.rate, size=(n, PFA_V))
    x = rng.generator.poisson(z @ dec.loadings(theta).T).astype(float)
    return dec, theta, x


def run_pfa(cfg: RunConfig, log=print, oracle_draws=10 ** 6) -> ExperimentResult:
    n_train = cfg.n_train or 1000
    n_test = cfg.n_test or 10
    dec, theta, x_tr = pfa_setup(cfg.seed, n_train)
    _, _, x_te = pfa_setup(cfg.seed, n_test, STREAM_TEST_DATA)
    state = init_state(dec, cfg, x_tr, theta_init=theta)
    epoch = _epoch_fn(state)
    eval_noise = RngStream(cfg.seed, STREAM_EVAL_NOISE).normal((cfg.particles, PFA_V))
    t0 = time.perf_counter()
    oracle = [pfa_snis_mean(dec, theta, x, n=oracle_draws, rng=RngStream(cfg.seed, 1000 + i))
              for i, x in enumerate(x_te)]
    log(f"oracle built in {time.perf_counter() - t0:.1f}s")

    def rel_errors():
        codes = draw_codes(state.rec, x_te, eval_noise)
        means = dec.posterior_quantity(codes).mean(axis=1)
        # worst coordinate of each datum's relative error
        errs = [np.max(np.abs(m - o[0]) / np.abs(o[0])) for m, o in zip(means, oracle)]
        return codes, means, np.array(errs)

    for _ in range(cfg.epochs):
        epoch(state, x_tr, cfg)
        _, _, errs = rel_errors()
        state.log("test_rel_error", errs.mean())
        log(f"epoch {state.epoch}: mean relative error {errs.mean():.4f}")
    codes, means, errs = rel_errors()
    res = ExperimentResult("pfa", state.history, _sample_rows(dec.posterior_quantity(codes)), state=state)
    for n, e in enumerate(errs):
        res.checks.append(Check(f"datum {n} posterior mean", bool(e <= 0.2),
                                f"relative error {e:.4f} (ESS {oracle[n][1]:.0f})"))
    res.summary = {"mean_rel_error": float(errs.mean()), "max_rel_error": float(errs.max()),
                   "recognition_means": means.tolist(), "oracle_means": [o[0].tolist() for o in oracle]}
    return res


# ---------------------------------------------------------------------------
# Binary toy images with a small MLP decoder
# ---------------------------------------------------------------------------

TOY_PIXELS = 64
TOY_LATENT = 2
TOY_HIDDEN = 50


def toy_generator(seed):
    """Fixed 2 -> 50 -> 64 generator with sharp logits."""
    rng = RngStream(seed, STREAM_MODEL)
    net = nn.Mlp.create([TOY_LATENT, TOY_HIDDEN, TOY_PIXELS], ["tanh", "identity"], rng=rng)
    net.set_flat(3.0 * net.get_flat())
    return net


def toy_binary_data(seed, n, stream=STREAM_TRAIN_DATA):
    gen = toy_generator(seed)
    rng = RngStream(seed, stream)
    z = rng.normal((n, TOY_LATENT))
    logits, _ = nn.forward(gen, z)
    return (rng.uniform(logits.shape) < 1.0 / (1.0 + np.exp(-logits))).astype(float)


def count_violation_run(values):
    """Longest run of consecutive non-increases in ``values``."""
    worst = cur = 0
    for a, b in zip(values[:-1], values[1:]):
        cur = cur + 1 if b <= a else 0
        worst = max(worst, cur)
    return worst


def run_density_toy(cfg: RunConfig, log=print) -> ExperimentResult:
    n_train = cfg.n_train or 1000
    n_test = cfg.n_test or 100
    x_tr = toy_binary_data(cfg.seed, n_train)
    x_te = toy_binary_data(cfg.seed, n_test, STREAM_TEST_DATA)
    template = nn.Mlp.create([TOY_LATENT, cfg.hidden, TOY_PIXELS], ["tanh", "identity"])
    dec = BernoulliMlpDecoder(template, prior_scale=cfg.prior_scale)
    state = init_state(dec, cfg, x_tr)
    epoch = _epoch_fn(state)
    eval_rng = RngStream(cfg.seed, STREAM_EVAL_NOISE)
    noise = eval_rng.normal((200, TOY_LATENT))
    curve = []
    for _ in range(cfg.epochs):
        epoch(state, x_tr, cfg)
        val = float(np.mean(elbo(dec, x_te, state.theta_flat(), state.rec, noise=noise)))
        curve.append(val)
        state.log("test_elbo", val)
        log(f"epoch {state.epoch}: held-out ELBO {val:.4f}")
    rep = elbo_report(dec, x_te, state.theta_flat(), state.rec, k=50, repeats=20,
                      noise=eval_rng.normal((1000, TOY_LATENT)))
    B = len(x_te)
    se_e = float(np.sqrt(np.sum(rep.elbo_se ** 2)) / B)
    se_s = float(np.sqrt(np.sum(rep.s_elbo_se ** 2)) / B)
    combined = float(np.hypot(se_e, se_s))
    first = curve[:20]
    run = count_violation_run(first)
    res = ExperimentResult("density-toy", state.history, state=state)
    show = draw_codes(state.rec, x_te[:5], noise[:20])
    res.samples = _sample_rows(show)
    res.checks.append(Check("held-out ELBO increases", len(first) >= 2 and run <= 2,
                            f"longest run of non-increases {run} over {len(first)} epochs"))
    res.checks.append(Check("S-ELBO(k=50) >= ELBO - 2 SE", rep.mean_s_elbo >= rep.mean_elbo - 2 * combined,
                            f"S-ELBO {rep.mean_s_elbo:.4f} ELBO {rep.mean_elbo:.4f} SE {combined:.4f}"))
    res.summary = {"elbo_curve": curve, "final_elbo": rep.mean_elbo, "final_s_elbo": rep.mean_s_elbo,
                   "combined_se": combined}
    return res


# ---------------------------------------------------------------------------
# Semi-supervised toy
# ---------------------------------------------------------------------------

SEMI_X_DIM = 10
SEMI_SIGMA = 0.5
SEMI_CENTER = np.array([2.5, 2.5])


def semisup_data(seed, n_unlabeled=500, n_per_class=10, n_test=200):
    """Two latent classes at ``+-center`` pushed through a fixed random linear decoder."""
    rng_m = RngStream(seed, STREAM_MODEL)
    A = rng_m.normal((SEMI_X_DIM, 2))

    def draw(n, stream):
        rng = RngStream(seed, stream)
        y = (rng.uniform(n) < 0.5).astype(int)
        z = np.where(y[:, None] == 1, SEMI_CENTER, -SEMI_CENTER) + rng.normal((n, 2))
        return z @ A.T + SEMI_SIGMA * rng.normal((n, SEMI_X_DIM)), y

    xu, _ = draw(n_unlabeled, STREAM_TRAIN_DATA)
    rng = RngStream(seed, 105)
    yl = np.repeat([0, 1], n_per_class)
    zl = np.where(yl[:, None] == 1, SEMI_CENTER, -SEMI_CENTER) + rng.normal((2 * n_per_class, 2))
    xl = zl @ A.T + SEMI_SIGMA * rng.normal((2 * n_per_class, SEMI_X_DIM))
    xt, yt = draw(n_test, STREAM_TEST_DATA)
    return A, xu, (xl, yl), (xt, yt)


def semisup_accuracy(cfg: RunConfig, log=print, shuffle_stream=None):
    """Train on one seed and return ``(test accuracy, state)``.

    ``shuffle_stream`` swaps in a different minibatch-order stream while
    keeping data, initialisation and noise fixed.
    """
    A, xu, lab, (xt, yt) = semisup_data(cfg.seed)
    dec = GaussianLinearDecoder(SEMI_X_DIM, 2, SEMI_SIGMA)
    ldec = SoftmaxLabelDecoder(2, 2, prior_scale=cfg.prior_scale)
    state = init_state(dec, cfg, np.concatenate([xu, lab[0]]), label_decoder=ldec, theta_init=A.ravel())
    if shuffle_stream is not None:
        state.rngs["shuffle"] = RngStream(cfg.seed, shuffle_stream)
    for _ in range(cfg.epochs):
        semisup_epoch(state, xu, lab, cfg)
    probs = predict_label(xt, state.label_flat(), state.rec, ldec, samples=20,
                          rng=RngStream(cfg.seed, STREAM_EVAL_NOISE))
    acc = float(np.mean(np.argmax(probs, axis=1) == yt))
    state.log("test_accuracy", acc)
    return acc, state


def run_semisup_toy(cfg: RunConfig, log=print, seeds=5) -> ExperimentResult:
    res = ExperimentResult("semisup-toy")
    accs = {}
    for label, k in (("vae", 1), ("viwae", 5)):
        accs[label] = []
        for s in range(seeds):
            c = replace(cfg, seed=cfg.seed + s, iw_samples=k)
            acc, state = semisup_accuracy(c, log)
            accs[label].append(acc)
            for (e, mb, name, v) in state.history:
                res.history.append((e, mb, f"{label}/seed{c.seed}/{name}", v))
            log(f"{label} seed {c.seed}: accuracy {acc:.4f}")
    for label in accs:
        for s, a in enumerate(accs[label]):
            res.checks.append(Check(f"{label} seed {cfg.seed + s} accuracy", a >= 0.9, f"{a:.4f}"))
    res.summary = {f"{m}_accuracy": v for m, v in accs.items()}
    res.summary.update({f"{m}_accuracy_var": float(np.var(v)) for m, v in accs.items()})
    return res


# ---------------------------------------------------------------------------
# Verification harness
# ---------------------------------------------------------------------------

def gauss_kl(m1, s1, m2, s2):
    """KL(N(m1, s1^2) || N(m2, s2^2))."""
    return np.log(s2 / s1) + (s1 ** 2 + (m1 - m2) ** 2) / (2 * s2 ** 2) - 0.5


def affine_kl_derivative(mq, sq, mp, sp, a, b, eps=1e-4):
    """Central difference in ``eps`` of the KL after pushing ``N(mq, sq^2)`` through ``t + eps (a + b t)``."""
    def kl(e):
        return gauss_kl(mq * (1 + e * b) + e * a, sq * abs(1 + e * b), mp, sp)
    return (kl(eps) - kl(-eps)) / (2 * eps)


KL_DERIVATIVE_CASES = [
    # (mq, sq, mp, sp, a, b)
    (1.0, 1.0, 0.0, 1.0, 1.0, 0.0),
    (0.5, 1.5, -1.0, 0.8, 0.3, 0.7),
    (1.0, 1.0, 0.0, 1.0, 0.0, 1.0),
]


def check_kl_derivative(seed=0, samples=10 ** 6, tol=1e-2):
    out = []
    for i, (mq, sq, mp, sp, a, b) in enumerate(KL_DERIVATIVE_CASES):
        rng = RngStream(seed, 200 + i)
        t = mq + sq * rng.normal((samples, 1))
        est = kl_directional_derivative(t, lambda v: a + b * v, lambda v: -(v - mp) / sp ** 2,
                                        div_psi=lambda v: np.full(len(v), b))
        ref = affine_kl_derivative(mq, sq, mp, sp, a, b)
        rel = abs(est - ref) / abs(ref)
        out.append(Check(f"directional KL derivative case {i}", rel < tol,
                         f"sampled {est:.5f} closed form {ref:.5f} rel {rel:.2e}"))
    return out


def _normal_logpdf(v, m, s):
    return -0.5 * ((v - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)


def _mixture_logpdf(v):
    return np.logaddexp(_normal_logpdf(v, -2.0, 1.0), _normal_logpdf(v, 2.0, 1.0)) + np.log(0.5)


KL_K_PAIRS = {
    # name: (q mean, q std, log p)
    "mean shift": (0.0, 1.0, lambda v: _normal_logpdf(v, 1.0, 1.0)),
    "variance mismatch": (0.0, 1.5, lambda v: _normal_logpdf(v, 0.0, 1.0)),
    "mixture target": (0.0, 2.0, _mixture_logpdf),
}


def kl_k_sequence(mq, sq, log_p, ks=(1, 2, 5, 10), groups=10 ** 6, rng=None):
    """``[(k, estimate, se)]`` with fresh draws for every ``k``."""
    rng = rng or RngStream(0, 0)
    out = []
    for k in ks:
        t = mq + sq * rng.normal((groups, k))
        est, se = kl_k_from_log_ratios(log_p(t) - _normal_logpdf(t, mq, sq))
        out.append((k, est, se))
    return out


def check_kl_k_monotone(seed=0, groups=10 ** 6):
    out = []
    for i, (name, (mq, sq, log_p)) in enumerate(KL_K_PAIRS.items()):
        seq = kl_k_sequence(mq, sq, log_p, groups=groups, rng=RngStream(seed, 300 + i))
        ok = all(b[1] <= a[1] + 2 * np.hypot(a[2], b[2]) for a, b in zip(seq[:-1], seq[1:]))
        out.append(Check(f"KL_k nonincreasing ({name})", ok,
                         " ".join(f"k={k}:{e:.4f}" for k, e, _ in seq)))
        if name == "mean shift":
            v = seq[0][1]
            out.append(Check("KL_1 for unit mean shift", abs(v - 0.5) <= 0.01, f"{v:.4f} vs 0.5"))
    return out


def weighted_derivative_spot_check(seed=0, groups=10 ** 6, k=5, eps=1e-4, case=(0.0, 1.0, 1.0, 1.0, 0.5, 0.3)):
    """Weighted directional derivative vs a finite difference of the KL_k estimate under
    ``t -> t + eps (a + b t)`` with common random numbers. Returns ``(weighted, fd)``."""
    mq, sq, mp, sp, a, b = case
    t = mq + sq * RngStream(seed, 400).normal((groups, k))

    def kl_k(e):
        tt = t + e * (a + b * t)
        lr = _normal_logpdf(tt, mp, sp) - (_normal_logpdf(t, mq, sq) - np.log(abs(1 + e * b)))
        return kl_k_from_log_ratios(lr)[0]

    fd = (kl_k(eps) - kl_k(-eps)) / (2 * eps)
    est = iw_kl_directional_derivative(
        t[..., None], lambda v: _normal_logpdf(v[:, 0], mp, sp), lambda v: _normal_logpdf(v[:, 0], mq, sq),
        lambda v: -(v - mp) / sp ** 2, lambda v: a + b * v, div_psi=lambda v: np.full(len(v), b))
    return est, fd


def check_weighted_derivative(seed=0, groups=10 ** 6):
    est, fd = weighted_derivative_spot_check(seed, groups)
    rel = abs(est - fd) / abs(fd)
    return [Check("weighted KL_k derivative", rel < 5e-2, f"weighted {est:.5f} fd {fd:.5f} rel {rel:.2e}")]


def gradient_suite(seed=0, points=20, tol=1e-4):
    """Finite-difference checks for every score used by the trainer. Returns ``[(name, worst)]``."""
    rng = RngStream(seed, 500)
    results = {}

    def record(name, err):
        results[name] = max(results.get(name, 0.0), err)

    gdec = GaussianLinearDecoder(3, 2, 0.7)
    gen = nn.Mlp.create([2, 4, 5], ["tanh", "identity"], rng=rng)
    bdec = BernoulliMlpDecoder(gen)
    pdec = PoissonFactorDecoder(3, 2)
    ldec = SoftmaxLabelDecoder(3, 2)
    gmm = GmmPrior([1.0, -0.5], [-1.0, 0.5])
    gam = GammaSoftplusPrior(2.0, 1.0)
    for _ in range(points):
        th = rng.normal(gdec.n_theta)
        x, z = rng.normal(3), rng.normal(2)
        record("gaussian decoder z", grad_check(lambda v: gdec.log_lik(th, x, v), lambda v: gdec.scores(th, x, v)[0], z))
        record("gaussian decoder theta", grad_check(lambda v: gdec.log_lik(v, x, z), lambda v: gdec.scores(v, x, z)[1], th))

        thb = rng.normal(bdec.n_theta)
        xb = (rng.uniform(5) < 0.5).astype(float)
        record("bernoulli decoder z", grad_check(lambda v: bdec.log_lik(thb, xb, v), lambda v: bdec.scores(thb, xb, v)[0], z))
        record("bernoulli decoder theta", grad_check(lambda v: bdec.log_lik(v, xb, z), lambda v: bdec.scores(v, xb, z)[1], thb))

        thp = rng.normal(pdec.n_theta)
        xp = rng.generator.poisson(3.0, size=3).astype(float)
        record("poisson decoder z", grad_check(lambda v: pdec.log_lik(thp, xp, v), lambda v: pdec.scores(thp, xp, v)[0], z))
        record("poisson decoder theta", grad_check(lambda v: pdec.log_lik(v, xp, z), lambda v: pdec.scores(v, xp, z)[1], thp))

        phi = rng.normal(ldec.n_theta)
        y = int(rng.choice(3, 1)[0])
        record("label decoder z", grad_check(lambda v: ldec.log_lik(phi, y, v), lambda v: ldec.scores(phi, y, v)[0], z))
        record("label decoder theta", grad_check(lambda v: ldec.log_lik(v, y, z), lambda v: ldec.scores(v, y, z)[1], phi))

        zz = 2 * rng.normal(2)
        record("mixture prior", grad_check(gmm.log_prob, gmm.score, zz))
        record("gamma prior", grad_check(gam.log_prob, gam.score, rng.normal(2)))
        record("poisson loading prior", grad_check(pdec.log_prior_theta, pdec.prior_score_theta, thp))
        record("gaussian theta prior", grad_check(gdec.log_prior_theta, gdec.prior_score_theta, th))

        rec = RecognitionNet.create(3, 2, hidden=(4,), rng=rng)
        xr, xi, tgt = rng.normal((2, 3)), rng.normal((3, 2)), rng.normal((2, 3, 2))
        net0 = rec.net.copy()

        def fit_loss(flat):
            rec.net.set_flat(flat)
            return float(np.sum((draw_codes(rec, xr, xi) - tgt) ** 2))

        def fit_grad(flat):
            rec.net.set_flat(flat)
            out, tape = nn.forward(rec.net, rec.inputs(xr, xi).reshape(-1, 5))
            grads, _ = nn.backward(rec.net, tape, 2.0 * (out - tgt.reshape(-1, 2)))
            return nn.flatten_grads(grads)
        record("recognition fit", grad_check(fit_loss, fit_grad, net0.get_flat()))

        ker = RbfKernel(float(0.5 + rng.uniform(1)[0]))
        yk = rng.normal(2)
        record("rbf kernel", grad_check(lambda v: ker.eval(v, yk), lambda v: ker.grad_first(v, yk), rng.normal(2)))
    return results


def check_gradients(seed=0, tol=1e-4):
    return [Check(f"gradient {name}", err < tol, f"max rel err {err:.2e}")
            for name, err in gradient_suite(seed).items()]


def linear_recognition(A, Bmat):
    """Recognition net computing exactly ``A xi + B x`` (single identity layer)."""
    A, Bmat = np.asarray(A, float), np.asarray(Bmat, float)
    d, dx = Bmat.shape
    net = nn.Mlp([nn.Layer(np.concatenate([Bmat, A], axis=1), np.zeros(d), "identity")])
    return RecognitionNet(net, dx, d)


def density_grid_integral(rec, x, lim=10.0, n=401):
    """Trapezoid integral of ``exp(code_log_density)`` over a 2-D code grid (linear maps only)."""
    from scipy.integrate import trapezoid
    W = rec.net.layers[0].W
    Bmat, A = W[:, :rec.x_dim], W[:, rec.x_dim:]
    center = Bmat @ x
    g = np.linspace(-lim, lim, n)
    Z1, Z2 = np.meshgrid(g + center[0], g + center[1], indexing="ij")
    zs = np.stack([Z1.ravel(), Z2.ravel()], axis=1)
    xi = np.linalg.solve(A, (zs - center).T).T
    dens = np.exp(code_log_density(rec, x, xi)).reshape(n, n)
    return float(trapezoid(trapezoid(dens, g, axis=1), g))


def check_density_transform(seed=0):
    rng = RngStream(seed, 600)
    worst = 0.0
    for _ in range(5):
        A = rng.normal((2, 2)) + 2 * np.eye(2)
        Bmat = rng.normal((2, 3))
        rec = linear_recognition(A, Bmat)
        x = rng.normal(3)
        xi = rng.normal((10, 2))
        z = xi @ A.T + Bmat @ x
        cov = A @ A.T
        r = z - Bmat @ x
        ref = (-0.5 * np.einsum("si,ij,sj->s", r, np.linalg.inv(cov), r)
               - 0.5 * np.linalg.slogdet(cov)[1] - np.log(2 * np.pi))
        worst = max(worst, float(np.max(np.abs(code_log_density(rec, x, xi) - ref))))
    rec = linear_recognition([[1.2, 0.3], [-0.4, 0.9]], [[0.5, 0.0, 1.0], [0.0, -1.0, 0.2]])
    total = density_grid_integral(rec, np.array([0.3, -0.2, 0.1]))
    return [Check("linear code density", worst < 1e-8, f"max abs err {worst:.2e}"),
            Check("code density integrates to one", abs(total - 1) < 1e-3, f"integral {total:.6f}")]


def check_reductions(seed=0):
    rng = RngStream(seed, 700)
    p = rng.normal((1, 3))
    score = rng.normal((1, 3))
    m1 = bool(np.array_equal(svgd_direction(p, score), score))
    x, _ = gmm_data(seed, 128)
    cfg = RunConfig(particles=8, iw_samples=1, batch=32, epochs=1, theta_particles=2, code_step=1e-3, seed=seed)
    dec = GaussianLinearDecoder(2, 2, GMM_SIGMA, GMM_MU1, GMM_MU2)
    a = init_state(dec, cfg, x)
    b = init_state(dec, cfg, x)
    stein_vae_epoch(a, x, cfg)
    stein_viwae_epoch(b, x, cfg)
    same = (np.array_equal(a.theta.particles, b.theta.particles)
            and np.array_equal(a.rec.net.get_flat(), b.rec.net.get_flat())
            and [h for h in a.history] == [h for h in b.history if not h[2].startswith("weight_")])
    return [Check("single particle direction equals score", m1),
            Check("one-group weighted epoch equals plain epoch", bool(same))]


def run_check(cfg: RunConfig, log=print) -> ExperimentResult:
    res = ExperimentResult("check")
    for fn in (check_kl_derivative, check_kl_k_monotone, check_weighted_derivative, check_gradients,
               check_density_transform, check_reductions):
        t0 = time.perf_counter()
        got = fn(cfg.seed)
        res.checks.extend(got)
        for c in got:
            log(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
        log(f"{fn.__name__} took {time.perf_counter() - t0:.1f}s")
        res.history.extend((0, -1, f"check/{c.name}", float(c.passed)) for c in got)
    res.summary = {"checks": len(res.checks), "failed": sum(not c.passed for c in res.checks)}
    return res


RUNNERS = {
    "gmm": run_gmm,
    "pfa": run_pfa,
    "density-toy": run_density_toy,
    "semisup-toy": run_semisup_toy,
    "check": run_check,
}

# Per-experiment overrides layered on top of the RunConfig defaults. The
# published defaults (M=100, k=50, lr=2e-4) are far too slow for desk-sized
# toys with the pooled k*M kernel, so each toy carries its own settings.
PRESETS = {
    "gmm": dict(iw_samples=1, theta_particles=1, learn_theta=False, epochs=40, code_step=2e-3,
                code_steps=3, fit_lr=3e-3),
    "pfa": dict(iw_samples=1, theta_particles=1, learn_theta=False, epochs=30, code_step=2e-2,
                code_steps=3, fit_lr=3e-3),
    "density-toy": dict(particles=20, iw_samples=1, theta_particles=5, epochs=20, lr=5e-4, fit_lr=2e-3,
                        code_step=5e-2, hidden=50),
    "semisup-toy": dict(particles=20, iw_samples=1, theta_particles=4, learn_theta=False, epochs=20,
                        label_lr=1e-2, code_step=2e-2),
    "check": dict(),
}
