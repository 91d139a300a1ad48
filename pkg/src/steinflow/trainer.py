"""Training loops for the plain and importance-weighted Stein VAE, with an optional labelled branch.

A minibatch step runs in a fixed order:

1. draw codes ``z = f(x, xi)`` for every group,
2. move the codes along their (weighted) Stein directions,
3. move the decoder particles (and label-decoder particles) using the moved codes,
4. fit the recognition net to the moved codes.

The plain Stein VAE is the same step with ``k = 1`` and unit weights, so
the two paths share every floating-point operation.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .iwsvgd import (datum_log_weights, group_log_weights, iw_direction_theta, iw_direction_z,
                     kde_log_density)
from .models import Decoder, SoftmaxLabelDecoder
from .numcore import RngStream
from .recognition import RecognitionNet, code_log_density, draw_codes, fit_codes
from .svgd import Adam, AdamConfig, ParticleSet, apply_step

CHECKPOINT_VERSION = 1

# fixed stream ids; each concern owns its own stream
STREAM_THETA_INIT = 1
STREAM_REC_INIT = 2
STREAM_SHUFFLE = 3
STREAM_NOISE = 4
STREAM_LABEL_INIT = 5
STREAM_LABEL_BATCH = 6


@dataclass
class RunConfig:
    """Experiment hyperparameters. Defaults follow the published setup where one exists."""
    particles: int = 100              # M: codes per datum and decoder particles per group
    iw_samples: int = 50              # k: importance-weighted groups
    batch: int = 64
    epochs: int = 1
    lr: float = 2e-4                  # Adam rate for decoder particles
    label_lr: float = 2e-4            # Adam rate for label-decoder particles
    fit_lr: float = 1e-3              # recognition fitting rate (delta)
    fit_steps: int = 5                # recognition fitting steps per minibatch (K)
    fit_optimizer: str = "adam"
    code_step: float = 1e-3           # raw step size for code transport
    code_steps: int = 1
    theta_particles: int = 0          # 0 means "same as particles"
    learn_theta: bool = True
    seed: int = 0
    zeta: float = -1.0                # negative means N_X / (C rho)
    bandwidth_mode: str = "squared"
    share_noise: bool = True
    prior_scale: float = 1.0
    hidden: int = 100
    activation: str = "tanh"
    leaky_slope: float = 0.2
    n_train: int = 0                  # 0 means the experiment's own default
    n_test: int = 0

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError("particles (M) must be >= 1")
        if self.iw_samples < 1:
            raise ValueError("iw_samples (k) must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.fit_steps < 1:
            raise ValueError("fit_steps must be >= 1")
        if self.bandwidth_mode not in ("squared", "unsquared"):
            raise ValueError("bandwidth_mode must be 'squared' or 'unsquared'")
        if self.fit_optimizer not in ("adam", "sgd"):
            raise ValueError("fit_optimizer must be 'adam' or 'sgd'")
        if self.leaky_slope != nn.LEAKY_SLOPE:
            raise ValueError(f"leaky_slope is fixed at {nn.LEAKY_SLOPE}")

    @property
    def n_theta_particles(self):
        return self.theta_particles or self.particles


@dataclass
class TrainState:
    decoder: Decoder
    theta: ParticleSet                      # (k, M_theta, n_theta)
    rec: RecognitionNet
    rngs: dict
    label_decoder: SoftmaxLabelDecoder | None = None
    label: ParticleSet | None = None        # (k, M_theta, C * d_z)
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def k(self):
        return self.theta.particles.shape[0]

    def log(self, name, value, minibatch=-1):
        self.history.append((self.epoch, minibatch, name, float(value)))

    def theta_flat(self):
        p = self.theta.particles
        return p.reshape(-1, p.shape[-1])

    def label_flat(self):
        p = self.label.particles
        return p.reshape(-1, p.shape[-1])


def init_state(decoder: Decoder, cfg: RunConfig, x_train, label_decoder=None, theta_init=None,
               k: int | None = None) -> TrainState:
    """Fresh state: prior-drawn decoder particles and a randomly initialised recognition net.

    ``theta_init`` (one flat vector) pins every decoder particle to that value,
    which is how fixed-decoder experiments are set up.
    """
    k = cfg.iw_samples if k is None else k
    M = cfg.n_theta_particles
    rng_t = RngStream(cfg.seed, STREAM_THETA_INIT)
    if theta_init is not None:
        th = np.broadcast_to(np.asarray(theta_init, dtype=float), (k, M, decoder.n_theta)).copy()
    else:
        th = np.stack([np.stack([decoder.init_theta(rng_t) for _ in range(M)]) for _ in range(k)])
    theta = ParticleSet(th, lr=cfg.lr)
    x_train = np.asarray(x_train, dtype=float)
    scale = x_train.std(axis=0)
    scale = np.where(scale > 1e-8, scale, 1.0)
    rec = RecognitionNet.create(decoder.data_dim, decoder.latent_dim, hidden=(cfg.hidden,),
                                activation=cfg.activation, rng=RngStream(cfg.seed, STREAM_REC_INIT),
                                x_shift=x_train.mean(axis=0), x_scale=scale)
    label = None
    if label_decoder is not None:
        rng_l = RngStream(cfg.seed, STREAM_LABEL_INIT)
        lab = np.stack([np.stack([label_decoder.init_theta(rng_l) for _ in range(M)]) for _ in range(k)])
        label = ParticleSet(lab, lr=cfg.label_lr)
    rngs = {
        "shuffle": RngStream(cfg.seed, STREAM_SHUFFLE),
        "noise": RngStream(cfg.seed, STREAM_NOISE),
        "label_batch": RngStream(cfg.seed, STREAM_LABEL_BATCH),
    }
    return TrainState(decoder, theta, rec, rngs, label_decoder, label)


def zeta_weight(data_dim, n_classes, rho):
    """Label-likelihood weight ``N_X / (C rho)`` for labelled codes."""
    if rho <= 0:
        raise ValueError("labelled fraction must be positive")
    return data_dim / (n_classes * rho)


# ---------------------------------------------------------------------------
# Score assembly
# ---------------------------------------------------------------------------

def _z_scores(state, x, y, z, zeta):
    """Code scores for all groups; ``z`` is ``(k, B, M, d_z)`` and ``y`` uses -1 for unlabelled."""
    dec = state.decoder
    out = np.empty_like(z)
    labeled = None if y is None else y >= 0
    for i in range(z.shape[0]):
        thetas = state.theta.particles[i]
        g = np.zeros_like(z[i])
        for th in thetas:
            g += dec.scores(th, x, z[i])[0]
        g /= len(thetas)
        if labeled is not None and labeled.any():
            phis = state.label.particles[i]
            gl = np.zeros_like(z[i][labeled])
            for ph in phis:
                gl += state.label_decoder.scores(ph, y[labeled], z[i][labeled])[0]
            g[labeled] += zeta * gl / len(phis)
        out[i] = g + dec.prior_score_z(z[i])
    return out


def _theta_scores(state, parts, z):
    """Decoder-particle scores. ``parts`` is a list of ``(row_index, scale)``."""
    dec = state.decoder
    k, M_t, _ = state.theta.particles.shape
    Mz = z.shape[2]
    out = np.empty_like(state.theta.particles)
    for i in range(k):
        for j in range(M_t):
            th = state.theta.particles[i, j]
            g = dec.prior_score_theta(th).copy()
            for rows, scale, x in parts:
                g += scale / Mz * dec.scores(th, x, z[i][rows])[1]
            out[i, j] = g
    return out


def _label_scores(state, y, rows, z, scale):
    ld = state.label_decoder
    k, M_t, _ = state.label.particles.shape
    Mz = z.shape[2]
    out = np.empty_like(state.label.particles)
    for i in range(k):
        for j in range(M_t):
            ph = state.label.particles[i, j]
            out[i, j] = ld.prior_score_theta(ph) + scale / Mz * ld.scores(ph, y[rows], z[i][rows])[1]
    return out


def _log_ratios(state, x, y, z, noise, cfg):
    """``log p(x, z, theta) - log q(theta) - log q(z)`` per ``(group, datum, code)``.

    Code ``j`` is paired with decoder particle ``j mod M_theta``.
    """
    dec = state.decoder
    k, B, M, _ = z.shape
    M_t = state.theta.particles.shape[1]
    out = np.empty((k, B, M))
    for i in range(k):
        nz = noise[i]
        lq_z = code_log_density(state.rec, x, nz)
        lr = dec.log_prior_z(z[i]) - lq_z
        thetas = state.theta.particles[i]
        idx = np.arange(M) % M_t
        for j_t in range(M_t):
            cols = idx == j_t
            lr[:, cols] += dec.log_lik(thetas[j_t], x, z[i][:, cols])
        if cfg.learn_theta:
            lq_t = kde_log_density(thetas, thetas, mode=cfg.bandwidth_mode) if M_t > 1 else np.zeros(M_t)
            lr += (dec.log_prior_theta(thetas) - lq_t)[idx][None, :]
        if y is not None and state.label is not None:
            labeled = y >= 0
            if labeled.any():
                phis = state.label.particles[i]
                for j_t in range(M_t):
                    cols = idx == j_t
                    ll = state.label_decoder.log_lik(phis[j_t], y[labeled], z[i][labeled][:, cols])
                    lr[np.ix_(labeled, cols)] += ll
                if M_t > 1:
                    lq_p = kde_log_density(phis, phis, mode=cfg.bandwidth_mode)
                else:
                    lq_p = np.zeros(M_t)
                lr += (state.label_decoder.log_prior_theta(phis) - lq_p)[idx][None, :]
        out[i] = lr
    return out


# ---------------------------------------------------------------------------
# Minibatch step and epochs
# ---------------------------------------------------------------------------

def _draw_noise(state, cfg, B):
    k, M, d = state.k, cfg.particles, state.rec.noise_dim
    if cfg.share_noise:
        return state.rngs["noise"].normal((k, M, d))
    return state.rngs["noise"].normal((k, B, M, d))


def minibatch_step(state: TrainState, cfg: RunConfig, xb, n_total, weighted: bool,
                   labeled=None, n_labeled_total=0, minibatch=-1):
    """One atomic update from an unlabelled batch ``xb`` and optional ``(x_l, y_l)``."""
    dec = state.decoder
    xb = dec.check_data(xb)
    Bu = xb.shape[0]
    if labeled is not None and len(labeled[0]) > 0:
        xl, yl = dec.check_data(labeled[0]), np.asarray(labeled[1], dtype=int)
        x = np.concatenate([xb, xl])
        y = np.concatenate([np.full(Bu, -1), yl])
        Bl = len(yl)
    else:
        x, y, Bl = xb, None, 0
    B = x.shape[0]
    k = state.k
    noise = _draw_noise(state, cfg, B)
    z = np.stack([draw_codes(state.rec, x, noise[i]) for i in range(k)])

    zeta = 0.0
    if Bl:
        zeta = cfg.zeta if cfg.zeta >= 0 else zeta_weight(dec.data_dim, state.label_decoder.n_classes, Bl / B)

    if weighted:
        lr = _log_ratios(state, x, y, z, noise, cfg)
        w_theta = group_log_weights(lr).normalized
        w_z = datum_log_weights(lr).normalized
        state.log("weight_sum", w_theta.sum(), minibatch)
        state.log("weight_max", w_theta.max(), minibatch)
    else:
        if k != 1:
            raise ValueError("the unweighted Stein VAE step needs k = 1")
        w_theta = np.ones(1)
        w_z = np.ones((1, B))

    for _ in range(cfg.code_steps):
        zs = _z_scores(state, x, y, z, zeta)
        dz = iw_direction_z(z, w_z, zs, mode=cfg.bandwidth_mode)
        z = z + cfg.code_step * dz

    if cfg.learn_theta:
        parts = [(np.arange(Bu), n_total / Bu, xb)]
        if Bl:
            parts.append((np.arange(Bu, B), n_labeled_total / Bl, x[Bu:]))
        ts = _theta_scores(state, parts, z)
        dth = iw_direction_theta(state.theta.particles, w_theta, ts, mode=cfg.bandwidth_mode)
        apply_step(state.theta, dth)
        state.log("theta_delta_norm", np.linalg.norm(dth), minibatch)

    if Bl:
        ls = _label_scores(state, y, np.arange(Bu, B), z, n_labeled_total / Bl)
        dl = iw_direction_theta(state.label.particles, w_theta, ls, mode=cfg.bandwidth_mode)
        apply_step(state.label, dl)

    if cfg.share_noise:
        fit_noise = noise.reshape(k * cfg.particles, -1)
    else:
        fit_noise = noise.transpose(1, 0, 2, 3).reshape(B, k * cfg.particles, -1)
    targets = z.transpose(1, 0, 2, 3).reshape(B, k * cfg.particles, -1)
    trace = fit_codes(state.rec, x, fit_noise, targets, steps=cfg.fit_steps, lr=cfg.fit_lr,
                      optimizer=cfg.fit_optimizer)
    state.log("fit_loss", trace[-1] / targets.size, minibatch)
    state.step += 1
    return state


def _epoch(state, data, cfg, weighted, labeled=None):
    data = np.asarray(data, dtype=float)
    N = data.shape[0]
    order = state.rngs["shuffle"].permutation(N)
    n_lab = 0 if labeled is None else len(labeled[1])
    for mb, start in enumerate(range(0, N, cfg.batch)):
        idx = order[start:start + cfg.batch]
        lab = None
        if n_lab:
            take = min(cfg.batch, n_lab)
            li = state.rngs["label_batch"].choice(n_lab, take, replace=False)
            lab = (labeled[0][li], labeled[1][li])
        try:
            minibatch_step(state, cfg, data[idx], N, weighted, lab, n_lab, minibatch=mb)
        except (FloatingPointError, ValueError) as exc:
            raise type(exc)(f"epoch {state.epoch}, minibatch {mb}: {exc}") from exc
    state.epoch += 1
    return state


def stein_vae_epoch(state: TrainState, data, cfg: RunConfig) -> TrainState:
    return _epoch(state, data, cfg, weighted=False)


def stein_viwae_epoch(state: TrainState, data, cfg: RunConfig) -> TrainState:
    return _epoch(state, data, cfg, weighted=True)


def semisup_epoch(state: TrainState, unlabeled, labeled, cfg: RunConfig, weighted=None) -> TrainState:
    """Semi-supervised epoch over the unlabelled data; each minibatch also draws labelled pairs.

    ``labeled`` is ``(x_l, y_l)`` with integer labels ``0..C-1``.
    """
    if state.label is None:
        raise ValueError("semi-supervised training needs a label decoder")
    xl, yl = np.asarray(labeled[0], dtype=float), np.asarray(labeled[1], dtype=int)
    if len(yl) == 0:
        raise ValueError("labelled set is empty")
    weighted = state.k > 1 if weighted is None else weighted
    return _epoch(state, unlabeled, cfg, weighted, labeled=(xl, yl))


def train(state, data, cfg, epochs=None, callback=None):
    step = stein_viwae_epoch if state.k > 1 else stein_vae_epoch
    for _ in range(cfg.epochs if epochs is None else epochs):
        step(state, data, cfg)
        if callback is not None:
            callback(state)
    return state


def predict_label(x, label_particles, rec: RecognitionNet, label_decoder: SoftmaxLabelDecoder,
                  samples: int = 20, rng: RngStream | None = None, noise=None) -> np.ndarray:
    """Class probabilities averaged over label particles and ``samples`` code draws.

    ``x`` may be a single datum or a batch; the result is ``(C,)`` or ``(B, C)``.
    """
    single = np.asarray(x).ndim == 1
    if noise is None:
        rng = rng or RngStream(0, 0)
        noise = rng.normal((samples, rec.noise_dim))
    z = draw_codes(rec, np.atleast_2d(x), noise)
    phis = np.asarray(label_particles, dtype=float).reshape(-1, label_decoder.n_theta)
    probs = np.mean([label_decoder.probs(ph, z).mean(axis=1) for ph in phis], axis=0)
    return probs[0] if single else probs


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _pset_arrays(prefix, pset):
    return {
        f"{prefix}/particles": pset.particles,
        f"{prefix}/adam_m": pset.adam.m,
        f"{prefix}/adam_v": pset.adam.v,
        f"{prefix}/adam_t": np.array(pset.adam.t),
        f"{prefix}/t": np.array(pset.t),
        f"{prefix}/lr": np.array(pset.lr),
    }


def _pset_from(arrays, prefix, optimizer="adam"):
    lr = float(arrays[f"{prefix}/lr"])
    pset = ParticleSet(arrays[f"{prefix}/particles"], lr=lr, optimizer=optimizer)
    pset.adam.m = arrays[f"{prefix}/adam_m"].copy()
    pset.adam.v = arrays[f"{prefix}/adam_v"].copy()
    pset.adam.t = int(arrays[f"{prefix}/adam_t"])
    pset.t = int(arrays[f"{prefix}/t"])
    return pset


def save_checkpoint(path, state: TrainState):
    """Write ``state`` as a NumPy ``.npz`` archive.

    Layout (format version 1): ``meta`` holds a JSON string with the format
    version, epoch, step, network architecture, RNG bit-generator states and
    metric history; ``theta/*`` and ``label/*`` hold particles with Adam
    moments; ``rec/*`` holds the flat recognition parameters, input
    normalisation and optional Adam moments. The decoder objects themselves
    are rebuilt from the experiment config.
    """
    rec = state.rec
    meta = {
        "format": "steinflow-checkpoint",
        "version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "step": state.step,
        "rec_sizes": [rec.net.n_in] + [l.n_out for l in rec.net.layers],
        "rec_activations": [l.activation for l in rec.net.layers],
        "x_dim": rec.x_dim,
        "noise_dim": rec.noise_dim,
        "rngs": {name: {"seed": r.seed, "stream": r.stream, "state": r.generator.bit_generator.state}
                 for name, r in state.rngs.items()},
        "history": state.history,
        "has_label": state.label is not None,
        "rec_adam_t": None if rec.adam is None else rec.adam.t,
        "rec_adam_lr": None if rec.adam is None else rec.adam.config.lr,
    }
    arrays = {"meta": np.array(json.dumps(meta, default=_json_default))}
    arrays.update(_pset_arrays("theta", state.theta))
    if state.label is not None:
        arrays.update(_pset_arrays("label", state.label))
    arrays["rec/params"] = rec.net.get_flat()
    arrays["rec/x_shift"] = rec.x_shift
    arrays["rec/x_scale"] = rec.x_scale
    if rec.adam is not None:
        arrays["rec/adam_m"] = rec.adam.m
        arrays["rec/adam_v"] = rec.adam.v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)}")


def load_checkpoint(path, decoder: Decoder, label_decoder=None) -> TrainState:
    with np.load(path, allow_pickle=False) as f:
        arrays = {k: f[k] for k in f.files}
    meta = json.loads(str(arrays["meta"]))
    if meta.get("format") != "steinflow-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {meta.get('format')} v{meta.get('version')}")
    net = nn.Mlp.create(meta["rec_sizes"], meta["rec_activations"])
    net.set_flat(arrays["rec/params"])
    rec = RecognitionNet(net, meta["x_dim"], meta["noise_dim"], arrays["rec/x_shift"], arrays["rec/x_scale"])
    if meta["rec_adam_t"] is not None:
        rec.adam = Adam(arrays["rec/adam_m"].shape, AdamConfig(lr=meta["rec_adam_lr"]))
        rec.adam.m = arrays["rec/adam_m"].copy()
        rec.adam.v = arrays["rec/adam_v"].copy()
        rec.adam.t = meta["rec_adam_t"]
    rngs = {}
    for name, r in meta["rngs"].items():
        stream = RngStream(r["seed"], r["stream"])
        stream.generator.bit_generator.state = r["state"]
        rngs[name] = stream
    theta = _pset_from(arrays, "theta")
    label = _pset_from(arrays, "label") if meta["has_label"] else None
    history = [tuple(h) for h in meta["history"]]
    return TrainState(decoder, theta, rec, rngs, label_decoder, label, meta["epoch"], meta["step"], history)


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def config_fields():
    return {f.name: f for f in fields(RunConfig)}
