import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import brentq

from steinflow.kernels import median_bandwidth
from steinflow.numcore import RngStream
from steinflow.svgd import (AdamConfig, CodeBank, NonFiniteScoreError, ParticleSet, apply_step,
                            code_directions, fd_divergence, kl_directional_derivative, stein_direction,
                            svgd_direction, svgd_direction_codes)


def reference_direction(x, scores, h, weights=None, norm=None):
    """Direct double loop over (target, source) pairs."""
    M, d = x.shape
    w = np.ones(M) if weights is None else weights
    out = np.zeros_like(x)
    for j in range(M):
        for jp in range(M):
            diff = x[jp] - x[j]
            k = math.exp(-float(diff @ diff) / h)
            out[j] += w[jp] * (k * scores[jp] - (2.0 / h) * diff * k)
    return out / (M if norm is None else norm)


def test_single_particle_reduces_to_score():
    s = np.array([[0.3, -2.0]])
    assert np.array_equal(svgd_direction(np.array([[1.0, 4.0]]), s), s)


def test_two_particle_hand_value():
    d = svgd_direction(np.array([[-1.0], [1.0]]), lambda t: -t)
    expect = 0.5 * (1 - 2 * math.exp(-1))
    assert d[0, 0] == pytest.approx(expect, abs=1e-15)
    assert d[1, 0] == pytest.approx(-expect, abs=1e-15)


def test_symmetric_particles_even_target_sum_to_zero(rng):
    half = rng.normal((5, 2))
    x = np.concatenate([half, -half])
    d = svgd_direction(x, lambda t: -t ** 3)
    assert np.allclose(d.sum(axis=0), 0, atol=1e-12)


def test_matches_reference(rng):
    x = rng.normal((7, 3))
    s = rng.normal((7, 3))
    h = median_bandwidth(x)
    assert np.allclose(svgd_direction(x, s), reference_direction(x, s, h), rtol=1e-12, atol=1e-13)
    w = rng.uniform(7)
    assert np.allclose(stein_direction(x, s, h=h, weights=w, norm=3.0),
                       reference_direction(x, s, h, w, 3.0), rtol=1e-12, atol=1e-13)


def test_nonfinite_score_names_index():
    x = np.zeros((3, 2)) + np.arange(3)[:, None]
    s = np.ones((3, 2))
    s[2, 1] = np.nan
    with pytest.raises(NonFiniteScoreError, match="index 2"):
        svgd_direction(x, s)


def test_translation_equivariance(rng):
    x = rng.normal((6, 2))
    shift = np.array([3.0, -7.0])
    d0 = svgd_direction(x, lambda t: -(t - 1.0))
    d1 = svgd_direction(x + shift, lambda t: -(t - shift - 1.0))
    assert np.allclose(d0, d1, atol=1e-12)


def test_two_particle_fixed_point():
    # Delta(a) for particles {-a, a}, score -t, h = 4 a^2 (kernel value exp(-1) at the pair)
    def delta(a):
        return 0.5 * (-a + math.exp(-1) * a + math.exp(-1) / a)
    a = brentq(delta, 0.1, 5.0, xtol=1e-15)
    d = svgd_direction(np.array([[-a], [a]]), lambda t: -t)
    assert np.linalg.norm(d) < 1e-10


def test_code_bank_reductions(rng):
    bank = CodeBank(rng.normal((3, 1, 2)), ids=["a", "b", "c"])
    s = rng.normal(2)
    assert np.array_equal(svgd_direction_codes(bank, "b", s[None]), s[None])
    same = CodeBank(np.tile(rng.normal(2), (2, 4, 1)), ids=[0, 1])
    d = svgd_direction_codes(same, 1, lambda z: -2 * z)
    assert np.allclose(d, -2 * same.codes[1], atol=1e-15)
    with pytest.raises(KeyError):
        bank.row("zzz")


def test_code_bank_matches_reference(rng):
    codes = rng.normal((4, 6, 2))
    bank = CodeBank(codes)
    scores = rng.normal((4, 6, 2))
    for n in range(4):
        ref = reference_direction(codes[n], scores[n], median_bandwidth(codes[n]))
        assert np.allclose(svgd_direction_codes(bank, n, scores[n]), ref, rtol=1e-12, atol=1e-13)
    batched = code_directions(codes, scores)
    for n in range(4):
        assert np.allclose(batched[n], svgd_direction_codes(bank, n, scores[n]), atol=1e-14)


def test_apply_step_zero_delta():
    p = ParticleSet(np.ones((3, 2)), lr=0.1)
    apply_step(p, np.zeros((3, 2)))
    assert np.array_equal(p.particles, np.ones((3, 2)))
    assert p.t == 1 and p.adam.t == 1


def test_apply_step_first_adam_move():
    g = np.array([[0.5, -3.0, 0.0]])
    p = ParticleSet(np.zeros((1, 3)), lr=0.01)
    apply_step(p, g)
    # step one of Adam: lr * g / (|g| + eps) after bias correction
    expect = 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.particles, expect, rtol=1e-12, atol=0)


def test_apply_step_sgd_and_shape_check():
    p = ParticleSet(np.zeros((2, 1)), lr=0.5, optimizer="sgd")
    apply_step(p, np.array([[1.0], [-2.0]]))
    assert np.array_equal(p.particles, [[0.5], [-1.0]])
    with pytest.raises(ValueError):
        apply_step(p, np.zeros((3, 1)))


def test_identical_runs_identical():
    def run():
        rng = RngStream(3, 0)
        p = ParticleSet(rng.normal((5, 2)), lr=0.05)
        for _ in range(20):
            apply_step(p, svgd_direction(p.particles, lambda t: -t))
        return p.particles
    assert np.array_equal(run(), run())


def test_adam_config_defaults():
    c = AdamConfig()
    assert (c.lr, c.beta1, c.beta2, c.eps) == (2e-4, 0.9, 0.999, 1e-8)


def test_kl_derivative_examples():
    x = RngStream(0, 0).normal((200_000, 1))
    assert kl_directional_derivative(x, lambda t: 0 * t, lambda t: -t, lambda t: np.zeros(len(t))) == 0
    shifted = x + 1.0
    est = kl_directional_derivative(shifted, lambda t: np.ones_like(t), lambda t: -t,
                                    lambda t: np.zeros(len(t)))
    assert est == pytest.approx(1.0, abs=0.02)
    est0 = kl_directional_derivative(x, lambda t: t, lambda t: -t)   # FD divergence
    assert est0 == pytest.approx(0.0, abs=0.02)


def test_fd_divergence(rng):
    A = rng.normal((3, 3))
    div = fd_divergence(lambda x: x @ A.T)
    assert np.allclose(div(rng.normal((4, 3))), np.trace(A), atol=1e-8)
