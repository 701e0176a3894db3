"""Objectives and the learnable combiner."""

import math

import numpy as np
import pytest

from wtlab.loss import LossWeights, l_ns, l_ps, l_total, l_total_grad
from wtlab.scene import SceneConfig, make_utterance, render_mixture, sample_scene


def eight_channel(seed, n=16000):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((8, n))


# ---------------------------------------------------------------- weights

def test_weights_store_logs():
    w = LossWeights(sigma1=2.0, sigma2=0.5)
    assert abs(w.log_sigma1 - math.log(2.0)) < 1e-15
    assert abs(w.sigma2 - 0.5) < 1e-15
    assert not w.literal_eq4


def test_weights_reject_nonpositive():
    with pytest.raises(ValueError, match="sigma1"):
        LossWeights(sigma1=0.0)
    with pytest.raises(ValueError, match="sigma2"):
        LossWeights(sigma2=-1.0)
    with pytest.raises(ValueError, match="sigma1"):
        LossWeights(sigma1=float("nan"))


# ---------------------------------------------------------------- l_ns

def test_lns_perfect_estimate_hits_epsilon_cap():
    x = eight_channel(0)
    assert l_ns(x, x) <= -80.0


def test_lns_zero_db_case():
    rng = np.random.default_rng(1)
    ref = rng.standard_normal((8, 8000))
    noise = rng.standard_normal((8, 8000))
    for m in range(8):
        noise[m] -= np.dot(noise[m], ref[m]) / np.dot(ref[m], ref[m]) * ref[m]
        noise[m] *= np.linalg.norm(ref[m]) / np.linalg.norm(noise[m])
    assert abs(l_ns(ref + noise, ref)) < 1e-6


def test_lns_channel_permutation_invariant():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal((8, 4000))
    est = ref + 0.5 * rng.standard_normal((8, 4000))
    perm = rng.permutation(8)
    assert abs(l_ns(est, ref) - l_ns(est[perm], ref[perm])) < 1e-12


def test_lns_validates_shapes():
    with pytest.raises(ValueError, match="8 x N"):
        l_ns(np.zeros((4, 100)), np.zeros((4, 100)))
    with pytest.raises(ValueError, match="mismatch"):
        l_ns(np.zeros((8, 100)), np.zeros((8, 200)))


def test_lns_zero_target_channel_raises():
    x = eight_channel(3)
    bad = x.copy()
    bad[5] = 0.0
    with pytest.raises(ValueError, match="zero"):
        l_ns(x, bad)


# ---------------------------------------------------------------- l_ps

def test_lps_identical_is_zero():
    x = eight_channel(4)
    assert l_ps(x, x) == 0.0


def test_lps_scale_invariant():
    x = eight_channel(5)
    assert l_ps(3.7 * x, x) <= 1e-6


def test_lps_positive_on_noisy_mixture():
    scene = sample_scene(11, SceneConfig(snr_range_db=(-5.0, -5.0)))
    ex = render_mixture(scene, make_utterance(70000, seed=23))
    assert l_ps(ex.mixture.samples, ex.target_early.samples) > 0.0


# ---------------------------------------------------------------- l_total

def test_ltotal_default_substitution():
    assert l_total(2.0, 4.0, LossWeights()) == pytest.approx(12.0, abs=1e-12)


def test_ltotal_zero_losses_unit_sigmas():
    assert l_total(0.0, 0.0, LossWeights()) == pytest.approx(0.0, abs=1e-15)


def test_ltotal_literal_regularizer_only():
    w = LossWeights(sigma1=1.0, sigma2=math.e, literal_eq4=True)
    assert l_total(0.0, 0.0, w) == pytest.approx(1.0, abs=1e-12)


def test_ltotal_literal_puts_sigma1_on_both_terms():
    w = LossWeights(sigma1=2.0, sigma2=5.0, literal_eq4=True)
    expect = (10.0 * 3.0 + 7.0) / (2.0 * 4.0) + math.log(2.0) + math.log(5.0)
    assert l_total(3.0, 7.0, w) == pytest.approx(expect, abs=1e-12)


def test_ltotal_increasing_in_each_loss():
    for w in (LossWeights(0.7, 1.3), LossWeights(2.0, 0.4, literal_eq4=True)):
        base = l_total(1.0, 1.0, w)
        assert l_total(1.5, 1.0, w) > base
        assert l_total(1.0, 1.5, w) > base


def test_ltotal_has_interior_minimum_in_sigma():
    grid = np.linspace(-3.0, 3.0, 121)
    values = np.array([
        [l_total(2.0, 4.0, LossWeights(math.exp(u1), math.exp(u2)))
         for u2 in grid] for u1 in grid
    ])
    i, j = np.unravel_index(values.argmin(), values.shape)
    assert 0 < i < len(grid) - 1
    assert 0 < j < len(grid) - 1
    # blows up toward both ends of the sigma1 axis
    assert values[0, j] > values[i, j] + 1.0
    assert values[-1, j] > values[i, j] + 1.0


def test_ltotal_grad_matches_fd():
    h = 1e-6
    cases = [
        (2.0, 4.0, 1.0, 1.0, False),
        (0.3, 1.7, 0.8, 2.5, False),
        (1.1, 0.2, 1.9, 0.6, False),
        (2.0, 4.0, 1.0, 1.0, True),
        (0.3, 1.7, 0.8, 2.5, True),
    ]
    for lns, lps, s1, s2, literal in cases:
        w = LossWeights(s1, s2, literal_eq4=literal)
        value, g1, g2 = l_total_grad(lns, lps, w)
        assert value == pytest.approx(l_total(lns, lps, w), abs=1e-15)
        up1 = LossWeights(math.exp(w.log_sigma1 + h), s2, literal_eq4=literal)
        dn1 = LossWeights(math.exp(w.log_sigma1 - h), s2, literal_eq4=literal)
        fd1 = (l_total(lns, lps, up1) - l_total(lns, lps, dn1)) / (2 * h)
        assert abs(fd1 - g1) < 1e-8
        up2 = LossWeights(s1, math.exp(w.log_sigma2 + h), literal_eq4=literal)
        dn2 = LossWeights(s1, math.exp(w.log_sigma2 - h), literal_eq4=literal)
        fd2 = (l_total(lns, lps, up2) - l_total(lns, lps, dn2)) / (2 * h)
        assert abs(fd2 - g2) < 1e-8
