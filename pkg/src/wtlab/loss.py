"""Training objectives: noise-suppression and spatial-preservation losses
plus the learnable two-task combiner."""

from __future__ import annotations

import math

import numpy as np

from .audio import Waveform
from .spatial import music_spectrum, si_snr, spatial_mse

NUM_CHANNELS = 8


class LossWeights:
    """Learnable task weights, stored as log sigma to stay positive.

    The combiner weighs the noise-suppression loss by 10 / (2 sigma1^2) and
    the spatial loss by 1 / (2 sigma2^2), with a log(sigma1 sigma2)
    regularizer that keeps either weight from collapsing to zero for free.
    ``literal_eq4`` switches the spatial term's denominator to sigma1 as
    well, leaving sigma2 only in the regularizer.
    """

    __slots__ = ("log_sigma1", "log_sigma2", "literal_eq4")

    def __init__(self, sigma1: float = 1.0, sigma2: float = 1.0,
                 literal_eq4: bool = False):
        for name, value in (("sigma1", sigma1), ("sigma2", sigma2)):
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        self.log_sigma1 = math.log(sigma1)
        self.log_sigma2 = math.log(sigma2)
        self.literal_eq4 = bool(literal_eq4)

    @property
    def sigma1(self) -> float:
        return math.exp(self.log_sigma1)

    @property
    def sigma2(self) -> float:
        return math.exp(self.log_sigma2)

    def __repr__(self) -> str:
        return (f"LossWeights(sigma1={self.sigma1:.6g}, sigma2={self.sigma2:.6g}, "
                f"literal_eq4={self.literal_eq4})")


def _channels(wave, name: str) -> np.ndarray:
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != NUM_CHANNELS:
        raise ValueError(f"{name} must be [{NUM_CHANNELS} x N], got shape {x.shape}")
    return x


def l_ns(enhanced, target) -> float:
    """Noise-suppression loss: negative mean per-channel SI-SNR.

    Lower is better; a perfect estimate bottoms out at the epsilon cap of
    the underlying ratio rather than at -inf.
    """
    enh = _channels(enhanced, "enhanced")
    ref = _channels(target, "target")
    if enh.shape != ref.shape:
        raise ValueError(f"shape mismatch: enhanced {enh.shape} vs target {ref.shape}")
    per_channel = [si_snr(e, r) for e, r in zip(enh, ref)]
    return -float(np.mean(per_channel))


def l_ps(enhanced, reference) -> float:
    """Spatial-preservation loss: MSE between the MUSIC spectra of the
    enhanced output and of the reference, each peak-normalized per band."""
    enh = _channels(enhanced, "enhanced")
    ref = _channels(reference, "reference")
    return spatial_mse(music_spectrum(enh), music_spectrum(ref))


def l_total(lns: float, lps: float, w: LossWeights) -> float:
    """Combined objective with learnable per-task variances."""
    s1_sq = w.sigma1 ** 2
    reg = w.log_sigma1 + w.log_sigma2
    if w.literal_eq4:
        return (10.0 * lns + lps) / (2.0 * s1_sq) + reg
    s2_sq = w.sigma2 ** 2
    return 10.0 / (2.0 * s1_sq) * lns + 1.0 / (2.0 * s2_sq) * lps + reg


def l_total_grad(lns: float, lps: float, w: LossWeights):
    """Combined objective and its partials w.r.t. (log sigma1, log sigma2).

    Returns:
        (value, d/dlog_sigma1, d/dlog_sigma2)
    """
    value = l_total(lns, lps, w)
    s1_sq = w.sigma1 ** 2
    if w.literal_eq4:
        g1 = -(10.0 * lns + lps) / s1_sq + 1.0
        g2 = 1.0
    else:
        s2_sq = w.sigma2 ** 2
        g1 = -10.0 * lns / s1_sq + 1.0
        g2 = -lps / s2_sq + 1.0
    return value, g1, g2
