"""MVDR beamforming on STFT data.

All covariance work happens per frequency bin on [F x M x M] stacks. Weights
follow the classic minimum-variance solution

    w_f = R_f^-1 a_f / (a_f^H R_f^-1 a_f)

with a small diagonal loading on R for numerical safety. Steering comes
either from array geometry (far-field ULA) or from the principal
eigenvector of a speech covariance (relative transfer function).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio import SAMPLE_RATE, Spectrogram

DIAGONAL_LOADING = 1e-6


@dataclass
class CovarianceSet:
    """Per-bin spatial covariance matrices [F x M x M] (Hermitian)."""

    matrices: np.ndarray
    degenerate_bins: np.ndarray = field(default=None)  # [F] bool, mask fallback used

    def __post_init__(self):
        m = np.asarray(self.matrices)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ValueError(f"matrices must be [F x M x M], got {m.shape}")
        self.matrices = m.astype(np.complex128)
        if self.degenerate_bins is None:
            self.degenerate_bins = np.zeros(m.shape[0], dtype=bool)

    @property
    def num_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_channels(self) -> int:
        return self.matrices.shape[1]


@dataclass
class BeamformerWeights:
    """Complex weights [F x M]; the output is w^H y per bin."""

    weights: np.ndarray
    diagonal_loading: float = DIAGONAL_LOADING

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.complex128)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be [F x M], got {self.weights.shape}")


def estimate_covariance(spec: Spectrogram, mask: np.ndarray | None = None) -> CovarianceSet:
    """Mask-weighted spatial covariance of a multichannel spectrogram.

    R_f = sum_t m[f,t] y_ft y_ft^H / sum_t m[f,t]. A frequency whose mask is
    all zero falls back to the unmasked average and is flagged.

    Args:
        spec: [M x F x T] spectrogram
        mask: [F x T] nonnegative weights, or None for the plain average
    """
    y = spec.bins
    m_ch, f_bins, frames = y.shape
    if mask is None:
        mask = np.ones((f_bins, frames))
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (f_bins, frames):
        raise ValueError(f"mask must be [F x T] = {(f_bins, frames)}, got {mask.shape}")
    if np.any(mask < 0.0):
        raise ValueError("mask weights must be nonnegative")

    weight = mask.sum(axis=1)  # [F]
    dead = weight <= 1e-12
    safe = np.where(dead, 1.0, weight)
    cov = np.einsum("ft,ift,jft->fij", mask, y, np.conj(y), optimize=True)
    cov /= safe[:, None, None]
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} of {f_bins} bins had an all-zero mask; "
            "falling back to the unmasked average there",
            RuntimeWarning,
        )
        plain = np.einsum("ift,jft->fij", y, np.conj(y), optimize=True) / frames
        cov[dead] = plain[dead]
    cov = 0.5 * (cov + np.conj(np.swapaxes(cov, 1, 2)))
    return CovarianceSet(matrices=cov, degenerate_bins=dead)


def steering_vector(freqs_hz: np.ndarray, theta_deg: float, num_mics: int = 8,
                    spacing: float = 0.04, c: float = 343.0) -> np.ndarray:
    """Far-field ULA steering vectors, [F x M].

    a_m(f) = exp(-2j pi f m spacing cos(theta) / c); element 0 is the
    reference, theta is measured from the array axis.
    """
    freqs_hz = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    m = np.arange(num_mics)
    tau = m * spacing * np.cos(np.deg2rad(theta_deg)) / c  # seconds
    return np.exp(-2j * np.pi * freqs_hz[:, None] * tau[None, :])


def rtf_steering(cov: CovarianceSet | np.ndarray, ref: int = 0,
                 max_iter: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Relative transfer function per bin, [F x M], normalized so a[ref] = 1.

    Principal eigenvector by power iteration (at most `max_iter` steps,
    stopping early once the residual ||R v - lambda v|| drops below
    tol * lambda).
    """
    r = cov.matrices if isinstance(cov, CovarianceSet) else np.asarray(cov)
    f_bins, m_ch, _ = r.shape
    v = r[:, :, ref].copy()
    norms = np.linalg.norm(v, axis=1)
    weak = norms < 1e-12
    v[weak] = 1.0 / np.sqrt(m_ch)
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    lam = np.ones(f_bins)
    for _ in range(max_iter):
        w = np.einsum("fij,fj->fi", r, v)
        lam = np.linalg.norm(w, axis=1)
        lam_safe = np.where(lam < 1e-30, 1.0, lam)
        v_new = w / lam_safe[:, None]
        resid = np.linalg.norm(
            np.einsum("fij,fj->fi", r, v_new) - lam[:, None] * v_new, axis=1
        )
        v = v_new
        if np.all(resid <= tol * np.maximum(lam, 1e-30)):
            break

    anchor = v[:, ref]
    bad = np.abs(anchor) < 1e-9 * np.linalg.norm(v, axis=1)
    if np.any(bad):
        raise ValueError(
            f"reference channel {ref} has (near) zero gain in the principal "
            f"eigenvector at bins {np.where(bad)[0][:8].tolist()}; "
            "choose a different reference"
        )
    return v / anchor[:, None]


def mvdr_weights(noise_cov: CovarianceSet | np.ndarray, steering: np.ndarray,
                 loading: float = DIAGONAL_LOADING) -> BeamformerWeights:
    """Distortionless minimum-variance weights per bin.

    The noise covariance is loaded with loading * trace(R)/M * I before the
    solve; a bin that is still singular raises with its index.
    """
    r = noise_cov.matrices if isinstance(noise_cov, CovarianceSet) else np.asarray(noise_cov)
    f_bins, m_ch, _ = r.shape
    a = np.asarray(steering, dtype=np.complex128)
    if a.shape != (f_bins, m_ch):
        raise ValueError(f"steering must be [F x M] = {(f_bins, m_ch)}, got {a.shape}")

    trace = np.real(np.trace(r, axis1=1, axis2=2))
    loaded = r + (loading * trace / m_ch)[:, None, None] * np.eye(m_ch)[None, :, :]
    try:
        r_inv_a = np.linalg.solve(loaded, a[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        for f in range(f_bins):
            try:
                np.linalg.solve(loaded[f], a[f])
            except np.linalg.LinAlgError:
                raise ValueError(
                    f"noise covariance is singular at bin {f} even after "
                    f"diagonal loading {loading}"
                ) from None
        raise
    denom = np.einsum("fm,fm->f", np.conj(a), r_inv_a)
    denom_re = np.real(denom)
    bad = np.abs(denom) < 1e-30
    if np.any(bad):
        raise ValueError(
            f"a^H R^-1 a vanished at bins {np.where(bad)[0][:8].tolist()}; "
            "steering is orthogonal to the loaded covariance"
        )
    return BeamformerWeights(weights=r_inv_a / denom_re[:, None], diagonal_loading=loading)


def apply_beamformer(weights: BeamformerWeights, spec: Spectrogram) -> Spectrogram:
    """Apply w^H y per bin: [M x F x T] -> [1 x F x T]."""
    w = weights.weights
    if w.shape != (spec.num_bins, spec.num_channels):
        raise ValueError(
            f"weights [F x M] = {w.shape} do not match spectrogram "
            f"{(spec.num_bins, spec.num_channels)}"
        )
    out = np.einsum("fm,mft->ft", np.conj(w), spec.bins)
    return Spectrogram(bins=out[None], params=spec.params, num_samples=spec.num_samples)


@dataclass
class BeamformResult:
    """Beamformed spectrogram plus the quantities used to produce it."""

    spec: Spectrogram
    steering: np.ndarray                 # [F x M]
    weights: BeamformerWeights
    speech_mask: np.ndarray | None = None
    noise_mask: np.ndarray | None = None
    degenerate: bool = False


def _ratio_masks(target: np.ndarray, residual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel magnitude-ratio masks averaged over channels, each [F x T]."""
    mag_s = np.abs(target)
    mag_n = np.abs(residual)
    denom = np.maximum(mag_s + mag_n, 1e-12)
    return (mag_s / denom).mean(axis=0), (mag_n / denom).mean(axis=0)


def mb_mvdr(mix: Spectrogram, target: Spectrogram, *, ref: int = 0,
            mimo: bool = False, loading: float = DIAGONAL_LOADING) -> BeamformResult:
    """Mask-based MVDR with oracle magnitude-ratio masks.

    The residual mix - target acts as noise. Speech/noise masks weight the
    mixture covariance, steering is the RTF of the masked speech covariance,
    and the weights are MVDR against the masked noise covariance. With
    mimo=True the single-channel output is re-stacked through the steering
    vector: out_m = a_m * (w^H y), so the reference channel equals the mono
    output.
    """
    if mix.bins.shape != target.bins.shape:
        raise ValueError(
            f"mixture {mix.bins.shape} and target {target.bins.shape} disagree"
        )
    residual = mix.bins - target.bins
    mask_s, mask_n = _ratio_masks(target.bins, residual)
    cov_s = estimate_covariance(mix, mask_s)
    cov_n = estimate_covariance(mix, mask_n)

    diff = np.linalg.norm(cov_s.matrices - cov_n.matrices)
    scale = np.linalg.norm(cov_s.matrices)
    degenerate = bool(diff <= 1e-6 * max(scale, 1e-30))
    if degenerate:
        warnings.warn(
            "speech and noise covariances are nearly identical; "
            "masks carry no spatial contrast",
            RuntimeWarning,
        )

    a = rtf_steering(cov_s, ref=ref)
    w = mvdr_weights(cov_n, a, loading=loading)
    mono = apply_beamformer(w, mix)
    if mimo:
        bins = a.T[:, :, None] * mono.bins[0][None, :, :]
        out = Spectrogram(bins=bins, params=mix.params, num_samples=mix.num_samples)
    else:
        out = mono
    return BeamformResult(spec=out, steering=a, weights=w,
                          speech_mask=mask_s, noise_mask=mask_n, degenerate=degenerate)


def ti_mvdr(mix: Spectrogram, target: Spectrogram, *, theta_deg: float | None = None,
            spacing: float = 0.04, c: float = 343.0, ref: int = 0,
            loading: float = DIAGONAL_LOADING,
            sample_rate: int = SAMPLE_RATE) -> BeamformResult:
    """Time-invariant MVDR: everything except the target counts as noise.

    The noise covariance is the unmasked covariance of mix - target. Steering
    is the RTF of the target covariance, or the far-field ULA vector when
    theta_deg is given.
    """
    if mix.bins.shape != target.bins.shape:
        raise ValueError(
            f"mixture {mix.bins.shape} and target {target.bins.shape} disagree"
        )
    residual = Spectrogram(bins=mix.bins - target.bins, params=mix.params,
                           num_samples=mix.num_samples)
    cov_n = estimate_covariance(residual)
    if theta_deg is None:
        a = rtf_steering(estimate_covariance(target), ref=ref)
    else:
        freqs = mix.params.bin_frequencies(sample_rate)
        a = steering_vector(freqs, theta_deg, num_mics=mix.num_channels,
                            spacing=spacing, c=c)
    w = mvdr_weights(cov_n, a, loading=loading)
    return BeamformResult(spec=apply_beamformer(w, mix), steering=a, weights=w)
