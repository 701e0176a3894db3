"""Spatial evaluation: wideband MUSIC, SI-SNR and interaural-style cue deltas.

The cue metrics follow the mirrored-pair convention of an 8-element ULA:
pairs (0,4), (1,5), (2,6), (3,7). Each metric is computed on the clean
reference and on the processed signal, the per-frame/per-bin absolute
deviation is averaged over regions where the clean reference is active
(within 40 dB of its maximum), and pair results are averaged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio import SAMPLE_RATE, Spectrogram, StftParams, Waveform, stft

MIC_PAIRS = ((0, 4), (1, 5), (2, 6), (3, 7))

MUSIC_FRAME = 600
MUSIC_HOP = 300
MUSIC_BANDS = 300


@dataclass
class SpatialSpectrum:
    """Narrowband MUSIC pseudo-spectra, one row per band, peak-normalized."""

    power: np.ndarray                     # [B x A] in (0, 1]
    band_freqs_hz: np.ndarray             # [B]
    angles_deg: np.ndarray                # [A]
    degenerate_bands: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degenerate_bands is None:
            self.degenerate_bands = np.zeros(self.power.shape[0], dtype=bool)

    def wideband(self) -> np.ndarray:
        """Average over bands, [A]."""
        return self.power.mean(axis=0)

    def peak_angle_deg(self) -> float:
        return float(self.angles_deg[int(np.argmax(self.wideband()))])


def music_spectrum(
    wave: Waveform | np.ndarray,
    num_sources: int = 1,
    *,
    frame_len: int = MUSIC_FRAME,
    hop_len: int = MUSIC_HOP,
    num_bands: int = MUSIC_BANDS,
    angles_deg: np.ndarray | None = None,
    spacing: float = 0.04,
    c: float = 343.0,
    sample_rate: int = SAMPLE_RATE,
) -> SpatialSpectrum:
    """Wideband MUSIC over a dense grid of angles.

    Snapshots come from Hann-windowed frames (600/300 by default, about 212
    snapshots for 4 s). Band b uses FFT bin b+1, covering 26.67 Hz steps up
    to 8 kHz. Per band: covariance, eigendecomposition, noise projector from
    the M - num_sources smallest eigenvectors, then
    P(theta) = 1 / ||E^H a(theta)||^2, normalized to a peak of 1.

    Args:
        wave: [M x N] array or Waveform; complex input is allowed
        num_sources: signal-subspace dimension, 1 <= n < M
    """
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave)
    if x.ndim != 2:
        raise ValueError(f"expected [M x N], got shape {x.shape}")
    m_ch, n = x.shape
    if not 1 <= num_sources < m_ch:
        raise ValueError(f"num_sources must be in [1, {m_ch - 1}], got {num_sources}")
    if n < frame_len:
        raise ValueError(f"need at least {frame_len} samples, got {n}")
    if angles_deg is None:
        angles_deg = np.arange(181, dtype=np.float64)

    win = get_window("hann", frame_len, fftbins=True)
    frames = sliding_window_view(x, frame_len, axis=1)[:, ::hop_len, :] * win
    spec = np.fft.fft(frames, axis=-1)[:, :, 1 : num_bands + 1]  # [M x T x B]
    snaps = spec.transpose(2, 0, 1)  # [B x M x T]
    num_frames = snaps.shape[2]

    cov = snaps @ np.conj(snaps.transpose(0, 2, 1)) / num_frames  # [B x M x M]
    trace = np.real(np.trace(cov, axis1=1, axis2=2))
    dead = trace <= 1e-30
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} of {num_bands} bands carry no energy; "
            "their spectra are flat",
            RuntimeWarning,
        )
        cov[dead] = np.eye(m_ch)[None, :, :]

    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    noise_sub = vecs[:, :, : m_ch - num_sources]  # [B x M x K]

    freqs = (np.arange(1, num_bands + 1)) * sample_rate / frame_len
    mics = np.arange(m_ch)
    cos = np.cos(np.deg2rad(angles_deg))
    # a[b, m, angle] = exp(-2j pi f_b m d cos(theta) / c)
    phase = -2j * np.pi / c * spacing
    steer = np.exp(phase * freqs[:, None, None] * mics[None, :, None] * cos[None, None, :])

    proj = np.einsum("bmk,bma->bka", np.conj(noise_sub), steer, optimize=True)
    denom = np.sum(np.abs(proj) ** 2, axis=1)  # [B x A]
    power = 1.0 / np.maximum(denom, 1e-30)
    power[dead] = 1.0
    power /= power.max(axis=1, keepdims=True)
    return SpatialSpectrum(
        power=power,
        band_freqs_hz=freqs,
        angles_deg=np.asarray(angles_deg, dtype=np.float64),
        degenerate_bands=dead,
    )


def spatial_mse(a: SpatialSpectrum, b: SpatialSpectrum) -> float:
    """Mean squared difference between two spectra on the same grid."""
    if a.power.shape != b.power.shape:
        raise ValueError(f"spectra shapes differ: {a.power.shape} vs {b.power.shape}")
    return float(np.mean((a.power - b.power) ** 2))


def si_snr(est: np.ndarray, ref: np.ndarray, eps: float = 1e-8) -> float:
    """Scale-invariant SNR in dB between two mono signals.

    s_t = <est, ref> ref / ||ref||^2, e = est - s_t,
    si_snr = 10 log10(||s_t||^2 / (||e||^2 + eps)).
    No mean removal is applied. A zero reference raises.
    """
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ValueError("reference signal is all zero")
    dot = float(np.dot(est, ref))
    target = dot / ref_energy * ref
    err = est - target
    s = float(np.dot(target, target))
    e = float(np.dot(err, err))
    return 10.0 * np.log10(max(s, 1e-300) / (e + eps))


def si_snr_grad(est: np.ndarray, ref: np.ndarray,
                eps: float = 1e-8) -> tuple[float, np.ndarray]:
    """SI-SNR and its gradient with respect to the estimate."""
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ValueError("reference signal is all zero")
    dot = float(np.dot(est, ref))
    target = dot / ref_energy * ref
    err = est - target
    s = float(np.dot(target, target))
    e = float(np.dot(err, err))
    value = 10.0 * np.log10(max(s, 1e-300) / (e + eps))
    # d s / d est = 2 target; d e / d est = 2 err (err is orthogonal to ref)
    scale = 10.0 / np.log(10.0)
    grad = scale * (2.0 * target / max(s, 1e-300) - 2.0 * err / (e + eps))
    return value, grad


def gcc_phat_delay(x: np.ndarray, y: np.ndarray, *, sample_rate: int = SAMPLE_RATE,
                   max_shift_s: float = 0.001, interpolate: bool = True) -> float:
    """Time lag of x relative to y via GCC-PHAT, in seconds.

    Positive values mean x arrives later than y. The peak is searched within
    +-max_shift_s and refined with parabolic interpolation. Returns NaN when
    either input is silent.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if float(np.max(np.abs(x))) == 0.0 or float(np.max(np.abs(y))) == 0.0:
        return float("nan")

    n = x.shape[0]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    cross = np.fft.rfft(x, nfft) * np.conj(np.fft.rfft(y, nfft))
    mag = np.abs(cross)
    floor = 1e-12 * float(mag.max())
    if mag.max() <= 0.0:
        return float("nan")
    cc = np.fft.irfft(cross / np.maximum(mag, max(floor, 1e-300)), nfft)

    max_shift = min(int(max_shift_s * sample_rate), n - 1)
    cc = np.concatenate([cc[-max_shift:], cc[: max_shift + 1]])
    curve = np.abs(cc)
    peak = int(np.argmax(curve))
    delta = 0.0
    if interpolate and 0 < peak < curve.shape[0] - 1:
        left, mid, right = curve[peak - 1], curve[peak], curve[peak + 1]
        denom = left - 2.0 * mid + right
        if denom < 0.0:
            delta = float(np.clip(0.5 * (left - right) / denom, -1.0, 1.0))
    return (peak - max_shift + delta) / sample_rate


@dataclass
class CueReport:
    """Cue deviations of a processed signal against its clean reference.

    Aggregates are means over mirrored mic pairs; per-pair values are kept
    for inspection. ITD deltas are microseconds, IPD radians, ILD dB.
    """

    delta_itd_us: float
    delta_ipd_rad: float
    delta_ild_db: float
    pair_itd_us: np.ndarray
    pair_ipd_rad: np.ndarray
    pair_ild_db: np.ndarray
    pairs: tuple = MIC_PAIRS


def _frame(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    if x.shape[-1] < frame:
        raise ValueError(f"need at least {frame} samples, got {x.shape[-1]}")
    return sliding_window_view(x, frame, axis=-1)[..., ::hop, :]


def cue_deltas(
    processed: Waveform,
    clean: Waveform,
    pairs: tuple = MIC_PAIRS,
    *,
    gate_db: float = 40.0,
    itd_frame: int = 512,
    itd_hop: int = 256,
    params: StftParams | None = None,
) -> CueReport:
    """Interaural-style cue deviations between processed and clean signals.

    ITD uses per-frame GCC-PHAT (+-1 ms search), IPD the wrapped phase
    difference of STFT bins, ILD the per-frame level ratio of the pair. Only
    frames/bins where the clean pair is within gate_db of its own maximum
    participate. Identical inputs give exact zeros.
    """
    if processed.samples.shape != clean.samples.shape:
        raise ValueError(
            f"shape mismatch: {processed.samples.shape} vs {clean.samples.shape}"
        )
    needed = max(max(p) for p in pairs)
    if clean.num_channels <= needed:
        raise ValueError(f"pairs need at least {needed + 1} channels")
    params = params or StftParams()
    gate = 10.0 ** (-gate_db / 10.0)

    spec_p = stft(processed, params).bins
    spec_c = stft(clean, params).bins

    itds, ipds, ilds = [], [], []
    for i, j in pairs:
        # --- ITD on time frames
        fp_i = _frame(processed.samples[i], itd_frame, itd_hop)
        fp_j = _frame(processed.samples[j], itd_frame, itd_hop)
        fc_i = _frame(clean.samples[i], itd_frame, itd_hop)
        fc_j = _frame(clean.samples[j], itd_frame, itd_hop)
        energy = 0.5 * (np.sum(fc_i**2, axis=1) + np.sum(fc_j**2, axis=1))
        active = energy >= gate * float(energy.max()) if energy.max() > 0 else energy > 0
        deltas = []
        for t in np.where(active)[0]:
            tau_c = gcc_phat_delay(fc_i[t], fc_j[t], sample_rate=clean.sample_rate)
            tau_p = gcc_phat_delay(fp_i[t], fp_j[t], sample_rate=clean.sample_rate)
            deltas.append(abs(tau_p - tau_c) * 1e6)
        deltas = np.asarray(deltas)
        itds.append(float(np.nanmean(deltas)) if np.any(np.isfinite(deltas)) else np.nan)

        # --- IPD on STFT bins
        bin_energy = 0.5 * (np.abs(spec_c[i]) ** 2 + np.abs(spec_c[j]) ** 2)
        active_bins = bin_energy >= gate * float(bin_energy.max())
        phase_c = np.angle(spec_c[i] * np.conj(spec_c[j]))
        phase_p = np.angle(spec_p[i] * np.conj(spec_p[j]))
        diff = np.angle(np.exp(1j * (phase_p - phase_c)))  # wrapped to (-pi, pi]
        ipds.append(float(np.mean(np.abs(diff[active_bins]))))

        # --- ILD on STFT frames
        pow_ci = np.sum(np.abs(spec_c[i]) ** 2, axis=0)
        pow_cj = np.sum(np.abs(spec_c[j]) ** 2, axis=0)
        pow_pi = np.sum(np.abs(spec_p[i]) ** 2, axis=0)
        pow_pj = np.sum(np.abs(spec_p[j]) ** 2, axis=0)
        frame_energy = 0.5 * (pow_ci + pow_cj)
        active_frames = frame_energy >= gate * float(frame_energy.max())
        tiny = 1e-300
        ild_c = 10.0 * np.log10(np.maximum(pow_ci, tiny) / np.maximum(pow_cj, tiny))
        ild_p = 10.0 * np.log10(np.maximum(pow_pi, tiny) / np.maximum(pow_pj, tiny))
        ilds.append(float(np.mean(np.abs(ild_p - ild_c)[active_frames])))

    itds, ipds, ilds = map(np.asarray, (itds, ipds, ilds))
    return CueReport(
        delta_itd_us=float(np.nanmean(itds)),
        delta_ipd_rad=float(np.mean(ipds)),
        delta_ild_db=float(np.mean(ilds)),
        pair_itd_us=itds,
        pair_ipd_rad=ipds,
        pair_ild_db=ilds,
        pairs=pairs,
    )


def save_pgm(path, spectrum: SpatialSpectrum) -> None:
    """Write a spectrum as a binary 8-bit PGM heatmap (bands x angles)."""
    power = np.clip(spectrum.power, 0.0, 1.0)
    img = np.round(power * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())
