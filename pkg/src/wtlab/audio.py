"""Multichannel waveforms, STFT analysis/synthesis and file I/O.

Conventions used across the package:
    * waveforms are [M x N] float arrays (M channels, N samples) at 16 kHz
    * spectrograms are [M x F x T] complex arrays (F = fft_size // 2 + 1)
    * all analysis runs in float64; files store float32/complex64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftParams:
    """Analysis/synthesis parameters: 20 ms periodic Hann frames, 50% overlap."""

    frame_len: int = 320
    hop_len: int = 160
    fft_size: int = 320
    window: str = "hann"

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2 != 0:
            raise ValueError(f"frame_len must be a positive even number, got {self.frame_len}")
        if self.hop_len != self.frame_len // 2:
            raise ValueError(
                f"hop_len must be frame_len / 2 for the overlap-add synthesis used here, "
                f"got hop_len={self.hop_len} with frame_len={self.frame_len}"
            )
        if self.fft_size != self.frame_len:
            raise ValueError(f"fft_size must equal frame_len, got {self.fft_size} != {self.frame_len}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def bin_frequencies(self, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
        """Physical centre frequency of every bin in Hz, [F]."""
        return np.arange(self.num_bins) * sample_rate / self.fft_size

    def make_window(self) -> np.ndarray:
        # fftbins=True gives the periodic variant, which sums to a constant at 50% overlap
        return get_window(self.window, self.frame_len, fftbins=True).astype(np.float64)


@dataclass
class Waveform:
    """A multichannel signal: samples [M x N], sample_rate in Hz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[None, :]
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be [M x N], got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass
class Spectrogram:
    """Complex STFT bins [M x F x T] plus the parameters that produced them."""

    bins: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    num_samples: int | None = None

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if not np.iscomplexobj(self.bins):
            self.bins = self.bins.astype(np.complex128)
        if self.bins.ndim == 2:
            self.bins = self.bins[None, :, :]
        if self.bins.ndim != 3:
            raise ValueError(f"bins must be [M x F x T], got shape {self.bins.shape}")
        if self.bins.shape[1] != self.params.num_bins:
            raise ValueError(
                f"bin count {self.bins.shape[1]} does not match params "
                f"(fft_size={self.params.fft_size} gives {self.params.num_bins} bins)"
            )

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[1]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[2]


def stft(wave: Waveform, params: StftParams | None = None) -> Spectrogram:
    """Short-time Fourier transform of every channel.

    The signal is reflect-padded by frame_len/2 on both ends so each sample
    receives full window coverage; a 4 s / 16 kHz input yields 401 frames.

    Args:
        wave: input signal, [M x N] with N >= frame_len
        params: analysis parameters (defaults to 320/160 Hann)
    Return:
        Spectrogram with bins [M x F x T]
    """
    params = params or StftParams()
    x = wave.samples
    if x.shape[1] < params.frame_len:
        raise ValueError(
            f"need at least frame_len={params.frame_len} samples, got {x.shape[1]}"
        )
    pad = params.frame_len // 2
    xp = np.pad(x, ((0, 0), (pad, pad)), mode="reflect")
    frames = sliding_window_view(xp, params.frame_len, axis=1)[:, :: params.hop_len, :]
    win = params.make_window()
    bins = np.fft.rfft(frames * win, n=params.fft_size, axis=-1)
    return Spectrogram(bins=bins.transpose(0, 2, 1), params=params, num_samples=x.shape[1])


def istft(spec: Spectrogram, num_samples: int | None = None) -> Waveform:
    """Weighted overlap-add synthesis, the exact inverse of :func:`stft`.

    Args:
        spec: spectrogram to invert
        num_samples: output length; defaults to the length recorded by stft,
            else (T - 1) * hop_len
    Return:
        Waveform [M x num_samples]
    """
    params = spec.params
    if spec.bins.shape[1] != params.num_bins:
        raise ValueError(
            f"spectrogram has {spec.bins.shape[1]} bins but params expect {params.num_bins}"
        )
    if num_samples is None:
        num_samples = spec.num_samples
    if num_samples is None:
        num_samples = (spec.num_frames - 1) * params.hop_len

    frames = np.fft.irfft(spec.bins.transpose(0, 2, 1), n=params.fft_size, axis=-1)
    win = params.make_window()
    frames = frames * win

    m, t, frame = frames.shape
    hop = params.hop_len
    total = (t - 1) * hop + frame
    acc = np.zeros((m, total))
    wsum = np.zeros(total)
    wsq = win * win
    # 50% overlap: even-indexed frames tile the axis without overlapping each
    # other, likewise the odd ones, so two strided adds cover the whole sum.
    for parity in (0, 1):
        sel = frames[:, parity::2, :]
        if sel.shape[1] == 0:
            continue
        start = parity * hop
        stop = start + sel.shape[1] * frame
        acc[:, start:stop] += sel.reshape(m, -1)
        wsum[start:stop] += np.tile(wsq, sel.shape[1])

    good = wsum > 1e-12
    out = np.zeros_like(acc)
    out[:, good] = acc[:, good] / wsum[good]

    pad = params.frame_len // 2
    if pad + num_samples > total:
        raise ValueError(
            f"requested {num_samples} samples but synthesis only covers {total - pad}"
        )
    return Waveform(samples=out[:, pad : pad + num_samples].copy())


def spectral_energy(spec: Spectrogram) -> float:
    """Energy of the windowed analysis frames recovered from the spectrogram.

    Per frame this is Parseval's identity for the one-sided FFT: DC and
    Nyquist bins count once, every other bin twice, all divided by fft_size.
    """
    params = spec.params
    weights = np.full(params.num_bins, 2.0)
    weights[0] = 1.0
    if params.fft_size % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(weights[None, :, None] * np.abs(spec.bins) ** 2) / params.fft_size)


def pack_ri(spec: Spectrogram) -> np.ndarray:
    """Stack real and imaginary parts along frequency: [M x F x T] -> [1 x M x 2F x T]."""
    ri = np.concatenate([spec.bins.real, spec.bins.imag], axis=1)
    return ri[None, :, :, :]


def unpack_ri(features: np.ndarray, params: StftParams | None = None,
              num_samples: int | None = None) -> Spectrogram:
    """Inverse of :func:`pack_ri`: [1 x M x 2F x T] -> complex [M x F x T]."""
    params = params or StftParams()
    if features.ndim != 4 or features.shape[0] != 1:
        raise ValueError(f"expected features [1 x M x 2F x T], got shape {features.shape}")
    two_f = features.shape[2]
    if two_f % 2 != 0 or two_f // 2 != params.num_bins:
        raise ValueError(
            f"feature frequency axis {two_f} does not match 2 x {params.num_bins} bins"
        )
    f = two_f // 2
    bins = features[0, :, :f, :] + 1j * features[0, :, f:, :]
    return Spectrogram(bins=bins, params=params, num_samples=num_samples)


def read_wav(path: str | Path) -> Waveform:
    """Read a WAV file as float64 in [-1, 1], enforcing the 16 kHz rate.

    Integer PCM is scaled by its full-scale value; float data is taken as-is.
    """
    path = Path(path)
    if path.suffix.lower() == ".flac":
        raise ValueError(
            f"cannot decode {path}: FLAC support requires the 'soundfile' package, "
            "which is not installed; convert the corpus to WAV"
        )
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises bare ValueError on malformed headers
        raise ValueError(f"cannot parse {path} as WAV: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: unsupported sample rate {rate} Hz (expected {SAMPLE_RATE})")
    if data.ndim == 1:
        data = data[:, None]
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max) + 1.0
        samples = data.astype(np.float64) / scale
    else:
        samples = data.astype(np.float64)
    return Waveform(samples=samples.T, sample_rate=rate)


def write_wav(path: str | Path, wave: Waveform) -> None:
    """Write a waveform as 32-bit float WAV."""
    if wave.sample_rate != SAMPLE_RATE:
        raise ValueError(f"refusing to write {wave.sample_rate} Hz (expected {SAMPLE_RATE})")
    data = wave.samples.T.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(str(path), wave.sample_rate, data)


_SPC_HEADER = struct.Struct("<III")


def save_spectrogram(path: str | Path, spec: Spectrogram) -> None:
    """Write bins to a flat binary container: M, F, T as uint32, then
    interleaved float32 (re, im) pairs in C order."""
    m, f, t = spec.bins.shape
    with open(path, "wb") as fh:
        fh.write(_SPC_HEADER.pack(m, f, t))
        fh.write(np.ascontiguousarray(spec.bins.astype(np.complex64)).tobytes())


def load_spectrogram(path: str | Path, params: StftParams | None = None) -> Spectrogram:
    """Read a container written by :func:`save_spectrogram`."""
    params = params or StftParams()
    raw = Path(path).read_bytes()
    if len(raw) < _SPC_HEADER.size:
        raise ValueError(f"{path}: truncated spectrogram container")
    m, f, t = _SPC_HEADER.unpack_from(raw)
    expect = _SPC_HEADER.size + m * f * t * 8
    if len(raw) != expect:
        raise ValueError(
            f"{path}: container size {len(raw)} does not match header "
            f"M={m} F={f} T={t} (expected {expect} bytes)"
        )
    bins = np.frombuffer(raw, dtype=np.complex64, offset=_SPC_HEADER.size).reshape(m, f, t)
    return Spectrogram(bins=bins.astype(np.complex128), params=params)
