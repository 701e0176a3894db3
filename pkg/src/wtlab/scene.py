"""Room scenes: geometry sampling, image-source RIRs and mixture rendering.

A scene is a shoebox room with a rigid 8-element uniform linear array
(4 cm spacing) placed well away from the boundaries, one speech source and
one noise source. RIRs come from the image-source method with uniform wall
absorption derived from the requested RT60, and mixtures are rendered by
convolving chunked sources, scaling noise for a target SNR at the reference
microphone and normalizing the mixture peak.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import next_fast_len
from scipy.signal import butter, fftconvolve, sosfilt

from .audio import SAMPLE_RATE, Waveform

SPEED_OF_SOUND = 343.0

# fractional-delay interpolation: 81-tap Hann-windowed sinc, tabulated at
# 128 fractional positions (worst-case delay error 1/256 sample)
SINC_TAPS = 81
SINC_HALF = SINC_TAPS // 2
FRAC_BINS = 128


@dataclass(frozen=True)
class SceneConfig:
    """Sampling ranges for random scenes."""

    room_length_range: tuple[float, float] = (5.0, 10.0)
    room_width_range: tuple[float, float] = (5.0, 10.0)
    room_height_range: tuple[float, float] = (3.0, 4.0)
    rt60_range: tuple[float, float] = (0.3, 0.7)
    snr_range_db: tuple[float, float] = (-5.0, 20.0)
    num_mics: int = 8
    mic_spacing: float = 0.04
    array_margin: float = 1.0
    source_margin: float = 0.5
    source_distance_range: tuple[float, float] = (0.75, 2.0)
    peak_range: tuple[float, float] = (0.2, 0.9)
    duration: float = 4.0
    sample_rate: int = SAMPLE_RATE
    speed_of_sound: float = SPEED_OF_SOUND

    @property
    def chunk_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class RoomScene:
    """One sampled configuration with full provenance."""

    seed: int
    room_dims: np.ndarray          # [3] metres
    rt60: float
    snr_db: float
    array_center: np.ndarray       # [3]
    array_axis: np.ndarray         # [3] unit vector
    mic_positions: np.ndarray      # [M x 3]
    speech_pos: np.ndarray         # [3]
    noise_pos: np.ndarray          # [3]
    config: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        for name in ("room_dims", "array_center", "array_axis", "speech_pos", "noise_pos"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.mic_positions = np.asarray(self.mic_positions, dtype=np.float64)

    def source_doa_deg(self, source_pos: np.ndarray) -> float:
        """Angle in degrees between the array axis and the direction to a source."""
        v = np.asarray(source_pos, dtype=np.float64) - self.array_center
        cos = np.dot(self.array_axis, v) / np.linalg.norm(v)
        return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))

    @property
    def speech_doa_deg(self) -> float:
        return self.source_doa_deg(self.speech_pos)

    @property
    def noise_doa_deg(self) -> float:
        return self.source_doa_deg(self.noise_pos)

    def validate(self) -> None:
        cfg = self.config
        dims = self.room_dims
        if np.any(self.mic_positions < cfg.array_margin - 1e-9) or np.any(
            dims[None, :] - self.mic_positions < cfg.array_margin - 1e-9
        ):
            raise ValueError("array violates the boundary margin")
        for pos in (self.speech_pos, self.noise_pos):
            if np.any(pos < cfg.source_margin - 1e-9) or np.any(
                dims - pos < cfg.source_margin - 1e-9
            ):
                raise ValueError("source violates the boundary margin")
        dist = np.linalg.norm(self.speech_pos - self.array_center)
        lo, hi = cfg.source_distance_range
        if not (lo - 1e-9 <= dist <= hi + 1e-9):
            raise ValueError(f"speech distance {dist:.3f} outside [{lo}, {hi}]")
        spacing = np.linalg.norm(np.diff(self.mic_positions, axis=0), axis=1)
        if not np.allclose(spacing, cfg.mic_spacing, atol=1e-9):
            raise ValueError("array is not uniform/linear")
        if not (cfg.rt60_range[0] - 1e-9 <= self.rt60 <= cfg.rt60_range[1] + 1e-9):
            raise ValueError(f"rt60 {self.rt60} outside configured range")

    def to_dict(self) -> dict:
        d = {
            "seed": int(self.seed),
            "room_dims": self.room_dims.tolist(),
            "rt60": float(self.rt60),
            "snr_db": float(self.snr_db),
            "array_center": self.array_center.tolist(),
            "array_axis": self.array_axis.tolist(),
            "mic_positions": self.mic_positions.tolist(),
            "speech_pos": self.speech_pos.tolist(),
            "noise_pos": self.noise_pos.tolist(),
            "speech_doa_deg": self.speech_doa_deg,
            "noise_doa_deg": self.noise_doa_deg,
            "config": asdict(self.config),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScene":
        cfg = d.get("config")
        if cfg is not None:
            cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()}
            config = SceneConfig(**cfg)
        else:
            config = SceneConfig()
        return cls(
            seed=d["seed"],
            room_dims=d["room_dims"],
            rt60=d["rt60"],
            snr_db=d["snr_db"],
            array_center=d["array_center"],
            array_axis=d["array_axis"],
            mic_positions=d["mic_positions"],
            speech_pos=d["speech_pos"],
            noise_pos=d["noise_pos"],
            config=config,
        )


def _rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """Random rotation from independent uniform angles about x, y and z."""
    ax, ay, az = rng.uniform(0.0, 2.0 * np.pi, size=3)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def array_positions(center: np.ndarray, axis: np.ndarray, num_mics: int,
                    spacing: float) -> np.ndarray:
    """Element positions of a ULA centred on `center`.

    Element 0 sits at the +axis end, so a source at angle theta from the
    axis reaches element m with extra delay m * spacing * cos(theta) / c.
    """
    offsets = (num_mics - 1) / 2.0 - np.arange(num_mics)
    return center[None, :] + offsets[:, None] * spacing * axis[None, :]


def sample_scene(seed: int, config: SceneConfig | None = None,
                 snr_db: float | None = None) -> RoomScene:
    """Draw a random scene. Same seed and config give an identical scene.

    Raises RuntimeError when the configured margins cannot be satisfied.
    """
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)

    dims = np.array([
        rng.uniform(*cfg.room_length_range),
        rng.uniform(*cfg.room_width_range),
        rng.uniform(*cfg.room_height_range),
    ])
    half_aperture = (cfg.num_mics - 1) / 2.0 * cfg.mic_spacing
    if np.any(dims <= 2.0 * cfg.array_margin):
        raise RuntimeError(
            f"room {dims.round(2).tolist()} cannot hold the array with a "
            f"{cfg.array_margin} m margin"
        )

    mic_positions = axis = center = None
    for _ in range(10_000):
        center = rng.uniform(cfg.array_margin, dims - cfg.array_margin)
        axis = _rotation_matrix(rng) @ np.array([1.0, 0.0, 0.0])
        mics = array_positions(center, axis, cfg.num_mics, cfg.mic_spacing)
        if np.all(mics >= cfg.array_margin) and np.all(dims[None, :] - mics >= cfg.array_margin):
            mic_positions = mics
            break
    if mic_positions is None:
        raise RuntimeError("could not place the array inside the margins after 10000 tries")

    def draw_source() -> np.ndarray:
        for _ in range(10_000):
            v = rng.standard_normal(3)
            norm = np.linalg.norm(v)
            if norm < 1e-9:
                continue
            dist = rng.uniform(*cfg.source_distance_range)
            pos = center + dist * v / norm
            if np.all(pos >= cfg.source_margin) and np.all(dims - pos >= cfg.source_margin):
                return pos
        raise RuntimeError("could not place a source inside the margins after 10000 tries")

    speech_pos = draw_source()
    noise_pos = draw_source()
    rt60 = rng.uniform(*cfg.rt60_range)
    drawn_snr = rng.uniform(*cfg.snr_range_db)

    scene = RoomScene(
        seed=seed,
        room_dims=dims,
        rt60=rt60,
        snr_db=float(snr_db if snr_db is not None else drawn_snr),
        array_center=center,
        array_axis=axis,
        mic_positions=mic_positions,
        speech_pos=speech_pos,
        noise_pos=noise_pos,
        config=cfg,
    )
    scene.validate()
    return scene


def sabine_absorption(room_dims: np.ndarray, rt60: float) -> float:
    """Uniform Sabine absorption coefficient for the requested RT60."""
    lx, ly, lz = room_dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 0.161 * volume / (surface * rt60)
    if alpha >= 1.0:
        warnings.warn(
            f"Sabine absorption {alpha:.3f} >= 1 for rt60={rt60}; clipping", RuntimeWarning
        )
        alpha = 0.999
    return float(alpha)


def _windowed_sinc(offsets: np.ndarray) -> np.ndarray:
    w = 0.5 * (1.0 + np.cos(2.0 * np.pi * offsets / SINC_TAPS))
    return np.where(np.abs(offsets) <= SINC_HALF + 0.5, w * np.sinc(offsets), 0.0)


_KERNEL_FFT_CACHE: dict[int, np.ndarray] = {}


def _fractional_kernels_fft(nfft: int) -> np.ndarray:
    """rFFT of the tabulated fractional-delay kernels, [FRAC_BINS x nfft//2+1]."""
    cached = _KERNEL_FFT_CACHE.get(nfft)
    if cached is not None:
        return cached
    j = np.arange(-SINC_HALF, SINC_HALF + 1)
    fracs = (np.arange(FRAC_BINS) + 0.5) / FRAC_BINS
    kernels = _windowed_sinc(j[None, :] - fracs[:, None])  # [Q x taps]
    fft = np.fft.rfft(kernels, n=nfft, axis=1)
    _KERNEL_FFT_CACHE[nfft] = fft
    return fft


def _image_grid(room_dims: np.ndarray, source: np.ndarray, center: np.ndarray,
                max_dist: float) -> tuple[np.ndarray, np.ndarray]:
    """All image-source positions within max_dist of the array centre.

    Returns (positions [K x 3], reflection_counts [K]).
    """
    coords = []
    counts = []
    for i in range(3):
        li, si = room_dims[i], source[i]
        n_max = int(np.ceil((max_dist + li) / (2.0 * li))) + 1
        n = np.arange(-n_max, n_max + 1)
        c_even = si + 2.0 * n * li          # even reflection count 2|n|
        c_odd = -si + 2.0 * n * li          # odd reflection count |2n - 1|
        ci = np.concatenate([c_even, c_odd])
        ri = np.concatenate([2 * np.abs(n), np.abs(2 * n - 1)])
        keep = np.abs(ci - center[i]) <= max_dist + 1e-9
        coords.append(ci[keep])
        counts.append(ri[keep])

    cx, cy, cz = np.meshgrid(coords[0], coords[1], coords[2], indexing="ij")
    rx, ry, rz = np.meshgrid(counts[0], counts[1], counts[2], indexing="ij")
    pos = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)
    refl = (rx + ry + rz).ravel()
    d_center = np.linalg.norm(pos - center[None, :], axis=1)
    keep = d_center <= max_dist
    return pos[keep], refl[keep]


def image_source_rir(
    room_dims: np.ndarray,
    source: np.ndarray,
    mics: np.ndarray,
    rt60: float,
    fs: int = SAMPLE_RATE,
    c: float = SPEED_OF_SOUND,
    absorption: float | None = None,
    highpass: bool = True,
) -> np.ndarray:
    """Image-source RIRs for one source and M microphones, [M x L].

    Wall reflectivity is sqrt(1 - alpha) with a uniform Sabine alpha unless
    `absorption` overrides it; absorption >= 1 yields the direct path only.
    Image coverage extends to a propagation time of 1.25 * rt60 so the decay
    reaches roughly -75 dB. Each arrival is placed with an 81-tap windowed
    sinc; an 80 Hz high-pass removes the low-frequency build-up.
    """
    room_dims = np.asarray(room_dims, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    if np.any(source <= 0.0) or np.any(source >= room_dims):
        raise ValueError("source must lie strictly inside the room")
    if np.any(mics <= 0.0) or np.any(mics >= room_dims):
        raise ValueError("all microphones must lie strictly inside the room")

    anechoic = absorption is not None and absorption >= 1.0
    if absorption is None:
        alpha = sabine_absorption(room_dims, rt60)
    else:
        if not 0.0 < absorption:
            raise ValueError(f"absorption must be positive, got {absorption}")
        alpha = min(absorption, 1.0)
    beta = np.sqrt(1.0 - alpha) if not anechoic else 0.0

    if anechoic:
        d = np.linalg.norm(mics - source[None, :], axis=1)
        delays = d * fs / c
        length = int(np.ceil(delays.max())) + SINC_TAPS
        out = np.zeros((mics.shape[0], length))
        j = np.arange(-SINC_HALF, SINC_HALF + 1)
        for m in range(mics.shape[0]):
            k = int(np.floor(delays[m]))
            taps = _windowed_sinc(j + k - delays[m]) / (4.0 * np.pi * d[m])
            lo = max(0, k - SINC_HALF)
            out[m, lo : k + SINC_HALF + 1] = taps[lo - (k - SINC_HALF) :]
        return _highpass(out, fs) if highpass else out

    center = mics.mean(axis=0)
    max_dist = 1.25 * rt60 * c
    pos, refl = _image_grid(room_dims, source, center, max_dist + 0.5)
    gains_all = beta ** refl.astype(np.float64)

    k_max = int(np.ceil((max_dist + 0.5) * fs / c)) + 1
    length = k_max + SINC_TAPS
    nfft = next_fast_len(k_max + 2 * SINC_TAPS)
    kern_fft = _fractional_kernels_fft(nfft)

    out = np.zeros((mics.shape[0], length))
    train = np.zeros((FRAC_BINS, k_max + 1))
    for m in range(mics.shape[0]):
        d = np.linalg.norm(pos - mics[m][None, :], axis=1)
        keep = d <= max_dist
        d = np.maximum(d[keep], 1e-3)
        gains = gains_all[keep] / (4.0 * np.pi * d)
        delays = d * fs / c
        k = np.floor(delays).astype(np.int64)
        q = np.minimum((delays - k) * FRAC_BINS, FRAC_BINS - 1).astype(np.int64)
        train[:] = 0.0
        np.add.at(train, (q, k), gains)
        spectrum = np.sum(np.fft.rfft(train, n=nfft, axis=1) * kern_fft, axis=0)
        full = np.fft.irfft(spectrum, n=nfft)
        out[m] = full[SINC_HALF : SINC_HALF + length]
    return _highpass(out, fs) if highpass else out


def _highpass(rir: np.ndarray, fs: int, cutoff: float = 80.0) -> np.ndarray:
    sos = butter(2, cutoff, btype="highpass", fs=fs, output="sos")
    return sosfilt(sos, rir, axis=1)


@dataclass
class RirSet:
    """RIRs for both sources of a scene plus the direct-path delays in samples."""

    speech: np.ndarray            # [M x L1]
    noise: np.ndarray             # [M x L2]
    speech_direct: np.ndarray     # [M] float, d * fs / c
    noise_direct: np.ndarray      # [M]
    sample_rate: int = SAMPLE_RATE


def simulate_rir(scene: RoomScene, absorption: float | None = None,
                 highpass: bool = True) -> RirSet:
    """Render the speech and noise RIRs of a scene."""
    cfg = scene.config
    kwargs = dict(
        rt60=scene.rt60,
        fs=cfg.sample_rate,
        c=cfg.speed_of_sound,
        absorption=absorption,
        highpass=highpass,
    )
    speech = image_source_rir(scene.room_dims, scene.speech_pos, scene.mic_positions, **kwargs)
    noise = image_source_rir(scene.room_dims, scene.noise_pos, scene.mic_positions, **kwargs)
    factor = cfg.sample_rate / cfg.speed_of_sound
    return RirSet(
        speech=speech,
        noise=noise,
        speech_direct=np.linalg.norm(scene.mic_positions - scene.speech_pos[None, :], axis=1) * factor,
        noise_direct=np.linalg.norm(scene.mic_positions - scene.noise_pos[None, :], axis=1) * factor,
        sample_rate=cfg.sample_rate,
    )


def split_early_late(rir: np.ndarray, direct_delays: np.ndarray,
                     boundary_ms: float = 50.0,
                     fs: int = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Split each RIR into (early, late) parts that sum exactly to the input.

    Early keeps everything up to direct arrival + boundary_ms; the split is a
    complementary time mask per channel.
    """
    rir = np.atleast_2d(rir)
    direct_delays = np.atleast_1d(direct_delays)
    if direct_delays.shape[0] != rir.shape[0]:
        raise ValueError(
            f"got {direct_delays.shape[0]} direct delays for {rir.shape[0]} channels"
        )
    early = np.zeros_like(rir)
    late = rir.copy()
    width = int(round(boundary_ms / 1000.0 * fs))
    for m in range(rir.shape[0]):
        cut = min(int(np.floor(direct_delays[m])) + width, rir.shape[1])
        early[m, :cut] = rir[m, :cut]
        late[m, :cut] = 0.0
    return early, late


def schroeder_curve(rir_channel: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, normalized to 0 dB at the start."""
    energy = np.cumsum(rir_channel[::-1] ** 2)[::-1]
    if energy[0] <= 0.0:
        raise ValueError("RIR has no energy")
    return 10.0 * np.log10(np.maximum(energy / energy[0], 1e-30))


def measure_rt60(rir_channel: np.ndarray, fs: int = SAMPLE_RATE) -> float:
    """RT60 from a line fit to the Schroeder curve between -5 and -25 dB."""
    edc = schroeder_curve(rir_channel)
    idx = np.where((edc <= -5.0) & (edc >= -25.0))[0]
    if idx.size < 10:
        raise ValueError("decay range too short to fit")
    t = idx / fs
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise ValueError("energy decay is not decreasing")
    return float(-60.0 / slope)


def make_noise(kind: str, num_samples: int, seed: int) -> np.ndarray:
    """Synthetic mono noise: 'white', 'pink' or 'babble', unit RMS."""
    rng = np.random.default_rng([seed, 0x201E])
    if kind == "white":
        x = rng.standard_normal(num_samples)
    elif kind == "pink":
        x = _pink(rng, num_samples)
    elif kind == "babble":
        t = np.arange(num_samples) / SAMPLE_RATE
        x = np.zeros(num_samples)
        for _ in range(6):
            rate = rng.uniform(2.0, 6.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            env = 0.5 + 0.5 * np.sin(2.0 * np.pi * rate * t + phase)
            x += env * _pink(rng, num_samples)
    else:
        raise ValueError(f"unknown noise kind {kind!r} (expected white, pink or babble)")
    return x / np.sqrt(np.mean(x**2))


def _pink(rng: np.random.Generator, num_samples: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(num_samples))
    f = np.fft.rfftfreq(num_samples)
    f[0] = f[1]
    return np.fft.irfft(spec / np.sqrt(f), n=num_samples)


def make_utterance(num_samples: int, seed: int, fs: int = SAMPLE_RATE,
                   activity: float = 0.45) -> np.ndarray:
    """Synthetic speech-like mono signal for desk-scale corpora.

    Alternates voiced segments (harmonic stack on a drifting pitch) and
    unvoiced bursts (band-passed noise), separated by true silences so the
    signal has speech-like on/off sparsity. Unit RMS over the active part.
    """
    rng = np.random.default_rng([seed, 0x5BEEC])
    x = np.zeros(num_samples)
    t = 0
    edge = int(0.010 * fs)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(edge) / edge))
    while t < num_samples:
        seg = int(rng.uniform(0.08, 0.30) * fs)
        seg = min(seg, num_samples - t)
        if rng.random() < activity:
            if rng.random() < 0.7:  # voiced
                f0 = rng.uniform(90.0, 250.0)
                drift = np.cumsum(rng.standard_normal(seg)) * 0.3
                phase = 2.0 * np.pi * np.cumsum(f0 + drift) / fs
                seg_x = np.zeros(seg)
                for k in range(1, 24):
                    if k * f0 > 0.45 * fs:
                        break
                    seg_x += rng.uniform(0.4, 1.0) / k * np.sin(k * phase)
            else:  # unvoiced burst
                lo = rng.uniform(1500.0, 3000.0)
                hi = lo + rng.uniform(1000.0, 3000.0)
                spec = np.fft.rfft(rng.standard_normal(seg))
                f = np.fft.rfftfreq(seg, 1.0 / fs)
                spec[(f < lo) | (f > hi)] = 0.0
                seg_x = np.fft.irfft(spec, n=seg)
            seg_x *= rng.uniform(0.5, 1.0) / (np.std(seg_x) + 1e-12)
            n_edge = min(edge, seg // 2)
            seg_x[:n_edge] *= ramp[:n_edge]
            seg_x[seg - n_edge:] *= ramp[:n_edge][::-1]
            x[t : t + seg] = seg_x
        t += seg
    active = x[np.abs(x) > 0]
    if active.size == 0:  # extremely unlucky draw: fall back to one voiced chunk
        return make_utterance(num_samples, seed + 1, fs, min(1.0, activity + 0.2))
    return x / np.sqrt(np.mean(active**2))


@dataclass
class MixtureExample:
    """A rendered training/evaluation example."""

    mixture: Waveform            # [M x N] reverberant speech + scaled noise
    target_early: Waveform       # [M x N] early-reverberated speech
    noise_image: Waveform        # [M x N] scaled reverberant noise
    scene: RoomScene
    snr_db: float
    peak: float

    def validate(self) -> None:
        cfg = self.scene.config
        n = cfg.chunk_samples
        m = cfg.num_mics
        for name in ("mixture", "target_early", "noise_image"):
            wave = getattr(self, name)
            if wave.samples.shape != (m, n):
                raise ValueError(f"{name} must be [{m} x {n}], got {wave.samples.shape}")
        peak = float(np.max(np.abs(self.mixture.samples)))
        lo, hi = cfg.peak_range
        if not (lo - 1e-6 <= peak <= hi + 1e-6):
            raise ValueError(f"mixture peak {peak:.4f} outside [{lo}, {hi}]")
        e_s = float(np.sum(self.target_early.samples[0] ** 2))
        e_n = float(np.sum(self.noise_image.samples[0] ** 2))
        if e_n > 0.0:
            snr = 10.0 * np.log10(e_s / e_n)
            if abs(snr - self.snr_db) > 1e-6:
                raise ValueError(
                    f"reference-mic SNR {snr:.4f} dB does not match requested {self.snr_db}"
                )


def render_mixture(
    scene: RoomScene,
    speech: np.ndarray | Waveform,
    noise: np.ndarray | Waveform | None = None,
    rirs: RirSet | None = None,
    noise_kind: str = "pink",
) -> MixtureExample:
    """Render a 4 s example for a scene.

    Args:
        scene: sampled geometry/acoustics
        speech: mono utterance, at least one chunk long
        noise: mono noise; synthesized from `noise_kind` when omitted
        rirs: precomputed RIRs (simulated on demand otherwise)
    Return:
        MixtureExample whose mixture peak is drawn from the configured range
        and whose SNR (early speech vs noise at the reference mic) equals
        scene.snr_db.
    """
    cfg = scene.config
    n = cfg.chunk_samples

    def as_mono(x, label):
        if isinstance(x, Waveform):
            x = x.samples
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(-1) if x.ndim == 1 else x[0]
        if x.shape[0] < n:
            raise ValueError(f"{label} is shorter than one {cfg.duration} s chunk")
        return x[:n]

    speech = as_mono(speech, "speech")
    if np.max(np.abs(speech)) == 0.0:
        raise ValueError("speech chunk is silent")
    if noise is None:
        noise = make_noise(noise_kind, n, seed=scene.seed)
    noise = as_mono(noise, "noise")

    if rirs is None:
        rirs = simulate_rir(scene)
    early_rir, _ = split_early_late(rirs.speech, rirs.speech_direct, fs=cfg.sample_rate)

    speech_img = fftconvolve(speech[None, :], rirs.speech, axes=1)[:, :n]
    target_early = fftconvolve(speech[None, :], early_rir, axes=1)[:, :n]
    noise_img = fftconvolve(noise[None, :], rirs.noise, axes=1)[:, :n]

    e_s = float(np.sum(target_early[0] ** 2))
    e_n = float(np.sum(noise_img[0] ** 2))
    if e_s <= 0.0:
        raise ValueError("early speech image has no energy at the reference mic")
    g = np.sqrt(e_s / (e_n * 10.0 ** (scene.snr_db / 10.0))) if e_n > 0.0 else 0.0
    noise_img = g * noise_img

    mixture = speech_img + noise_img
    peak_rng = np.random.default_rng([scene.seed, 0x5CA1E])
    peak = float(peak_rng.uniform(*cfg.peak_range))
    scale = peak / float(np.max(np.abs(mixture)))

    example = MixtureExample(
        mixture=Waveform(mixture * scale),
        target_early=Waveform(target_early * scale),
        noise_image=Waveform(noise_img * scale),
        scene=scene,
        snr_db=scene.snr_db,
        peak=peak,
    )
    example.validate()
    return example


def split_counts(total: int, ratios: Sequence[float]) -> list[int]:
    """Apportion `total` items by largest remainder; counts sum exactly."""
    if total < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    raw = [total * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    for _ in range(total - sum(counts)):
        rema = [x - c for x, c in zip(raw, counts)]
        counts[int(np.argmax(rema))] += 1
    return counts


def build_manifest(
    utterances: Sequence[str | Path],
    config: SceneConfig | None = None,
    seed: int = 0,
    ratios: Sequence[float] = (0.9, 0.05, 0.05),
    test_snr_range_db: tuple[float, float] = (-5.0, 5.0),
) -> list[dict]:
    """Assign utterances to train/val/test rows with scene seeds and SNR draws.

    The row list is a pure function of (utterances, config, seed, ratios):
    rebuilding with the same inputs is byte-identical after serialization.
    """
    cfg = config or SceneConfig()
    paths = sorted(str(p) for p in utterances)
    if not paths:
        raise ValueError("no utterances to build a manifest from")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(paths))
    counts = split_counts(len(paths), ratios)
    labels = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]

    rows = []
    for row_idx, (utt_idx, split) in enumerate(zip(order, labels)):
        lo, hi = test_snr_range_db if split == "test" else cfg.snr_range_db
        rows.append({
            "id": f"ex{row_idx:05d}",
            "utterance": paths[utt_idx],
            "split": split,
            "scene_seed": int(rng.integers(0, 2**31 - 1)),
            "snr_db": float(np.round(rng.uniform(lo, hi), 4)),
        })
    return rows


def write_manifest(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
