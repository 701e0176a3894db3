"""WTFormer assembly: encoder/decoder blocks, mask head, full forward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio import Spectrogram, pack_ri
from .conformer import tf_conformer_forward
from .mca import mca_forward
from .ops import batchnorm, conv2d, conv2d_input_grad, dropout, lstm_forward, prelu
from .wavelet import wtconv_forward


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; the defaults land near the 0.98M parameter target."""

    num_mics: int = 8
    num_bins: int = 161
    encoder_kernels: tuple = ((6, 2), (7, 2), (7, 2))
    encoder_strides: tuple = ((2, 1), (2, 1), (2, 1))
    freq_pads: tuple = (2, 2, 3)
    channel_widths: tuple = (32, 64, 96)
    wt_levels: tuple = (2, 1, 1)
    wt_kernel: int = 5
    conformer_heads: int = 4
    conformer_conv_kernel: int = 31
    ffn_expansion: int = 4
    decoder_channels: int = 16
    lstm_hidden: int = 104
    dropout: float = 0.2
    mask_tanh_limit: float | None = None

    def __post_init__(self):
        stages = len(self.encoder_kernels)
        for name in ("encoder_strides", "freq_pads", "channel_widths", "wt_levels"):
            if len(getattr(self, name)) != stages:
                raise ValueError(
                    f"{name} must have {stages} entries to match encoder_kernels"
                )
        if any(w <= 0 for w in self.channel_widths) or self.decoder_channels <= 0:
            raise ValueError(f"channel widths must be positive: {self.channel_widths}")
        if self.conformer_dim % self.conformer_heads != 0:
            raise ValueError(
                f"conformer dim {self.conformer_dim} not divisible by "
                f"{self.conformer_heads} heads"
            )
        for _, kt in self.encoder_kernels:
            if kt < 1:
                raise ValueError(f"time kernel must be >= 1, got {kt}")

    @property
    def conformer_dim(self) -> int:
        return self.channel_widths[-1]

    @property
    def num_stages(self) -> int:
        return len(self.encoder_kernels)


def frequency_ladder(config: ModelConfig) -> list[int]:
    """Frequency extents [input, after stage 1, ...]; input is 2 * num_bins."""
    ladder = [2 * config.num_bins]
    f = ladder[0]
    for (kf, _), (sf, _), pad in zip(config.encoder_kernels,
                                     config.encoder_strides, config.freq_pads):
        f = (f + 2 * pad - kf) // sf + 1
        if f < 1:
            raise ValueError(f"frequency ladder collapsed: {ladder} then {f}")
        ladder.append(f)
    return ladder


def _stage_padding(config, stage):
    """(pad_freq, pad_time) for 1-based encoder stage; time is causal."""
    pad = config.freq_pads[stage - 1]
    _, kt = config.encoder_kernels[stage - 1]
    return (pad, pad), (kt - 1, 0)


def _post_conv(x, params, prefix, train, rng, rate):
    x = batchnorm(x, params[f"{prefix}.bn.scale"], params[f"{prefix}.bn.offset"],
                  params[f"{prefix}.bn.mean"], params[f"{prefix}.bn.var"],
                  train=train)
    x = dropout(x, rate, rng, train)
    return prelu(x, params[f"{prefix}.prelu.alpha"])


def wtblock_forward(x, params, config, stage, train=False, rng=None):
    """Encoder stage (1-based): strided conv, norm, dropout, PReLU, WTConv.

    Halves the frequency extent, preserves time via causal padding.
    """
    prefix = f"encoder.{stage}"
    pad_f, pad_t = _stage_padding(config, stage)
    y = conv2d(x, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"],
               stride=config.encoder_strides[stage - 1],
               pad_freq=pad_f, pad_time=pad_t)
    y = _post_conv(y, params, prefix, train, rng, config.dropout)
    return wtconv_forward(y, params, f"{prefix}.wtconv",
                          config.wt_levels[stage - 1])


def transwtblock_forward(x, params, config, stage, train=False, rng=None):
    """Decoder stage (1-based): transposed conv back up the frequency ladder,
    then the same norm / dropout / PReLU / WTConv tail.

    Decoder stage s mirrors encoder stage (num_stages + 1 - s); the
    transposed convolution is realized as the exact adjoint of that encoder
    convolution, aimed at the recorded ladder extent.
    """
    mirror = config.num_stages + 1 - stage
    prefix = f"decoder.{stage}"
    ladder = frequency_ladder(config)
    target_f = ladder[mirror - 1]
    pad_f, pad_t = _stage_padding(config, mirror)
    weight = params[f"{prefix}.conv.weight"]  # [C_in x C_out x kf x kt]
    y = conv2d_input_grad(x, weight, (target_f, x.shape[3]),
                          stride=config.encoder_strides[mirror - 1],
                          pad_freq=pad_f, pad_time=pad_t)
    y = y + params[f"{prefix}.conv.bias"].reshape(1, -1, 1, 1)
    y = _post_conv(y, params, prefix, train, rng, config.dropout)
    levels = tuple(reversed(config.wt_levels))[stage - 1]
    return wtconv_forward(y, params, f"{prefix}.wtconv", levels)


def mask_generator_forward(dec_out, params, config):
    """Complex mask from decoder features [B x C_d x 2F x T].

    One sequence per (batch, packed frequency bin) runs through a two-layer
    unidirectional LSTM shared across bins; the linear head consumes the
    hidden states of the two packed bins belonging to each true bin f
    (f carries the real half, f + F the imaginary half) and emits 2M values,
    assembled into a complex mask [B x M x F x T].
    """
    b, cd, packed, t = dec_out.shape
    f_bins = packed // 2
    if packed != 2 * config.num_bins:
        raise ValueError(
            f"mask head expected {2 * config.num_bins} packed bins, got {packed}"
        )
    seq = dec_out.transpose(0, 2, 3, 1).reshape(b * packed, t, cd)
    h = lstm_forward(seq, params["mask.lstm1.w_x"], params["mask.lstm1.w_h"],
                     params["mask.lstm1.bias"])
    h = lstm_forward(h, params["mask.lstm2.w_x"], params["mask.lstm2.w_h"],
                     params["mask.lstm2.bias"])
    hidden = h.shape[-1]
    h = h.reshape(b, packed, t, hidden)
    paired = np.concatenate([h[:, :f_bins], h[:, f_bins:]], axis=-1)
    out = paired @ params["mask.head.weight"].T + params["mask.head.bias"]
    m = config.num_mics
    raw = out[..., :m] + 1j * out[..., m:]  # [B x F x T x M]
    if config.mask_tanh_limit is not None:
        k = config.mask_tanh_limit
        raw = k * np.tanh(raw.real / k) + 1j * k * np.tanh(raw.imag / k)
    return raw.transpose(0, 3, 1, 2)


def apply_cirm(mask, noisy: Spectrogram) -> Spectrogram:
    """Per-channel, per-bin complex masking of the noisy spectrogram."""
    mask = np.asarray(mask)
    if mask.shape != noisy.bins.shape:
        raise ValueError(
            f"mask shape {mask.shape} does not match spectrogram {noisy.bins.shape}"
        )
    return Spectrogram(mask * noisy.bins, params=noisy.params,
                       num_samples=noisy.num_samples)


def _expect(stage, array, shape):
    if array.shape != shape:
        raise RuntimeError(f"{stage}: expected shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise RuntimeError(f"{stage}: non-finite values in output")


def model_forward(noisy: Spectrogram, params, config: ModelConfig | None = None,
                  train=False, rng=None):
    """Full enhancement forward pass.

    Args:
        noisy: Spectrogram [M x F x T] with M = config.num_mics,
            F = config.num_bins; any frame count.
        params: ParameterStore (or mapping) from init_params.
        train: enables dropout, drawing from rng (seeded default_rng(0)
            when omitted) so training-mode runs are reproducible.

    Returns:
        (enhanced Spectrogram [M x F x T], complex mask [M x F x T])
    """
    config = config or ModelConfig()
    if train and rng is None:
        rng = np.random.default_rng(0)
    m, f, t = noisy.bins.shape
    if m != config.num_mics or f != config.num_bins:
        raise ValueError(
            f"input stage: expected [{config.num_mics} x {config.num_bins} x T], "
            f"got {noisy.bins.shape}"
        )
    ladder = frequency_ladder(config)
    x = pack_ri(noisy)
    _expect("pack stage", x, (1, m, ladder[0], t))

    skips = []
    for s in range(1, config.num_stages + 1):
        x = wtblock_forward(x, params, config, s, train, rng)
        _expect(f"encoder stage {s}", x,
                (1, config.channel_widths[s - 1], ladder[s], t))
        skips.append(x)

    x = tf_conformer_forward(x, params, "conformer", config.conformer_heads,
                             config.dropout, rng, train)
    _expect("conformer stage", x,
            (1, config.conformer_dim, ladder[-1], t))

    for s in range(1, config.num_stages + 1):
        mirror = config.num_stages - s  # index of the matching encoder output
        gated = mca_forward(skips[mirror], params, f"mca.{mirror + 1}")
        if gated.shape != x.shape:
            raise RuntimeError(
                f"decoder stage {s}: skip shape {gated.shape} does not match "
                f"features {x.shape}"
            )
        x = np.concatenate([x, gated], axis=1)
        x = transwtblock_forward(x, params, config, s, train, rng)
        width = (config.channel_widths[mirror - 1] if mirror >= 1
                 else config.decoder_channels)
        _expect(f"decoder stage {s}", x, (1, width, ladder[mirror], t))

    mask = mask_generator_forward(x, params, config)
    _expect("mask head stage", mask.real, (1, m, f, t))
    enhanced = apply_cirm(mask[0], noisy)
    return enhanced, mask[0]
