"""Parameter store, seeded initialization, counting and checkpoint I/O.

Checkpoint layout: magic b"WTL1", a little-endian uint32 JSON length, a JSON
index {seed, entries: [{name, shape, offset, kind}]}, then the concatenated
float32 tensor data in index order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .conformer import conformer_param_names
from .mca import MCA_BRANCHES, eca_kernel_size
from .model import ModelConfig, frequency_ladder
from .wavelet import wtconv_param_names

CHECKPOINT_MAGIC = b"WTL1"


class ParameterStore:
    """Named tensors split into learnable parameters and running buffers."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, np.ndarray] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add_param(self, name, value):
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate tensor name {name!r}")
        self._params[name] = np.asarray(value, dtype=np.float64)

    def add_buffer(self, name, value):
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate tensor name {name!r}")
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def __getitem__(self, name) -> np.ndarray:
        if name in self._params:
            return self._params[name]
        if name in self._buffers:
            return self._buffers[name]
        raise KeyError(f"no tensor named {name!r} in store")

    def __contains__(self, name) -> bool:
        return name in self._params or name in self._buffers

    @property
    def param_names(self):
        return list(self._params)

    @property
    def buffer_names(self):
        return list(self._buffers)

    def param_items(self):
        return list(self._params.items())


def _kaiming(rng, shape, fan_in):
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def _add_norm_act(store, rng, prefix, channels):
    store.add_param(f"{prefix}.bn.scale", np.ones(channels))
    store.add_param(f"{prefix}.bn.offset", np.zeros(channels))
    store.add_buffer(f"{prefix}.bn.mean", np.zeros(channels))
    store.add_buffer(f"{prefix}.bn.var", np.ones(channels))
    store.add_param(f"{prefix}.prelu.alpha", np.full(channels, 0.25))


def add_wtconv_params(store, rng, prefix, channels, levels, kernel=5):
    for suffix in wtconv_param_names(levels):
        name = f"{prefix}.{suffix}"
        if suffix.endswith(".kernel"):
            store.add_param(name, _kaiming(rng, (channels, kernel, kernel),
                                           kernel * kernel))
        elif suffix.endswith(".bias"):
            store.add_param(name, np.zeros(channels))
        else:  # .gain
            store.add_param(name, np.ones(channels))


def add_mca_params(store, rng, prefix, dims):
    """dims maps branch name -> extent of its axis."""
    for name, _, _ in MCA_BRANCHES:
        k = eca_kernel_size(dims[name])
        store.add_param(f"{prefix}.{name}.weight", _kaiming(rng, (2, k), 2 * k))
        store.add_param(f"{prefix}.{name}.bias", np.zeros(()))


def add_conformer_params(store, rng, prefix, dim, expansion, conv_kernel):
    shapes = {
        "ln.scale": ((dim,), None), "ln.offset": ((dim,), None),
        "w1": ((expansion * dim, dim), dim), "b1": ((expansion * dim,), None),
        "w2": ((dim, expansion * dim), expansion * dim), "b2": ((dim,), None),
        "wq": ((dim, dim), dim), "bq": ((dim,), None),
        "wk": ((dim, dim), dim), "bk": ((dim,), None),
        "wv": ((dim, dim), dim), "bv": ((dim,), None),
        "wo": ((dim, dim), dim), "bo": ((dim,), None),
        "pw1.weight": ((2 * dim, dim), dim), "pw1.bias": ((2 * dim,), None),
        "dw.kernel": ((dim, conv_kernel), conv_kernel), "dw.bias": ((dim,), None),
        "pw2.weight": ((dim, dim), dim), "pw2.bias": ((dim,), None),
    }
    for name in conformer_param_names(prefix):
        suffix = name[len(prefix) + 1 :]
        key = suffix.split(".", 1)[1]  # drop the part label (ffn1, mhsa, ...)
        shape, fan_in = shapes[key]
        if fan_in is None:
            init = np.ones(shape) if key.endswith("scale") else np.zeros(shape)
        else:
            init = _kaiming(rng, shape, fan_in)
        store.add_param(name, init)


def init_params(config: ModelConfig | None = None, seed: int = 0,
                nominal_frames: int = 401) -> ParameterStore:
    """Seeded initialization of every model parameter plus the loss sigmas.

    nominal_frames fixes the time-branch interaction width of the MCA
    blocks (the learned kernel size derives from the axis extent).
    """
    config = config or ModelConfig()
    ladder = frequency_ladder(config)
    # encoder/decoder symmetry must hold before any parameter is created
    for stage in range(config.num_stages):
        kf = config.encoder_kernels[stage][0]
        sf = config.encoder_strides[stage][0]
        pad = config.freq_pads[stage]
        if (ladder[stage] + 2 * pad - kf) // sf + 1 != ladder[stage + 1]:
            raise ValueError(
                f"stage {stage + 1} padding {pad} cannot reach ladder extent "
                f"{ladder[stage + 1]} from {ladder[stage]}"
            )
    rng = np.random.default_rng(seed)
    store = ParameterStore(seed)
    widths = config.channel_widths

    for s in range(1, config.num_stages + 1):
        c_in = config.num_mics if s == 1 else widths[s - 2]
        c_out = widths[s - 1]
        kf, kt = config.encoder_kernels[s - 1]
        store.add_param(f"encoder.{s}.conv.weight",
                        _kaiming(rng, (c_out, c_in, kf, kt), c_in * kf * kt))
        store.add_param(f"encoder.{s}.conv.bias", np.zeros(c_out))
        _add_norm_act(store, rng, f"encoder.{s}", c_out)
        add_wtconv_params(store, rng, f"encoder.{s}.wtconv", c_out,
                          config.wt_levels[s - 1], config.wt_kernel)

    for s in range(1, config.num_stages + 1):
        add_mca_params(store, rng, f"mca.{s}", {
            "channel": widths[s - 1],
            "freq": ladder[s],
            "time": nominal_frames,
        })

    for pass_name in ("time", "freq"):
        add_conformer_params(store, rng, f"conformer.{pass_name}",
                             config.conformer_dim, config.ffn_expansion,
                             config.conformer_conv_kernel)
    store.add_param("conformer.gate", np.array(1.0))

    dec_levels = tuple(reversed(config.wt_levels))
    for s in range(1, config.num_stages + 1):
        mirror = config.num_stages + 1 - s
        c_in = 2 * widths[mirror - 1]
        c_out = widths[mirror - 2] if mirror >= 2 else config.decoder_channels
        kf, kt = config.encoder_kernels[mirror - 1]
        store.add_param(f"decoder.{s}.conv.weight",
                        _kaiming(rng, (c_in, c_out, kf, kt), c_in * kf * kt))
        store.add_param(f"decoder.{s}.conv.bias", np.zeros(c_out))
        _add_norm_act(store, rng, f"decoder.{s}", c_out)
        add_wtconv_params(store, rng, f"decoder.{s}.wtconv", c_out,
                          dec_levels[s - 1], config.wt_kernel)

    hidden = config.lstm_hidden
    cd = config.decoder_channels
    store.add_param("mask.lstm1.w_x", _kaiming(rng, (4 * hidden, cd), cd))
    store.add_param("mask.lstm1.w_h", _kaiming(rng, (4 * hidden, hidden), hidden))
    store.add_param("mask.lstm1.bias", np.zeros(4 * hidden))
    store.add_param("mask.lstm2.w_x", _kaiming(rng, (4 * hidden, hidden), hidden))
    store.add_param("mask.lstm2.w_h", _kaiming(rng, (4 * hidden, hidden), hidden))
    store.add_param("mask.lstm2.bias", np.zeros(4 * hidden))
    store.add_param("mask.head.weight",
                    _kaiming(rng, (2 * config.num_mics, 2 * hidden), 2 * hidden))
    store.add_param("mask.head.bias", np.zeros(2 * config.num_mics))

    store.add_param("loss.log_sigma1", np.zeros(()))
    store.add_param("loss.log_sigma2", np.zeros(()))
    return store


def param_count(store: ParameterStore):
    """Exact learnable-parameter count with a per-module breakdown.

    Returns (total, breakdown) where breakdown maps the leading dotted
    component to its count; the breakdown sums to the total exactly.
    """
    breakdown: dict[str, int] = {}
    for name, value in store.param_items():
        module = name.split(".", 1)[0]
        breakdown[module] = breakdown.get(module, 0) + value.size
    return sum(breakdown.values()), breakdown


def save_checkpoint(store: ParameterStore, path):
    entries = []
    blobs = []
    offset = 0
    for kind, items in (("param", store._params), ("buffer", store._buffers)):
        for name, value in items.items():
            blob = np.ascontiguousarray(value, dtype="<f4").tobytes()
            entries.append({"name": name, "shape": list(value.shape),
                            "offset": offset, "kind": kind})
            blobs.append(blob)
            offset += len(blob)
    index = json.dumps({"seed": store.seed, "entries": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(index)))
        fh.write(index)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> ParameterStore:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    (index_len,) = struct.unpack("<I", raw[4:8])
    index = json.loads(raw[8 : 8 + index_len].decode())
    data = raw[8 + index_len :]
    store = ParameterStore(index.get("seed", 0))
    for entry in index["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise ValueError(
                f"{path}: tensor {entry['name']!r} overruns the data section"
            )
        value = np.frombuffer(data[start:end], dtype="<f4").reshape(shape)
        value = value.astype(np.float64)
        if entry["kind"] == "buffer":
            store.add_buffer(entry["name"], value)
        else:
            store.add_param(entry["name"], value)
    return store
