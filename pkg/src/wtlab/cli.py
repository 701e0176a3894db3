"""Batch operator surface: simulate datasets, run enhancers, score metrics,
compute MUSIC spectra, verify gradients, describe the model.

Exit codes: 0 success, 1 processing/check failure, 2 usage or I/O error.

Configuration comes from three layers with increasing precedence: built-in
defaults, one TOML file (--config, falling back to $WTLAB_CONFIG), then
command-line flags. Unknown TOML sections or keys are rejected up front.
--print-config dumps the merged configuration and exits without doing work.

CSV schemas (stable column order; one header row; one trailing mean row):
    evaluate: id, si_snr_db, delta_itd_us, delta_ipd_rad, delta_ild_db
    music:    band_hz, deg_0 .. deg_180 (one row per narrowband spectrum)
"""

from __future__ import annotations

import argparse
import csv
import functools
import io
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .audio import istft, read_wav, stft, write_wav
from .beamform import BeamformResult, mb_mvdr, ti_mvdr
from .net import (
    GRADCHECK_BLOCKS,
    ModelConfig,
    ParameterStore,
    grad_check,
    init_params,
    load_checkpoint,
    model_forward,
    param_count,
    save_checkpoint,
)
from .scene import (
    SceneConfig,
    build_manifest,
    load_manifest,
    render_mixture,
    sample_scene,
    simulate_rir,
    write_manifest,
)
from .spatial import cue_deltas, music_spectrum, save_pgm, si_snr

CONFIG_ENV_VAR = "WTLAB_CONFIG"
SPLITS = ("train", "val", "test")
METHODS = ("identity", "ti-mvdr", "mb-mvdr", "wtformer", "wtformer-random")

EVALUATE_COLUMNS = ("id", "si_snr_db", "delta_itd_us", "delta_ipd_rad",
                    "delta_ild_db")

_SCENE_DEFAULTS = {
    f.name: (list(d) if isinstance(d := getattr(SceneConfig(), f.name), tuple) else d)
    for f in dataclass_fields(SceneConfig)
}

DEFAULTS = {
    "simulate": {
        "seed": 0,
        "noise_kind": "pink",
        "workers": 1,
        "anechoic": False,
        "train_ratio": 0.9,
        "val_ratio": 0.05,
        "test_ratio": 0.05,
    },
    "enhance": {
        "method": "mb-mvdr",
        "split": "all",
        "workers": 1,
        "seed": 0,
        "dump_weights": False,
    },
    "evaluate": {"split": "all", "reference_channel": 0},
    "music": {"num_sources": 1},
    "gradcheck": {"seed": 0, "coords": 120},
    "describe": {"seed": 0},
    "scene": _SCENE_DEFAULTS,
}


class UsageError(Exception):
    """Bad invocation or missing input; maps to exit code 2."""


# ----------------------------------------------------------- config plumbing

def _load_toml(path_flag):
    """Read the TOML layer, honoring the env-var default, and validate keys."""
    path = path_flag or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} does not exist")
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"config file {path} is not valid TOML: {exc}")
    for section, values in data.items():
        if section not in DEFAULTS:
            raise UsageError(
                f"unknown config section [{section}] in {path} "
                f"(known: {', '.join(sorted(DEFAULTS))})"
            )
        if not isinstance(values, dict):
            raise UsageError(f"config section [{section}] must be a table")
        for key in values:
            if key not in DEFAULTS[section]:
                raise UsageError(
                    f"unknown key '{key}' in config section [{section}] of {path}"
                )
    return data


def _merge_section(section, toml_cfg, args):
    """defaults <- TOML <- explicitly provided flags."""
    merged = {k: (list(v) if isinstance(v, list) else v)
              for k, v in DEFAULTS[section].items()}
    merged.update(toml_cfg.get(section, {}))
    for key in DEFAULTS[section]:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _toml_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    return repr(float(value)) if isinstance(value, float) else repr(value)


def _print_config(sections):
    out = []
    for name, values in sections.items():
        out.append(f"[{name}]")
        for key in sorted(values):
            out.append(f"{key} = {_toml_scalar(values[key])}")
        out.append("")
    sys.stdout.write("\n".join(out))


def _scene_config(section) -> SceneConfig:
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    return SceneConfig(**kwargs)


# ------------------------------------------------------------- file plumbing

def _atomic_write(path, writer):
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _atomic_wav(path, wave):
    _atomic_write(path, lambda tmp: write_wav(tmp, wave))


def _atomic_json(path, payload):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    _atomic_write(path, lambda tmp: tmp.write_text(text))


def _atomic_text(path, text):
    _atomic_write(path, lambda tmp: tmp.write_text(text))


def _run_jobs(fn, jobs, workers):
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def _format_cell(value):
    if isinstance(value, str):
        return value
    v = float(value)
    return "nan" if np.isnan(v) else f"{v:.6f}"


def _write_csv(path, header, rows):
    """Rows of numbers (label first); appends a nan-aware trailing mean row."""
    data = np.array([[float(c) for c in row[1:]] for row in rows], dtype=float)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(c) for c in row])
    if len(rows):
        with warnings.catch_warnings():
            # all-nan columns (cue metrics on mono outputs) mean to nan
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(data, axis=0)
    else:
        means = np.full(len(header) - 1, np.nan)
    writer.writerow(["mean"] + [_format_cell(m) for m in means])
    _atomic_text(path, buf.getvalue())


# ------------------------------------------------------------------ simulate

def _simulate_job(row, scene_section, out_dir, anechoic, noise_kind):
    try:
        cfg = _scene_config(scene_section)
        scene = sample_scene(row["scene_seed"], cfg, snr_db=row["snr_db"])
        speech = read_wav(row["utterance"])
        rirs = simulate_rir(scene, absorption=1.0 if anechoic else None)
        example = render_mixture(scene, speech, rirs=rirs, noise_kind=noise_kind)
        base = Path(out_dir) / row["split"]
        _atomic_wav(base / f"{row['id']}_mix.wav", example.mixture)
        _atomic_wav(base / f"{row['id']}_target.wav", example.target_early)
        info = scene.to_dict()
        info.update(id=row["id"], utterance=row["utterance"],
                    split=row["split"], anechoic=bool(anechoic))
        _atomic_json(base / f"{row['id']}_scene.json", info)
        return row["id"], None
    except Exception as exc:
        return row["id"], f"{type(exc).__name__}: {exc}"


def cmd_simulate(args, toml_cfg):
    cfg = _merge_section("simulate", toml_cfg, args)
    scene_section = _merge_section("scene", toml_cfg, args)
    if args.print_config:
        _print_config({"simulate": cfg, "scene": scene_section})
        return 0
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise UsageError(f"corpus path {corpus} does not exist")
    utterances = sorted(corpus.glob("*.wav"))
    if not utterances:
        raise UsageError(f"corpus path {corpus} contains no .wav files")

    ratios = (cfg["train_ratio"], cfg["val_ratio"], cfg["test_ratio"])
    scene_cfg = _scene_config(scene_section)
    rows = build_manifest(utterances, scene_cfg, seed=cfg["seed"], ratios=ratios)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [(row, scene_section, str(out_dir), cfg["anechoic"], cfg["noise_kind"])
            for row in rows]
    results = _run_jobs(_simulate_job, jobs, cfg["workers"])
    failures = [(rid, msg) for rid, msg in results if msg is not None]

    manifest_path = out_dir / "manifest.jsonl"
    _atomic_write(manifest_path, lambda tmp: write_manifest(tmp, rows))

    counts = {split: sum(1 for r in rows if r["split"] == split) for split in SPLITS}
    print(f"simulated {len(rows)} examples -> {out_dir}")
    print("  " + "  ".join(f"{split}: {counts[split]}" for split in SPLITS))
    for rid, msg in failures:
        print(f"FAILED {rid}: {msg}", file=sys.stderr)
    return 1 if failures else 0


# ------------------------------------------------------------------- enhance

@functools.lru_cache(maxsize=2)
def _model_params(checkpoint, seed):
    if checkpoint is not None:
        return load_checkpoint(checkpoint), ModelConfig()
    return init_params(seed=seed), ModelConfig()


def _dump_weights(path, result: BeamformResult):
    store = ParameterStore(seed=0)
    store.add_param("mvdr.weights_re", result.weights.weights.real)
    store.add_param("mvdr.weights_im", result.weights.weights.imag)
    store.add_param("mvdr.steering_re", result.steering.real)
    store.add_param("mvdr.steering_im", result.steering.imag)
    _atomic_write(path, lambda tmp: save_checkpoint(store, tmp))


def _enhance_job(row, dataset, out_dir, method, checkpoint, seed, dump_weights):
    try:
        split_dir = Path(dataset) / row["split"]
        mix = read_wav(split_dir / f"{row['id']}_mix.wav")
        meta = {"id": row["id"], "method": method}
        if method == "identity":
            wave = mix
        elif method in ("ti-mvdr", "mb-mvdr"):
            target = read_wav(split_dir / f"{row['id']}_target.wav")
            run = ti_mvdr if method == "ti-mvdr" else mb_mvdr
            result = run(stft(mix), stft(target))
            wave = istft(result.spec, num_samples=mix.num_samples)
            if dump_weights:
                _dump_weights(Path(out_dir) / row["split"] /
                              f"{row['id']}_weights.ckpt", result)
        else:  # wtformer / wtformer-random
            params, model_cfg = _model_params(checkpoint, seed)
            enhanced, _ = model_forward(stft(mix), params, model_cfg)
            wave = istft(enhanced, num_samples=mix.num_samples)
            meta.update({"checkpoint": checkpoint} if checkpoint is not None
                        else {"seed": seed})
        base = Path(out_dir) / row["split"]
        _atomic_wav(base / f"{row['id']}_enhanced.wav", wave)
        meta["channels"] = wave.num_channels
        _atomic_json(base / f"{row['id']}_enhanced.json", meta)
        return row["id"], None
    except Exception as exc:
        return row["id"], f"{type(exc).__name__}: {exc}"


def _select_rows(dataset, split):
    manifest_path = Path(dataset) / "manifest.jsonl"
    if not manifest_path.is_file():
        raise UsageError(f"dataset manifest {manifest_path} does not exist")
    rows = load_manifest(manifest_path)
    if split != "all":
        rows = [r for r in rows if r["split"] == split]
    if not rows:
        raise UsageError(f"no '{split}' examples in {manifest_path}")
    return sorted(rows, key=lambda r: r["id"])


def cmd_enhance(args, toml_cfg):
    cfg = _merge_section("enhance", toml_cfg, args)
    if args.print_config:
        _print_config({"enhance": cfg})
        return 0
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r} (choose from "
                         f"{', '.join(METHODS)})")
    checkpoint = args.checkpoint
    if cfg["method"] == "wtformer" and checkpoint is None and not args.random_init:
        raise UsageError("method wtformer needs --checkpoint or --random-init")
    if cfg["method"] == "wtformer-random" or (cfg["method"] == "wtformer"
                                              and args.random_init):
        checkpoint = None
    rows = _select_rows(args.dataset, cfg["split"])
    jobs = [(row, args.dataset, args.out, cfg["method"], checkpoint,
             cfg["seed"], cfg["dump_weights"]) for row in rows]
    results = _run_jobs(_enhance_job, jobs, cfg["workers"])
    failures = [(rid, msg) for rid, msg in results if msg is not None]
    print(f"enhanced {len(rows) - len(failures)}/{len(rows)} examples "
          f"with {cfg['method']} -> {args.out}")
    for rid, msg in failures:
        print(f"FAILED {rid}: {msg}", file=sys.stderr)
    return 1 if failures else 0


# ------------------------------------------------------------------ evaluate

def cmd_evaluate(args, toml_cfg):
    cfg = _merge_section("evaluate", toml_cfg, args)
    if args.print_config:
        _print_config({"evaluate": cfg})
        return 0
    rows = _select_rows(args.dataset, cfg["split"])
    ref = int(cfg["reference_channel"])

    records, unpaired = [], []
    for row in rows:
        target_path = Path(args.dataset) / row["split"] / f"{row['id']}_target.wav"
        enhanced_path = Path(args.enhanced) / row["split"] / f"{row['id']}_enhanced.wav"
        missing = [p for p in (target_path, enhanced_path) if not p.is_file()]
        if missing:
            unpaired.extend(str(p) for p in missing)
            continue
        target = read_wav(target_path)
        est = read_wav(enhanced_path)
        if est.num_channels == target.num_channels:
            snr = float(np.mean([si_snr(est.samples[m], target.samples[m])
                                 for m in range(target.num_channels)]))
            cues = cue_deltas(est, target)
            records.append((row["id"], snr, cues.delta_itd_us,
                            cues.delta_ipd_rad, cues.delta_ild_db))
        else:
            # single-channel output: cue deltas need matched channel pairs
            snr = si_snr(est.samples[0], target.samples[ref])
            records.append((row["id"], snr, np.nan, np.nan, np.nan))

    _write_csv(args.out, EVALUATE_COLUMNS, records)
    print(f"evaluated {len(records)}/{len(rows)} examples -> {args.out}")
    for path in unpaired:
        print(f"UNPAIRED {path}", file=sys.stderr)
    return 1 if unpaired else 0


# --------------------------------------------------------------------- music

def cmd_music(args, toml_cfg):
    cfg = _merge_section("music", toml_cfg, args)
    if args.print_config:
        _print_config({"music": cfg})
        return 0
    wav_path = Path(args.wav)
    if not wav_path.is_file():
        raise UsageError(f"input {wav_path} does not exist")
    spectrum = music_spectrum(read_wav(wav_path), num_sources=cfg["num_sources"])

    header = ["band_hz"] + [f"deg_{int(a)}" for a in spectrum.angles_deg]
    rows = [(f"{freq:.4f}",) + tuple(band)
            for freq, band in zip(spectrum.band_freqs_hz, spectrum.power)]
    _write_csv(args.out, header, rows)
    if args.pgm:
        _atomic_write(args.pgm, lambda tmp: save_pgm(tmp, spectrum))
    print(f"music spectrum {spectrum.power.shape[0]}x{spectrum.power.shape[1]} "
          f"-> {args.out}")
    print(f"peak_angle_deg={spectrum.peak_angle_deg():.1f}")
    return 0


# ----------------------------------------------------------------- gradcheck

def cmd_gradcheck(args, toml_cfg):
    cfg = _merge_section("gradcheck", toml_cfg, args)
    if args.print_config:
        _print_config({"gradcheck": cfg})
        return 0
    blocks = args.blocks or list(GRADCHECK_BLOCKS)
    ok = True
    for block in blocks:
        result = grad_check(block, seed=cfg["seed"], num_coords=cfg["coords"])
        status = "PASS" if result.passed else "FAIL"
        ok = ok and result.passed
        print(f"{block}: {status} max_rel_error={result.max_rel_error:.3e} "
              f"coords={result.num_coords} elapsed={result.elapsed_s:.2f}s")
    return 0 if ok else 1


# ------------------------------------------------------------------ describe

def cmd_describe(args, toml_cfg):
    cfg = _merge_section("describe", toml_cfg, args)
    if args.print_config:
        _print_config({"describe": cfg})
        return 0
    if args.checkpoint is not None:
        store = load_checkpoint(args.checkpoint)
        source = args.checkpoint
    else:
        store = init_params(seed=cfg["seed"])
        source = f"random init (seed {cfg['seed']})"
    total, breakdown = param_count(store)
    width = max(len(name) for name in breakdown)
    print(f"parameters from {source}")
    for name in sorted(breakdown):
        print(f"  {name:<{width}}  {breakdown[name]:>10,}")
    print(f"  {'total':<{width}}  {total:>10,}  ({total / 1e6:.3f} M)")
    print(f"  buffers: {len(store.buffer_names)}  seed: {store.seed}")
    return 0


# ---------------------------------------------------------------------- main

def _add_common(parser):
    parser.add_argument("--config", default=None,
                        help=f"TOML config file (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("--print-config", action="store_true",
                        help="print the merged config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wtlab",
        description="Desk-scale MIMO speech-enhancement laboratory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a seeded mixture dataset")
    p.add_argument("--corpus", required=True, help="directory of mono 16 kHz WAVs")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise-kind", dest="noise_kind", default=None,
                   choices=("white", "pink", "babble"))
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--anechoic", action="store_const", const=True, default=None,
                   help="reflection-free rooms (direct path only)")
    _add_common(p)
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("enhance", help="run an enhancement method over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default=None, choices=METHODS)
    p.add_argument("--split", default=None, choices=SPLITS + ("all",))
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="init seed for wtformer-random")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--random-init", action="store_true")
    p.add_argument("--dump-weights", dest="dump_weights", action="store_const",
                   const=True, default=None,
                   help="save beamformer weights next to each output")
    _add_common(p)
    p.set_defaults(run=cmd_enhance)

    p = sub.add_parser("evaluate", help="score enhanced files against targets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--enhanced", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--split", default=None, choices=SPLITS + ("all",))
    p.add_argument("--reference-channel", dest="reference_channel", type=int,
                   default=None)
    _add_common(p)
    p.set_defaults(run=cmd_evaluate)

    p = sub.add_parser("music", help="narrowband MUSIC spectra for one WAV")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True, help="matrix CSV path")
    p.add_argument("--pgm", default=None, help="optional heatmap PGM path")
    p.add_argument("--num-sources", dest="num_sources", type=int, default=None)
    _add_common(p)
    p.set_defaults(run=cmd_music)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--blocks", nargs="*", choices=GRADCHECK_BLOCKS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--coords", type=int, default=None)
    _add_common(p)
    p.set_defaults(run=cmd_gradcheck)

    p = sub.add_parser("describe", help="per-module parameter table")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_common(p)
    p.set_defaults(run=cmd_describe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        toml_cfg = _load_toml(args.config)
        return args.run(args, toml_cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
