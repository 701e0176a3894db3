"""Acceptance gate: ten end-to-end criteria, one pass/fail line each.

Each test prints a single `[criterion NN] name: PASS/FAIL` line (visible with
pytest -s) and asserts the same condition, so the -v listing carries the same
verdict per criterion.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.signal import correlate2d

from wtlab.audio import Waveform, stft, istft, write_wav
from wtlab.beamform import mb_mvdr, mvdr_weights, steering_vector
from wtlab.cli import main as cli_main
from wtlab.loss import LossWeights, l_ps, l_total
from wtlab.net import (
    GRADCHECK_BLOCKS,
    ModelConfig,
    grad_check,
    haar_dwt2,
    haar_idwt2,
    init_params,
    mask_generator_forward,
    model_forward,
    param_count,
    wtconv_forward,
)
from wtlab.net.wavelet import wtconv_param_names
from wtlab.scene import (
    SceneConfig,
    make_utterance,
    render_mixture,
    sample_scene,
    simulate_rir,
)
from wtlab.spatial import MIC_PAIRS, cue_deltas, music_spectrum, si_snr


def report(num, name, ok, detail=""):
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
    print(f"{line} {detail}".rstrip())


def anechoic_example(seed, snr_db=20.0):
    scene = sample_scene(seed, SceneConfig(snr_range_db=(snr_db, snr_db)))
    rirs = simulate_rir(scene, absorption=1.0)
    return scene, render_mixture(scene, make_utterance(70000, seed + 1234),
                                 rirs=rirs)


def desk_example(seed, snr_lo, snr_hi):
    """Reverberant scene with a speech-like sparse utterance."""
    cfg = SceneConfig(snr_range_db=(snr_lo, snr_hi))
    scene = sample_scene(seed, cfg)
    speech = make_utterance(70000, seed + 900, activity=0.35)
    return scene, render_mixture(scene, speech)


# ---------------------------------------------------------------- criterion 1

def test_criterion_01_stft_round_trip():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    shapes_ok = True
    for _ in range(100):
        x = rng.standard_normal((8, 64000))
        spec = stft(Waveform(x))
        shapes_ok = shapes_ok and spec.bins.shape == (8, 161, 401)
        rec = istft(spec, num_samples=64000).samples
        worst = max(worst, float(np.linalg.norm(rec - x) / np.linalg.norm(x)))
    elapsed = time.perf_counter() - start
    ok = shapes_ok and worst <= 1e-6 and elapsed < 10.0
    report(1, "stft round-trip", ok,
           f"(max_rel={worst:.2e}, {elapsed:.1f}s)")
    assert shapes_ok and worst <= 1e-6
    assert elapsed < 10.0


# ---------------------------------------------------------------- criterion 2

def _haar_matrices(n):
    h = np.zeros((n // 2, n))
    g = np.zeros((n // 2, n))
    for i in range(n // 2):
        h[i, 2 * i] = h[i, 2 * i + 1] = 1.0 / np.sqrt(2.0)
        g[i, 2 * i] = 1.0 / np.sqrt(2.0)
        g[i, 2 * i + 1] = -1.0 / np.sqrt(2.0)
    return h, g


def _ref_wtconv(x, params, prefix, levels):
    """Independent composition: explicit Haar matrices + scipy convolutions."""
    b, c = x.shape[:2]

    def dwt(img):
        hf, gf = _haar_matrices(img.shape[0])
        ht, gt = _haar_matrices(img.shape[1])
        return (hf @ img @ ht.T, hf @ img @ gt.T,
                gf @ img @ ht.T, gf @ img @ gt.T)

    def idwt(ll, lh, hl, hh, shape):
        hf, gf = _haar_matrices(shape[0])
        ht, gt = _haar_matrices(shape[1])
        return (hf.T @ ll @ ht + hf.T @ lh @ gt
                + gf.T @ hl @ ht + gf.T @ hh @ gt)

    def band_conv(band, name, lev, bi, ci):
        k = params[f"{prefix}.level{lev}.{name}.kernel"][ci]
        bias = params[f"{prefix}.level{lev}.{name}.bias"][ci]
        gain = params[f"{prefix}.level{lev}.{name}.gain"][ci]
        return (correlate2d(band, k, mode="same", boundary="fill") + bias) * gain

    def cascade(img, lev, bi, ci):
        ll, lh, hl, hh = dwt(img)
        if lev == levels - 1:
            inner = band_conv(ll, "ll", lev, bi, ci)
        else:
            inner = cascade(ll, lev + 1, bi, ci)
        return idwt(inner, band_conv(lh, "lh", lev, bi, ci),
                    band_conv(hl, "hl", lev, bi, ci),
                    band_conv(hh, "hh", lev, bi, ci), img.shape)

    out = np.zeros_like(x)
    for bi in range(b):
        for ci in range(c):
            direct = correlate2d(x[bi, ci], params[f"{prefix}.direct.kernel"][ci],
                                 mode="same", boundary="fill")
            out[bi, ci] = (direct + params[f"{prefix}.direct.bias"][ci]
                           + cascade(x[bi, ci], 0, bi, ci))
    return out


def test_criterion_02_haar_wtconv_machinery():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 16, 16))
    rec = haar_idwt2(*haar_dwt2(x), out_shape=x.shape)
    round_trip = float(np.max(np.abs(rec - x)))
    bands = haar_dwt2(x)
    energy_gap = abs(sum(float(np.sum(b ** 2)) for b in bands)
                     - float(np.sum(x ** 2))) / float(np.sum(x ** 2))

    params = {}
    for suffix in wtconv_param_names(2):
        name = f"w.{suffix}"
        if suffix.endswith(".kernel"):
            params[name] = 0.4 * rng.standard_normal((2, 5, 5))
        elif suffix.endswith(".bias"):
            params[name] = 0.2 * rng.standard_normal(2)
        else:
            params[name] = 1.0 + 0.3 * rng.standard_normal(2)
    tiny = rng.standard_normal((1, 2, 16, 16))
    oracle_gap = float(np.max(np.abs(wtconv_forward(tiny, params, "w", 2)
                                     - _ref_wtconv(tiny, params, "w", 2))))

    ok = round_trip <= 1e-9 and energy_gap <= 1e-9 and oracle_gap <= 1e-9
    report(2, "haar wtconv machinery", ok,
           f"(round={round_trip:.1e}, energy={energy_gap:.1e}, "
           f"oracle={oracle_gap:.1e})")
    assert round_trip <= 1e-9
    assert energy_gap <= 1e-9
    assert oracle_gap <= 1e-9


# ---------------------------------------------------------------- criterion 3

def test_criterion_03_gradient_suite():
    start = time.perf_counter()
    results = [grad_check(block, seed=0) for block in GRADCHECK_BLOCKS]
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed for r in results) and worst < 1e-4 and elapsed < 120.0
    report(3, "gradient suite", ok, f"(max_rel={worst:.2e}, {elapsed:.1f}s)")
    for r in results:
        assert r.passed, f"{r.block}: {r.max_rel_error:.3e} {r.failures[:2]}"
    assert worst < 1e-4
    assert elapsed < 120.0


# ---------------------------------------------------------------- criterion 4

def test_criterion_04_music_accuracy():
    hits = 0
    shape_ok = True
    for seed in range(50):
        scene, example = anechoic_example(seed)
        spec = music_spectrum(example.mixture)
        shape_ok = shape_ok and spec.power.shape == (300, 181)
        if abs(spec.peak_angle_deg() - scene.speech_doa_deg) <= 1.0:
            hits += 1
    ok = shape_ok and hits >= 48
    report(4, "music accuracy", ok, f"({hits}/50 within 1 degree)")
    assert shape_ok
    assert hits >= 48


# ---------------------------------------------------------------- criterion 5

def test_criterion_05_mvdr_distortionless_and_gain():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    freqs = np.arange(161) * 16000 / 320
    a = steering_vector(freqs, 57.0)
    base = rng.standard_normal((161, 8, 4)) + 1j * rng.standard_normal((161, 8, 4))
    cov = np.einsum("fmk,fnk->fmn", base, np.conj(base)) + \
        1e-3 * np.eye(8)[None, :, :]
    w = mvdr_weights(cov, a)
    distortion = float(np.max(np.abs(
        np.einsum("fm,fm->f", np.conj(w.weights), a) - 1.0)))

    gains = []
    for seed in range(50):
        scene, example = desk_example(seed, 0.0, 0.0)
        mix_spec = stft(example.mixture)
        tgt_spec = stft(example.target_early)
        result = mb_mvdr(mix_spec, tgt_spec)
        mono = istft(result.spec, num_samples=example.mixture.num_samples)
        ref = example.target_early.samples[0]
        gains.append(si_snr(mono.samples[0], ref)
                     - si_snr(example.mixture.samples[0], ref))
    mean_gain = float(np.mean(gains))
    elapsed = time.perf_counter() - start
    ok = distortion < 1e-8 and mean_gain >= 3.0 and elapsed < 300.0
    report(5, "mvdr distortionless + mb-mvdr gain", ok,
           f"(|wHa-1|={distortion:.1e}, gain={mean_gain:+.2f} dB, {elapsed:.0f}s)")
    assert distortion < 1e-8
    assert mean_gain >= 3.0
    assert elapsed < 300.0


# ---------------------------------------------------------------- criterion 6

def test_criterion_06_cue_metric_oracles():
    rng = np.random.default_rng(11)
    u = rng.standard_normal(64000)
    clean = Waveform(np.tile(u, (8, 1)))

    zero = cue_deltas(clean, clean)
    zeros_ok = (zero.delta_itd_us == 0.0 and zero.delta_ipd_rad == 0.0
                and zero.delta_ild_db == 0.0)

    scaled = clean.samples.copy()
    for i, _ in MIC_PAIRS:
        scaled[i] *= 2.0
    ild = cue_deltas(Waveform(scaled), clean).delta_ild_db

    delayed = clean.samples.copy()
    for _, j in MIC_PAIRS:
        delayed[j] = np.concatenate([np.zeros(2), u[:-2]])
    itd_2 = cue_deltas(Waveform(delayed), clean).delta_itd_us

    n = 65536
    f = np.arange(n // 2 + 1) / n
    shifted = np.fft.irfft(np.fft.rfft(u, n) * np.exp(-2j * np.pi * f * 0.5),
                           n)[:64000]
    half = clean.samples.copy()
    for _, j in MIC_PAIRS:
        half[j] = shifted
    itd_half = cue_deltas(Waveform(half), clean).delta_itd_us

    ok = (zeros_ok and abs(ild - 6.02) <= 0.01 and abs(itd_2 - 125.0) <= 2.0
          and abs(itd_half - 31.25) <= 5.0)
    report(6, "cue-metric oracles", ok,
           f"(ild={ild:.4f} dB, itd2={itd_2:.2f} us, itd0.5={itd_half:.2f} us)")
    assert zeros_ok
    assert abs(ild - 6.02) <= 0.01
    assert abs(itd_2 - 125.0) <= 2.0
    assert abs(itd_half - 31.25) <= 5.0


# ---------------------------------------------------------------- criterion 7

def test_criterion_07_directional_consistency():
    noisy_snrs, enhanced_snrs = [], []
    itds, ipds, ilds = [], [], []
    snrs = np.linspace(-5.0, 5.0, 10)  # balanced sweep, nominal mean 0 dB
    for seed, snr_db in zip(range(300, 310), snrs):
        scene = sample_scene(seed, SceneConfig(), snr_db=float(snr_db))
        example = render_mixture(scene,
                                 make_utterance(70000, seed + 900, activity=0.35))
        ref = example.target_early.samples[0]
        noisy_snrs.append(si_snr(example.mixture.samples[0], ref))
        cues = cue_deltas(example.mixture, example.target_early)
        itds.append(cues.delta_itd_us)
        ipds.append(cues.delta_ipd_rad)
        ilds.append(cues.delta_ild_db)
        result = mb_mvdr(stft(example.mixture), stft(example.target_early))
        mono = istft(result.spec, num_samples=example.mixture.num_samples)
        enhanced_snrs.append(si_snr(mono.samples[0], ref))

    noisy = float(np.mean(noisy_snrs))
    enhanced = float(np.mean(enhanced_snrs))
    cues_pos = min(np.mean(itds), np.mean(ipds), np.mean(ilds)) > 0.0
    ok = noisy < 0.0 and cues_pos and enhanced > noisy
    report(7, "directional consistency", ok,
           f"(noisy={noisy:+.2f} dB, mb-mvdr={enhanced:+.2f} dB, "
           f"itd={np.mean(itds):.1f} us)")
    assert noisy < 0.0
    assert cues_pos
    assert enhanced > noisy


# ---------------------------------------------------------------- criterion 8

def test_criterion_08_model_contract():
    config = ModelConfig()
    store = init_params(config, seed=0)
    rng = np.random.default_rng(8)
    noisy = stft(Waveform(0.1 * rng.standard_normal((8, 64000))))
    enhanced, mask = model_forward(noisy, store, config)
    shape_ok = (enhanced.bins.shape == (8, 161, 401)
                and mask.shape == (8, 161, 401))
    finite_ok = bool(np.all(np.isfinite(enhanced.bins.view(np.float64))))
    again, _ = model_forward(noisy, store, config)
    deterministic = bool(np.array_equal(enhanced.bins, again.bins))

    dec = rng.standard_normal((1, config.decoder_channels, 322, 24))
    base_mask = mask_generator_forward(dec, store, config)
    poked = dec.copy()
    poked[..., 11:] += rng.standard_normal(poked[..., 11:].shape)
    after = mask_generator_forward(poked, store, config)
    causal = bool(np.array_equal(base_mask[..., :11], after[..., :11]))

    total, breakdown = param_count(store)
    budget_ok = 750_000 <= total <= 1_250_000
    sums_ok = sum(breakdown.values()) == total

    ok = shape_ok and finite_ok and deterministic and causal and budget_ok and sums_ok
    report(8, "model contract", ok,
           f"(params={total:,}, causal={causal}, deterministic={deterministic})")
    assert shape_ok and finite_ok
    assert deterministic
    assert causal
    assert budget_ok and sums_ok


# ---------------------------------------------------------------- criterion 9

def test_criterion_09_loss_algebra():
    twelve = l_total(2.0, 4.0, LossWeights())
    literal = l_total(2.0, 4.0, LossWeights(sigma1=2.0, sigma2=3.0,
                                            literal_eq4=True))
    want_literal = (10.0 * 2.0 + 4.0) / (2.0 * 4.0) + np.log(2.0) + np.log(3.0)

    _, example = anechoic_example(901)
    x = example.mixture.samples
    lps_same = l_ps(x, x)
    lps_scaled = l_ps(0.7 * x, x)

    ok = (twelve == 12.0 and abs(literal - want_literal) < 1e-12
          and lps_same == 0.0 and lps_scaled <= 1e-6)
    report(9, "loss algebra", ok,
           f"(l_total=12? {twelve}, l_ps scaled={lps_scaled:.1e})")
    assert twelve == 12.0
    assert literal == pytest.approx(want_literal, abs=1e-12)
    assert lps_same == 0.0
    assert lps_scaled <= 1e-6


# --------------------------------------------------------------- criterion 10

def test_criterion_10_end_to_end_smoke(tmp_path):
    start = time.perf_counter()
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i in range(20):
        utt = make_utterance(70000, seed=4000 + i)
        write_wav(corpus / f"utt{i:03d}.wav", Waveform(utt[None, :]))

    dataset = tmp_path / "dataset"
    enhanced = tmp_path / "enhanced"
    metrics = tmp_path / "metrics.csv"
    music_csv = tmp_path / "music.csv"
    music_pgm = tmp_path / "music.pgm"

    assert cli_main(["simulate", "--corpus", str(corpus), "--out", str(dataset),
                     "--seed", "7", "--anechoic"]) == 0
    assert cli_main(["enhance", "--dataset", str(dataset), "--out", str(enhanced),
                     "--method", "mb-mvdr"]) == 0
    assert cli_main(["evaluate", "--dataset", str(dataset),
                     "--enhanced", str(enhanced), "--out", str(metrics)]) == 0

    rows = [json.loads(line) for line in
            (dataset / "manifest.jsonl").read_text().splitlines()]
    test_row = [r for r in rows if r["split"] == "test"][0]
    target = dataset / "test" / f"{test_row['id']}_target.wav"
    scene = json.loads((dataset / "test" /
                        f"{test_row['id']}_scene.json").read_text())
    assert cli_main(["music", "--wav", str(target), "--out", str(music_csv),
                     "--pgm", str(music_pgm)]) == 0
    elapsed = time.perf_counter() - start

    lines = metrics.read_text().strip().split("\n")
    csv_ok = (lines[0] == "id,si_snr_db,delta_itd_us,delta_ipd_rad,delta_ild_db"
              and len(lines) == 22 and lines[-1].startswith("mean,"))
    for line in lines[1:]:
        cells = line.split(",")
        csv_ok = csv_ok and len(cells) == 5
        float(cells[1])  # parses

    blob = music_pgm.read_bytes()
    pgm_ok = blob.startswith(b"P5\n181 300\n255\n")
    img = np.frombuffer(blob[len(b"P5\n181 300\n255\n"):],
                        dtype=np.uint8).reshape(300, 181)
    peak_col = int(np.argmax(img.mean(axis=0)))
    peak_ok = abs(peak_col - scene["speech_doa_deg"]) <= 1.0

    ok = csv_ok and pgm_ok and peak_ok and elapsed < 600.0
    report(10, "end-to-end smoke", ok,
           f"({elapsed:.0f}s, peak={peak_col} deg vs "
           f"{scene['speech_doa_deg']:.1f} deg)")
    assert csv_ok
    assert pgm_ok
    assert peak_ok
    assert elapsed < 600.0
