"""Operator-surface behavior: subcommands, config layering, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from wtlab.audio import Waveform, read_wav, write_wav
from wtlab.cli import main
from wtlab.net import load_checkpoint
from wtlab.scene import load_manifest, make_utterance


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    for i in range(20):
        utt = make_utterance(70000, seed=2000 + i)
        write_wav(root / f"utt{i:03d}.wav", Waveform(utt[None, :]))
    return root


@pytest.fixture(scope="module")
def dataset(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    rc = main(["simulate", "--corpus", str(corpus), "--out", str(out),
               "--seed", "7", "--anechoic"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def identity_out(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("identity")
    rc = main(["enhance", "--dataset", str(dataset), "--out", str(out),
               "--method", "identity"])
    assert rc == 0
    return out


def manifest_rows(dataset):
    return load_manifest(Path(dataset) / "manifest.jsonl")


# ------------------------------------------------------------------ simulate

def test_simulate_layout_and_split(dataset, capsys):
    rows = manifest_rows(dataset)
    counts = {s: sum(1 for r in rows if r["split"] == s)
              for s in ("train", "val", "test")}
    assert counts == {"train": 18, "val": 1, "test": 1}
    wavs = list(Path(dataset).glob("*/*.wav"))
    assert len(wavs) == 40  # one mix + one target per utterance
    row = rows[0]
    base = Path(dataset) / row["split"]
    scene = json.loads((base / f"{row['id']}_scene.json").read_text())
    assert 0.0 <= scene["speech_doa_deg"] <= 180.0
    assert scene["anechoic"] is True
    mix = read_wav(base / f"{row['id']}_mix.wav")
    assert mix.samples.shape == (8, 64000)


def test_simulate_is_deterministic(corpus, dataset, tmp_path):
    rc = main(["simulate", "--corpus", str(corpus), "--out", str(tmp_path),
               "--seed", "7", "--anechoic"])
    assert rc == 0
    first = (Path(dataset) / "manifest.jsonl").read_bytes()
    assert (tmp_path / "manifest.jsonl").read_bytes() == first
    row = manifest_rows(dataset)[3]
    name = f"{row['split']}/{row['id']}_mix.wav"
    assert (tmp_path / name).read_bytes() == (Path(dataset) / name).read_bytes()


def test_simulate_missing_corpus_is_usage_error(tmp_path, capsys):
    rc = main(["simulate", "--corpus", str(tmp_path / "nope"),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert str(tmp_path / "nope") in capsys.readouterr().err


def test_simulate_empty_corpus_is_usage_error(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    rc = main(["simulate", "--corpus", str(tmp_path / "empty"),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "no .wav files" in capsys.readouterr().err


# ------------------------------------------------------------------- enhance

def test_enhance_identity_bit_exact(dataset, identity_out):
    for row in manifest_rows(dataset)[:5]:
        mix = Path(dataset) / row["split"] / f"{row['id']}_mix.wav"
        enh = Path(identity_out) / row["split"] / f"{row['id']}_enhanced.wav"
        assert enh.read_bytes() == mix.read_bytes()
        meta = json.loads(enh.with_suffix(".json").read_text())
        assert meta["method"] == "identity"
        assert meta["channels"] == 8


def test_enhance_mb_mvdr_mono_output_with_weights(dataset, tmp_path):
    rc = main(["enhance", "--dataset", str(dataset), "--out", str(tmp_path),
               "--method", "mb-mvdr", "--split", "test", "--dump-weights"])
    assert rc == 0
    row = [r for r in manifest_rows(dataset) if r["split"] == "test"][0]
    enh = read_wav(tmp_path / "test" / f"{row['id']}_enhanced.wav")
    assert enh.samples.shape == (1, 64000)
    store = load_checkpoint(tmp_path / "test" / f"{row['id']}_weights.ckpt")
    assert store["mvdr.weights_re"].shape == (161, 8)
    assert store["mvdr.steering_im"].shape == (161, 8)


def test_enhance_wtformer_random_is_finite_mimo(dataset, tmp_path):
    rc = main(["enhance", "--dataset", str(dataset), "--out", str(tmp_path),
               "--method", "wtformer-random", "--split", "test", "--seed", "5"])
    assert rc == 0
    row = [r for r in manifest_rows(dataset) if r["split"] == "test"][0]
    enh = read_wav(tmp_path / "test" / f"{row['id']}_enhanced.wav")
    assert enh.samples.shape == (8, 64000)
    assert np.all(np.isfinite(enh.samples))
    meta = json.loads((tmp_path / "test" / f"{row['id']}_enhanced.json").read_text())
    assert meta["seed"] == 5


def test_enhance_missing_dataset_is_usage_error(tmp_path, capsys):
    rc = main(["enhance", "--dataset", str(tmp_path / "nothing"),
               "--out", str(tmp_path / "o"), "--method", "identity"])
    assert rc == 2
    assert "manifest" in capsys.readouterr().err


def test_enhance_wtformer_requires_weights_source(dataset, tmp_path, capsys):
    rc = main(["enhance", "--dataset", str(dataset), "--out", str(tmp_path),
               "--method", "wtformer", "--split", "test"])
    assert rc == 2
    assert "--checkpoint or --random-init" in capsys.readouterr().err


def test_argparse_usage_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["enhance", "--method", "identity"])  # missing required paths
    assert exc.value.code == 2


# ------------------------------------------------------------------ evaluate

def test_evaluate_schema_and_mean_row(dataset, identity_out, tmp_path):
    out = tmp_path / "metrics.csv"
    rc = main(["evaluate", "--dataset", str(dataset),
               "--enhanced", str(identity_out), "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "id,si_snr_db,delta_itd_us,delta_ipd_rad,delta_ild_db"
    assert len(lines) == 22  # header + 20 examples + mean
    assert lines[-1].startswith("mean,")
    body = np.array([line.split(",")[1:] for line in lines[1:]], dtype=float)
    assert np.all(np.isfinite(body))  # 8-ch vs 8-ch: cue columns populated
    mean = body[-1]
    assert mean == pytest.approx(body[:-1].mean(axis=0))


def test_evaluate_unpaired_files_exit_nonzero(dataset, identity_out, tmp_path, capsys):
    clone = tmp_path / "partial"
    rows = manifest_rows(dataset)
    for row in rows[:3]:
        src = Path(identity_out) / row["split"] / f"{row['id']}_enhanced.wav"
        dst = clone / row["split"] / f"{row['id']}_enhanced.wav"
        dst.parent.mkdir(parents=True, exist_ok=True)
        dst.write_bytes(src.read_bytes())
    out = tmp_path / "metrics.csv"
    rc = main(["evaluate", "--dataset", str(dataset),
               "--enhanced", str(clone), "--out", str(out)])
    assert rc == 1
    assert "UNPAIRED" in capsys.readouterr().err
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 5  # header + 3 found pairs + mean


# --------------------------------------------------------------------- music

def test_music_csv_pgm_and_peak(dataset, tmp_path, capsys):
    row = [r for r in manifest_rows(dataset) if r["split"] == "test"][0]
    target = Path(dataset) / "test" / f"{row['id']}_target.wav"
    scene = json.loads((Path(dataset) / "test" /
                        f"{row['id']}_scene.json").read_text())
    csv_path = tmp_path / "music.csv"
    pgm_path = tmp_path / "music.pgm"
    rc = main(["music", "--wav", str(target), "--out", str(csv_path),
               "--pgm", str(pgm_path)])
    assert rc == 0
    lines = csv_path.read_text().strip().split("\n")
    assert len(lines) == 302  # header + 300 bands + mean
    assert lines[0].split(",")[:2] == ["band_hz", "deg_0"]
    assert len(lines[1].split(",")) == 182
    assert lines[-1].startswith("mean,")
    wideband = np.array(lines[-1].split(",")[1:], dtype=float)
    peak = float(np.argmax(wideband))
    assert abs(peak - scene["speech_doa_deg"]) <= 1.0
    header = pgm_path.read_bytes()[:15]
    assert header == b"P5\n181 300\n255\n"
    assert "peak_angle_deg=" in capsys.readouterr().out


def test_music_missing_wav_is_usage_error(tmp_path, capsys):
    rc = main(["music", "--wav", str(tmp_path / "x.wav"),
               "--out", str(tmp_path / "m.csv")])
    assert rc == 2


# --------------------------------------------------- gradcheck and describe

def test_gradcheck_reports_all_blocks(capsys):
    rc = main(["gradcheck"])
    assert rc == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert len(out) == 5
    assert all("PASS" in line and "max_rel_error" in line for line in out)


def test_describe_prints_parameter_table(capsys):
    rc = main(["describe"])
    assert rc == 0
    out = capsys.readouterr().out
    for module in ("encoder", "mca", "conformer", "decoder", "mask", "loss"):
        assert module in out
    assert "981,234" in out
    assert "0.981 M" in out


# -------------------------------------------------------------------- config

def test_config_precedence_flags_over_toml(tmp_path, capsys):
    cfg = tmp_path / "lab.toml"
    cfg.write_text("[simulate]\nseed = 3\n\n[scene]\nrt60_range = [0.4, 0.5]\n")
    rc = main(["simulate", "--corpus", "unused", "--out", "unused",
               "--config", str(cfg), "--print-config"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "seed = 3" in out
    assert "rt60_range = [0.4, 0.5]" in out
    rc = main(["simulate", "--corpus", "unused", "--out", "unused",
               "--config", str(cfg), "--seed", "9", "--print-config"])
    assert rc == 0
    assert "seed = 9" in capsys.readouterr().out


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[simulate]\nbogus = 1\n")
    rc = main(["gradcheck", "--config", str(cfg)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_config_rejects_unknown_section(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[training]\nlr = 0.1\n")
    rc = main(["gradcheck", "--config", str(cfg)])
    assert rc == 2
    assert "training" in capsys.readouterr().err


def test_config_env_var_default(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "env.toml"
    cfg.write_text("[gradcheck]\nseed = 12\n")
    monkeypatch.setenv("WTLAB_CONFIG", str(cfg))
    rc = main(["gradcheck", "--print-config"])
    assert rc == 0
    assert "seed = 12" in capsys.readouterr().out
    monkeypatch.setenv("WTLAB_CONFIG", str(tmp_path / "missing.toml"))
    rc = main(["gradcheck", "--print-config"])
    assert rc == 2
    assert "missing.toml" in capsys.readouterr().err
