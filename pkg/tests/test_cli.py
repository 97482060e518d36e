"""End-to-end command-line runs over a tiny synthetic stem tree."""

import numpy as np
import pytest

from bass2drums import audio_io, cli
from bass2drums.dataset import load_chunk_index, read_pgm

SR = 22050
SECONDS = 3.0  # long enough for two desk-width chunks per song


def _tone_mix(seed: int) -> audio_io.Waveform:
    rng = np.random.default_rng(seed)
    t = np.arange(int(SR * SECONDS)) / SR
    samples = np.zeros_like(t)
    for f, a in [(110.0, 0.4), (220.0, 0.25), (330.0, 0.15)]:
        samples += a * np.sin(2 * np.pi * (f + rng.uniform(-5, 5)) * t)
    samples += 0.05 * rng.normal(size=t.size)
    samples *= 0.5 / np.max(np.abs(samples))
    return audio_io.Waveform(samples=samples, sample_rate=SR)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Stem tree -> manifest -> chunk store -> 3-step trained checkpoint."""
    root = tmp_path_factory.mktemp("pipeline")
    songs = root / "songs"
    for i, song in enumerate(["song_a", "song_b"]):
        d = songs / song
        d.mkdir(parents=True)
        audio_io.write_wav(d / "bass.wav", _tone_mix(2 * i))
        audio_io.write_wav(d / "drums.wav", _tone_mix(2 * i + 1))

    manifest = root / "manifest.tsv"
    assert cli.main(["ingest", "--root", str(songs), "--out", str(manifest),
                     "--preset", "desk", "--set", "train_count=1"]) == 0

    store = root / "store"
    assert cli.main(["build-chunks", "--manifest", str(manifest),
                     "--store", str(store), "--preset", "desk",
                     "--set", "train_count=1"]) == 0

    out = root / "run"
    assert cli.main(["train-cyclegan", "--store", str(store),
                     "--out-dir", str(out), "--preset", "desk",
                     "--set", "max_steps=3", "--set", "log_every=0",
                     "--set", "train_count=1"]) == 0
    return root


def test_ingest_and_chunk_store(pipeline_dir):
    manifest_text = (pipeline_dir / "manifest.tsv").read_text(encoding="utf-8")
    body = [ln for ln in manifest_text.splitlines() if not ln.startswith("#")]
    assert len(body) == 2
    assert body[0].endswith("train") and body[1].endswith("test")

    records, fingerprint = load_chunk_index(pipeline_dir / "store")
    assert fingerprint["n_mels"] == "64"
    # 3 s -> 126 frames -> 2 chunks per song and domain
    assert len(records) == 8
    assert {r.domain for r in records} == {"bass", "drums"}
    assert sorted({r.offset for r in records}) == [0, 52]


def test_training_artifacts(pipeline_dir):
    out = pipeline_dir / "run"
    assert (out / "checkpoint.ckpt").exists()
    assert (out / "loss_curves.png").stat().st_size > 0
    log_lines = (out / "loss_log.tsv").read_text(encoding="utf-8").splitlines()
    assert len(log_lines) == 4  # header + 3 steps


def test_spectrogram_command(pipeline_dir, tmp_path):
    wav = pipeline_dir / "songs" / "song_a" / "bass.wav"
    assert cli.main(["spectrogram", "--input", str(wav),
                     "--out-dir", str(tmp_path), "--preset", "desk"]) == 0
    image = read_pgm(tmp_path / "bass_mel.pgm")
    assert image.shape == (64, 126)
    assert (tmp_path / "bass_mel.png").stat().st_size > 0


def test_translate_and_invert(pipeline_dir, tmp_path):
    ckpt = pipeline_dir / "run" / "checkpoint.ckpt"
    wav = pipeline_dir / "songs" / "song_b" / "bass.wav"

    bare = tmp_path / "bare"
    assert cli.main(["translate", "--input", str(wav), "--checkpoint", str(ckpt),
                     "--out-dir", str(bare),
                     "--set", "gl_iters=4", "--set", "inv_max_iters=20"]) == 0
    assert [p.name for p in bare.iterdir()] == ["bass_drums.wav"]

    assert cli.main(["translate", "--input", str(wav), "--checkpoint", str(ckpt),
                     "--out-dir", str(tmp_path), "--keep-intermediates",
                     "--set", "gl_iters=4", "--set", "inv_max_iters=20"]) == 0
    gen = audio_io.read_wav(tmp_path / "bass_drums.wav")
    assert gen.sample_rate == SR
    assert len(gen) > SR  # roughly song-length audio came back
    for name in ("bass_bass_mel.pgm", "bass_drums_mel.pgm",
                 "bass_bass_mel.png", "bass_drums_mel.png"):
        assert (tmp_path / name).exists()
    gen_image = read_pgm(tmp_path / "bass_drums_mel.pgm")
    assert gen_image.shape == (64, 116)  # two chunks assembled at stride 52

    out_wav = tmp_path / "roundtrip.wav"
    assert cli.main(["invert", "--image", str(tmp_path / "bass_drums_mel.pgm"),
                     "--out", str(out_wav), "--preset", "desk",
                     "--set", "gl_iters=4", "--set", "inv_max_iters=20"]) == 0
    assert len(audio_io.read_wav(out_wav)) > 0


def test_evaluate_command(pipeline_dir, tmp_path):
    ckpt = pipeline_dir / "run" / "checkpoint.ckpt"
    ann = tmp_path / "ann.tsv"
    ann.write_text(
        "s0\tr1\t8\t1\t7\t6\ns1\tr1\t3\t2\t4\t5\n"
        "s0\tr2\t7\t1\t6\t6\ns1\tr2\t2\t0\t3\t4\n", encoding="utf-8")
    out = tmp_path / "eval"
    assert cli.main(["evaluate", "--store", str(pipeline_dir / "store"),
                     "--checkpoint", str(ckpt), "--out-dir", str(out),
                     "--split", "test", "--annotations", str(ann)]) == 0
    lines = (out / "scores.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("song_id\toffset")
    assert len(lines) == 3  # two test-song chunk pairs
    assert (out / "grade_histogram.png").stat().st_size > 0
    assert (out / "rater_pearson.tsv").exists()
    assert (out / "rater_pearson.png").exists()


def test_gradecheck_command(capsys):
    assert cli.main(["gradecheck", "--ops-only"]) == 0
    out = capsys.readouterr().out
    assert "pass" in out and "FAIL" not in out


def test_train_pix2pix_command(pipeline_dir, tmp_path):
    out = tmp_path / "p2p"
    assert cli.main(["train-pix2pix", "--store", str(pipeline_dir / "store"),
                     "--out-dir", str(out), "--preset", "desk",
                     "--set", "max_steps=2", "--set", "log_every=0",
                     "--set", "train_count=1"]) == 0
    assert (out / "checkpoint.ckpt").exists()


def test_exit_codes():
    # unknown config key is a usage error
    assert cli.main(["spectrogram", "--input", "x.wav", "--out-dir", "/tmp/x",
                     "--set", "bogus_key=1"]) == 2
    # missing input file is an operational error
    assert cli.main(["spectrogram", "--input", "/nonexistent/x.wav",
                     "--out-dir", "/tmp/x", "--preset", "desk"]) == 1
    assert cli.main(["invert", "--image", "/nonexistent/i.pgm",
                     "--out", "/tmp/x.wav", "--preset", "desk"]) == 1


def test_mismatched_chunk_width_rejected(pipeline_dir, tmp_path):
    # training refuses a geometry where images cannot feed the networks
    code = cli.main(["train-cyclegan", "--store", str(pipeline_dir / "store"),
                     "--out-dir", str(tmp_path), "--preset", "desk",
                     "--set", "n_mels=32"])
    assert code == 2
