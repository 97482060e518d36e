"""Command-line front end.

Subcommands cover the whole pipeline: spectrogram rendering, corpus
ingestion, chunk-store builds, both training regimes, translation of new
audio, image-to-audio inversion, evaluation reports, and gradient checks.
Report-producing paths write figures (PNG) next to their delimited outputs.

Exit codes: 0 success, 2 for configuration or usage errors, 1 for runtime
failures (missing files, malformed audio, diverged training).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import audio_io, dataset, evaluation, inversion, plots, spectral
from .autograd import CheckpointError, gradcheck
from .config import (
    ConfigError,
    RunConfig,
    build_config,
    load_config,
    parse_config_text,
    serialize_config,
)
from .models import training

log = logging.getLogger("bass2drums")

GRADCHECK_TOLERANCE = 1e-4

# keeps the threadpoolctl limiter alive for the whole process
_THREAD_LIMITER = None


def _limit_threads(n: int) -> None:
    """Bound every BLAS/OpenMP worker pool numpy may have loaded.

    Our own code is single-threaded; linked BLAS libraries are the only
    source of parallelism, and more than one worker makes reductions
    nondeterministic across machines.  Default is 1.
    """
    global _THREAD_LIMITER
    os.environ["OMP_NUM_THREADS"] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - installed as a dependency
        log.warning("threadpoolctl unavailable; --threads not enforced")
        return
    _THREAD_LIMITER = threadpool_limits(limits=n)


def _split_overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _load_run_config(args) -> RunConfig:
    overrides = _split_overrides(getattr(args, "set", None))
    if getattr(args, "preset", None):
        overrides.setdefault("preset", args.preset)
    if getattr(args, "config", None):
        cfg = load_config(args.config, overrides)
    else:
        cfg = build_config({}, overrides)
    log.info("config fingerprint: %s", cfg.fingerprint())
    log.info("seed: %d", cfg.seed)
    return cfg


def _apply_overrides(run: RunConfig, args) -> RunConfig:
    """Layer --set/--preset on top of a stored config (from a checkpoint)."""
    overrides = _split_overrides(getattr(args, "set", None))
    if getattr(args, "preset", None):
        overrides["preset"] = args.preset
    cfg = build_config(parse_config_text(serialize_config(run)), overrides)
    log.info("config fingerprint: %s", cfg.fingerprint())
    log.info("seed: %d", cfg.seed)
    return cfg


def _add_config_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--preset", choices=["paper", "desk"],
                     help="baseline preset (file/--set keys override it)")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")


def _wav_to_db_image(path: str, cfg: RunConfig):
    """Front half of the pipeline, returning both the dB and uint8 images."""
    w = audio_io.resample(audio_io.to_mono(audio_io.read_wav(path)), cfg.sample_rate)
    spec = spectral.stft(w, cfg.n_fft, cfg.hop, cfg.window)
    fb = spectral.mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate)
    mel = spectral.mel_project(spectral.power(spec), fb)
    db = spectral.power_to_db(mel, floor_db=cfg.floor_db)
    return db, spectral.quantize(db, floor_db=cfg.floor_db)


# ---------------------------------------------------------------------------
# Subcommand implementations


def cmd_spectrogram(args) -> int:
    cfg = _load_run_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    db, image = _wav_to_db_image(args.input, cfg)
    pgm_path = os.path.join(args.out_dir, f"{stem}_mel.pgm")
    png_path = os.path.join(args.out_dir, f"{stem}_mel.png")
    dataset.write_pgm(pgm_path, image)
    plots.save_mel_image(db, png_path, title=stem, sample_rate=cfg.sample_rate,
                         hop=cfg.hop, floor_db=cfg.floor_db)
    print(f"wrote {pgm_path} ({image.shape[0]}x{image.shape[1]}) and {png_path}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_run_config(args)
    manifest = dataset.ingest_stems(args.root, split_rule=cfg.train_count,
                                    fingerprint=cfg.fingerprint())
    dataset.save_manifest(manifest, args.out)
    n_train = len(manifest.subset("train"))
    n_test = len(manifest.subset("test"))
    print(f"wrote {args.out}: {len(manifest.entries)} songs "
          f"({n_train} train, {n_test} test)")
    return 0


def cmd_build_chunks(args) -> int:
    cfg = _load_run_config(args)
    manifest = dataset.load_manifest(args.manifest)
    records = dataset.build_chunks(manifest, args.store, cfg)
    by_domain: dict[str, int] = {}
    for r in records:
        by_domain[r.domain] = by_domain.get(r.domain, 0) + 1
    print(f"wrote {len(records)} chunks to {args.store} "
          + " ".join(f"{d}={n}" for d, n in sorted(by_domain.items())))
    return 0


def _train_common(args, paired: bool) -> int:
    cfg = _load_run_config(args)
    if cfg.n_mels != cfg.chunk_width:
        raise ConfigError("training needs square chunks (n_mels == chunk_width)")
    os.makedirs(args.out_dir, exist_ok=True)
    source = dataset.chunk_source_from_store(
        args.store, paired=paired, batch_size=1, seed=cfg.seed)
    if paired:
        state, records = training.train_pix2pix(source, cfg, args.out_dir)
    else:
        state, records = training.train_cyclegan(source, cfg, args.out_dir)
    ckpt = os.path.join(args.out_dir, "checkpoint.ckpt")
    training.save_state(state, ckpt)
    log_path = os.path.join(args.out_dir, "loss_log.tsv")
    training.write_loss_log(records, log_path)
    fig_path = os.path.join(args.out_dir, "loss_curves.png")
    if records:
        plots.save_loss_curves(records, fig_path)
    print(f"trained {state.step} steps; wrote {ckpt}, {log_path}, {fig_path}")
    return 0


def cmd_train_cyclegan(args) -> int:
    return _train_common(args, paired=False)


def cmd_train_pix2pix(args) -> int:
    return _train_common(args, paired=True)


def cmd_translate(args) -> int:
    state = training.load_state(args.checkpoint)
    if not isinstance(state, training.CycleTrainState):
        raise ValueError("translate needs an unpaired (cyclegan) checkpoint")
    cfg = _apply_overrides(state.run, args)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]

    db, image = _wav_to_db_image(args.input, cfg)
    chunks = dataset.chunk(image, width=cfg.chunk_width, overlap=cfg.chunk_overlap,
                           song_id=stem, domain="bass")
    generated = training.translate(state.G, chunks, target_domain="drums")
    gen_image = dataset.assemble(generated, overlap=cfg.chunk_overlap)

    fb = spectral.mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate)
    inv_cfg = inversion.InversionConfig(max_iters=cfg.inv_max_iters,
                                        tol=cfg.inv_tol, gl_iters=cfg.gl_iters)
    wav = inversion.mel_chunks_to_waveform(
        generated, fb, inv_cfg, overlap=cfg.chunk_overlap, floor_db=cfg.floor_db,
        hop=cfg.hop, sample_rate=cfg.sample_rate, window=cfg.window)

    wav_path = os.path.join(args.out_dir, f"{stem}_drums.wav")
    audio_io.write_wav(wav_path, wav)
    if args.keep_intermediates:
        dataset.write_pgm(os.path.join(args.out_dir, f"{stem}_bass_mel.pgm"), image)
        dataset.write_pgm(os.path.join(args.out_dir, f"{stem}_drums_mel.pgm"),
                          gen_image)
        plots.save_mel_image(db, os.path.join(args.out_dir, f"{stem}_bass_mel.png"),
                             title=f"{stem} (bass input)",
                             sample_rate=cfg.sample_rate,
                             hop=cfg.hop, floor_db=cfg.floor_db)
        plots.save_mel_image(spectral.dequantize(gen_image, floor_db=cfg.floor_db),
                             os.path.join(args.out_dir, f"{stem}_drums_mel.png"),
                             title=f"{stem} (generated drums)",
                             sample_rate=cfg.sample_rate, hop=cfg.hop,
                             floor_db=cfg.floor_db)
        print(f"wrote {wav_path} plus mel images in {args.out_dir}")
    else:
        print(f"wrote {wav_path}")
    return 0


def cmd_invert(args) -> int:
    cfg = _load_run_config(args)
    image = dataset.read_pgm(args.image)
    fb = spectral.mel_filterbank(image.shape[0], cfg.n_fft, cfg.sample_rate)
    inv_cfg = inversion.InversionConfig(max_iters=cfg.inv_max_iters,
                                        tol=cfg.inv_tol, gl_iters=cfg.gl_iters)
    db = spectral.dequantize(image, floor_db=cfg.floor_db)
    mel = spectral.MelSpectrogram(values=spectral.db_to_power(db, floor_db=cfg.floor_db),
                                  n_mels=image.shape[0], hop=cfg.hop,
                                  sample_rate=cfg.sample_rate)
    est_power, residual = inversion.mel_to_linear(mel, fb, inv_cfg, window=cfg.window)
    amplitude = spectral.MagnitudeSpectrogram(
        values=np.sqrt(est_power.values), window_len=est_power.window_len,
        hop=cfg.hop, sample_rate=cfg.sample_rate, window=cfg.window)
    wav = inversion.griffin_lim(amplitude, inv_cfg)
    err = inversion.spectral_convergence(amplitude, wav)
    audio_io.write_wav(args.out, wav)
    print(f"wrote {args.out}: filterbank residual {residual:.6f}, "
          f"spectral convergence {err:.6f}")
    return 0


def _column_shuffled(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return pixels[:, rng.permutation(pixels.shape[1])]


def cmd_evaluate(args) -> int:
    state = training.load_state(args.checkpoint)
    if not isinstance(state, training.CycleTrainState):
        raise ValueError("evaluate needs an unpaired (cyclegan) checkpoint")
    cfg = _apply_overrides(state.run, args)
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    records, _ = dataset.load_chunk_index(args.store)
    split = args.split
    eval_records = [r for r in records if r.split == split]
    if not eval_records:
        raise ValueError(f"chunk store has no {split!r} chunks")
    by_key: dict[tuple[str, int], dict[str, dataset.ChunkRecord]] = {}
    for r in eval_records:
        by_key.setdefault((r.song_id, r.offset), {})[r.domain] = r
    keys = sorted(k for k, v in by_key.items() if {"bass", "drums"} <= set(v))
    if not keys:
        raise ValueError("no aligned bass/drums chunk pairs to evaluate")
    bass = [dataset.load_chunk(args.store, by_key[k]["bass"]) for k in keys]
    drums = [dataset.load_chunk(args.store, by_key[k]["drums"]) for k in keys]

    log.info("translating %d bass chunks", len(bass))
    generated = training.translate(state.G, bass, target_domain="drums")

    embedder = evaluation.Embedder(state.D_Y, trained_steps=state.step)
    real_emb = embedder.embed_many(drums)
    gen_emb = embedder.embed_many(generated)
    gaussian = evaluation.fit_gaussian(real_emb)
    fid = evaluation.frechet_distance(gaussian, evaluation.fit_gaussian(gen_emb))

    # Calibrate the grade model on synthetic anchors: a real chunk against
    # itself is top-bucket material, against a column-shuffled copy bottom.
    feats, labels = [], []
    for c in drums:
        feats.append(evaluation.pair_features(c.pixels, c.pixels, embedder, gaussian))
        labels.append(evaluation.GradeBucket.B8_9)
        feats.append(evaluation.pair_features(
            c.pixels, _column_shuffled(c.pixels, rng), embedder, gaussian))
        labels.append(evaluation.GradeBucket.B0_3)
    model = evaluation.fit_logistic(np.stack(feats), labels)
    train_acc = evaluation.accuracy(model, np.stack(feats), labels)
    log.info("synthetic calibration accuracy: %.3f", train_acc)

    scores = evaluation.score_samples(drums, generated, embedder, gaussian, model)
    hist = evaluation.bucket_histogram(scores)

    table_path = os.path.join(args.out_dir, "scores.tsv")
    evaluation.write_score_table(scores, table_path)
    hist_path = os.path.join(args.out_dir, "grade_histogram.png")
    plots.save_bucket_histogram(hist, hist_path)

    if args.annotations:
        annotations = evaluation.load_annotations(args.annotations)
        raters, matrix = evaluation.rater_pearson_matrix(annotations)
        pearson_path = os.path.join(args.out_dir, "rater_pearson.tsv")
        with open(pearson_path, "w", encoding="utf-8") as fh:
            fh.write("\t" + "\t".join(raters) + "\n")
            for i, rater in enumerate(raters):
                fh.write(rater + "\t" + "\t".join(f"{v!r}" for v in matrix[i]) + "\n")
        plots.save_pearson_matrix(raters, matrix,
                                  os.path.join(args.out_dir, "rater_pearson.png"))
        print(f"rater agreement matrix over {len(raters)} raters -> {pearson_path}")

    counts = " ".join(f"{b.label}:{hist[b]}" for b in evaluation.GradeBucket)
    print(f"scored {len(scores)} pairs; fid {fid:.4f}; buckets {counts}")
    print(f"wrote {table_path} and {hist_path}")
    return 0


def cmd_gradecheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, include_models=not args.ops_only)
    failed = 0
    for name, err in results:
        ok = err < GRADCHECK_TOLERANCE
        failed += 0 if ok else 1
        print(f"{'pass' if ok else 'FAIL'}  {name:28s} max rel err {err:.3e}")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed "
          f"(tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bass2drums",
        description="Bass-to-drums accompaniment synthesis on mel spectrogram images")
    parser.add_argument("--threads", type=int, default=1,
                        help="max BLAS worker threads (default 1, deterministic)")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("spectrogram", help="render a WAV as a quantized mel image")
    p.add_argument("--input", required=True, help="input WAV file")
    p.add_argument("--out-dir", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_spectrogram)

    p = subs.add_parser("ingest", help="scan a stem tree into a dataset manifest")
    p.add_argument("--root", required=True, help="directory of song subdirectories")
    p.add_argument("--out", required=True, help="manifest path to write")
    _add_config_options(p)
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("build-chunks", help="materialize a chunk store from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True, help="chunk store directory to create")
    _add_config_options(p)
    p.set_defaults(func=cmd_build_chunks)

    p = subs.add_parser("train-cyclegan", help="unpaired bass<->drums training")
    p.add_argument("--store", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_train_cyclegan)

    p = subs.add_parser("train-pix2pix", help="paired bass->drums training")
    p.add_argument("--store", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_train_pix2pix)

    p = subs.add_parser("translate", help="bass WAV -> generated drums WAV")
    p.add_argument("--input", required=True, help="bass WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--keep-intermediates", action="store_true",
                   help="also write the mel images (PGM and PNG) of both sides")
    _add_config_options(p)
    p.set_defaults(func=cmd_translate)

    p = subs.add_parser("invert", help="quantized mel image -> audio")
    p.add_argument("--image", required=True, help="PGM chunk or assembled image")
    p.add_argument("--out", required=True, help="output WAV path")
    _add_config_options(p)
    p.set_defaults(func=cmd_invert)

    p = subs.add_parser("evaluate", help="score generated chunks against originals")
    p.add_argument("--store", required=True, help="chunk store with both domains")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--annotations", help="optional annotation TSV for rater stats")
    _add_config_options(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("gradecheck", help="finite-difference checks of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true",
                   help="skip the full-network checks")
    p.set_defaults(func=cmd_gradecheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    _limit_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (audio_io.WavError, CheckpointError, training.TrainingDivergedError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
