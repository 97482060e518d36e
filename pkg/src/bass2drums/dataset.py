"""Corpus handling: stem ingestion, chunking, and the on-disk chunk store.

A *chunk* is a fixed-width window of a quantized mel image, the unit every
model consumes.  Chunks overlap by a fixed number of frames; reassembly
crossfades the overlaps linearly.  On disk a chunk store is a directory of
binary PGM images plus one newline-delimited index file, and a dataset
manifest is a newline-delimited table of stem paths with the spectral
fingerprint that produced it.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import audio_io, spectral
from .config import RunConfig

log = logging.getLogger(__name__)

DOMAINS = ("bass", "drums")

MANIFEST_NAME = "manifest.tsv"
CHUNK_INDEX_NAME = "chunks.tsv"


@dataclass
class Chunk:
    """One model-ready tile of a quantized mel image.

    pixels: uint8 matrix (n_mels rows, width frame columns).
    offset: first frame column of this tile within its source image.
    """

    pixels: np.ndarray
    song_id: str
    offset: int
    domain: str

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be a 2-D uint8 matrix")
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def chunk(image: np.ndarray, *, width: int = 256, overlap: int = 50,
          song_id: str = "", domain: str = "bass") -> list[Chunk]:
    """Cut a quantized mel image into overlapping fixed-width chunks.

    Chunks start at offsets 0, stride, 2*stride, ... with
    stride = width - overlap; a trailing remainder shorter than one full
    width is dropped.  An image narrower than one width is an error.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("image must be a 2-D uint8 matrix")
    if not 0 <= overlap < width:
        raise ValueError("need 0 <= overlap < width")
    n_frames = image.shape[1]
    if n_frames < width:
        raise ValueError(f"image has {n_frames} frames, narrower than one chunk ({width})")
    stride = width - overlap
    count = (n_frames - width) // stride + 1
    return [
        Chunk(pixels=image[:, i * stride : i * stride + width].copy(),
              song_id=song_id, offset=i * stride, domain=domain)
        for i in range(count)
    ]


def assemble(chunks: Sequence[Chunk], *, overlap: int = 50) -> np.ndarray:
    """Rebuild a mel image from contiguous chunks of one song and domain.

    Overlapping columns are blended with a linear crossfade: at overlap
    position i (0-based), the incoming chunk gets weight (i + 1) /
    (overlap + 1).  Since uint8 values are exact in float, regions where
    both sides agree reproduce the original bytes exactly.
    """
    if not chunks:
        raise ValueError("no chunks to assemble")
    ordered = sorted(chunks, key=lambda c: c.offset)
    first = ordered[0]
    width = first.width
    stride = width - overlap
    if not 0 <= overlap < width:
        raise ValueError("need 0 <= overlap < width")
    for c in ordered:
        if c.song_id != first.song_id or c.domain != first.domain:
            raise ValueError("chunks mix songs or domains")
        if c.pixels.shape != first.pixels.shape:
            raise ValueError("chunks disagree on shape")
    offsets = [c.offset for c in ordered]
    expected = [first.offset + i * stride for i in range(len(ordered))]
    if offsets != expected:
        raise ValueError(f"chunk offsets {offsets} are not contiguous at stride {stride}")

    total = ordered[-1].offset - first.offset + width
    out = np.zeros((first.pixels.shape[0], total), dtype=np.float64)
    out[:, :width] = ordered[0].pixels
    fade_in = np.arange(1, overlap + 1, dtype=np.float64) / (overlap + 1)
    for c in ordered[1:]:
        start = c.offset - first.offset
        tile = c.pixels.astype(np.float64)
        if overlap:
            out[:, start : start + overlap] = (
                (1.0 - fade_in) * out[:, start : start + overlap] + fade_in * tile[:, :overlap]
            )
        out[:, start + overlap : start + width] = tile[:, overlap:]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def chunk_to_unit(pixels: np.ndarray) -> np.ndarray:
    """uint8 levels 0..255 -> float32 in [-1, 1] (the model input scale)."""
    return (np.asarray(pixels).astype(np.float32) / 127.5) - 1.0


def unit_to_chunk(values: np.ndarray) -> np.ndarray:
    """float in [-1, 1] -> uint8 levels, the inverse of chunk_to_unit."""
    levels = np.rint((np.asarray(values, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(levels, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM image files (binary, maxval 255)


def write_pgm(path: str, pixels: np.ndarray) -> None:
    """Write a uint8 matrix as a binary PGM (P5) image."""
    pixels = np.ascontiguousarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("pixels must be a 2-D uint8 matrix")
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM (P5) image written by write_pgm."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        magic, dims, maxval, raster = blob.split(b"\n", 3)
    except ValueError as exc:
        raise ValueError(f"{path}: truncated PGM header") from exc
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    if maxval != b"255":
        raise ValueError(f"{path}: unsupported maxval {maxval!r}")
    try:
        w, h = (int(tok) for tok in dims.split())
    except ValueError as exc:
        raise ValueError(f"{path}: bad PGM dimensions {dims!r}") from exc
    if len(raster) < w * h:
        raise ValueError(f"{path}: raster shorter than {w}x{h}")
    return np.frombuffer(raster[: w * h], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# Dataset manifest


@dataclass
class ManifestEntry:
    song_id: str
    bass_path: str
    drums_path: str
    split: str  # "train" or "test"


@dataclass
class DatasetManifest:
    """Index of stem pairs plus the spectral fingerprint they are bound to."""

    entries: list[ManifestEntry]
    fingerprint: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [e.song_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate song ids in manifest")
        for e in self.entries:
            if e.split not in ("train", "test"):
                raise ValueError(f"{e.song_id}: bad split {e.split!r}")

    def subset(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


def ingest_stems(root: str, split_rule: int | Callable[[int, str], str] = -1,
                 fingerprint: dict[str, str] | None = None) -> DatasetManifest:
    """Scan a stem directory tree into a manifest.

    Each immediate subdirectory of root that contains both ``bass.wav`` and
    ``drums.wav`` becomes one entry; directories missing a stem are skipped
    and reported through logging.  split_rule is either an integer n (the
    first n songs in sorted order become train, the rest test; n < 0 marks
    everything train) or a callable (index, song_id) -> "train" | "test".
    """
    if not os.path.isdir(root):
        raise FileNotFoundError(f"stem root {root!r} is not a directory")
    song_dirs = sorted(
        name for name in os.listdir(root) if os.path.isdir(os.path.join(root, name))
    )
    entries: list[ManifestEntry] = []
    index = 0
    for name in song_dirs:
        bass = os.path.join(root, name, "bass.wav")
        drums = os.path.join(root, name, "drums.wav")
        missing = [p for p in (bass, drums) if not os.path.isfile(p)]
        if missing:
            log.warning("skipping %s: missing %s", name,
                        ", ".join(os.path.basename(p) for p in missing))
            continue
        if callable(split_rule):
            split = split_rule(index, name)
        else:
            split = "train" if (split_rule < 0 or index < split_rule) else "test"
        entries.append(ManifestEntry(song_id=name, bass_path=bass,
                                     drums_path=drums, split=split))
        index += 1
    return DatasetManifest(entries=entries, fingerprint=dict(fingerprint or {}))


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write a manifest as '#key=value' fingerprint lines plus TSV records."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(manifest.fingerprint):
            fh.write(f"#{key}={manifest.fingerprint[key]}\n")
        for e in manifest.entries:
            fh.write(f"{e.song_id}\t{e.bass_path}\t{e.drums_path}\t{e.split}\n")


def load_manifest(path: str) -> DatasetManifest:
    fingerprint: dict[str, str] = {}
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                fingerprint[key] = value
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}: bad manifest record {line!r}")
            entries.append(ManifestEntry(*parts))
    return DatasetManifest(entries=entries, fingerprint=fingerprint)


def check_fingerprint(stored: dict[str, str], cfg: RunConfig) -> None:
    """Refuse to mix artifacts produced under a different spectral identity."""
    current = cfg.fingerprint()
    mismatched = {k: (stored.get(k), current[k])
                  for k in current if stored.get(k) not in (None, current[k])}
    if mismatched:
        detail = ", ".join(f"{k}: stored {a} vs current {b}"
                           for k, (a, b) in mismatched.items())
        raise ValueError(f"fingerprint mismatch: {detail}")


# ---------------------------------------------------------------------------
# Chunk store


@dataclass
class ChunkRecord:
    song_id: str
    domain: str
    offset: int
    split: str
    filename: str


def _waveform_to_image(w: audio_io.Waveform, cfg: RunConfig,
                       fb: spectral.FilterBank) -> np.ndarray:
    """Front half of the pipeline: audio in, quantized mel image out."""
    mono = audio_io.to_mono(w)
    mono = audio_io.resample(mono, cfg.sample_rate)
    spec = spectral.stft(mono, cfg.n_fft, cfg.hop, cfg.window)
    mel = spectral.mel_project(spectral.power(spec), fb)
    db = spectral.power_to_db(mel, floor_db=cfg.floor_db)
    return spectral.quantize(db, floor_db=cfg.floor_db)


def build_chunks(manifest: DatasetManifest, store_dir: str, cfg: RunConfig) -> list[ChunkRecord]:
    """Materialize a chunk store from a manifest.

    Every stem is read, transformed and chunked; the resulting PGM files and
    one index (chunks.tsv) land in store_dir.  A song whose stems fail to
    decode or are too short for a single chunk is skipped with a logged
    warning rather than aborting the whole build.
    """
    check_fingerprint(manifest.fingerprint, cfg)
    os.makedirs(store_dir, exist_ok=True)
    fb = spectral.mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate)
    records: list[ChunkRecord] = []
    for entry in manifest.entries:
        try:
            song_chunks: list[Chunk] = []
            for domain, path in (("bass", entry.bass_path), ("drums", entry.drums_path)):
                image = _waveform_to_image(audio_io.read_wav(path), cfg, fb)
                song_chunks.extend(chunk(image, width=cfg.chunk_width,
                                         overlap=cfg.chunk_overlap,
                                         song_id=entry.song_id, domain=domain))
        except (audio_io.WavError, ValueError, OSError) as exc:
            log.warning("skipping song %s: %s", entry.song_id, exc)
            continue
        for c in song_chunks:
            filename = f"{c.song_id}_{c.domain}_{c.offset:08d}.pgm"
            write_pgm(os.path.join(store_dir, filename), c.pixels)
            records.append(ChunkRecord(song_id=c.song_id, domain=c.domain,
                                       offset=c.offset, split=entry.split,
                                       filename=filename))

    with open(os.path.join(store_dir, CHUNK_INDEX_NAME), "w", encoding="utf-8") as fh:
        for key in sorted(manifest.fingerprint):
            fh.write(f"#{key}={manifest.fingerprint[key]}\n")
        for r in records:
            fh.write(f"{r.song_id}\t{r.domain}\t{r.offset}\t{r.split}\t{r.filename}\n")
    return records


def load_chunk_index(store_dir: str) -> tuple[list[ChunkRecord], dict[str, str]]:
    index_path = os.path.join(store_dir, CHUNK_INDEX_NAME)
    if not os.path.isfile(index_path):
        raise FileNotFoundError(f"{store_dir} has no {CHUNK_INDEX_NAME}")
    records: list[ChunkRecord] = []
    fingerprint: dict[str, str] = {}
    with open(index_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                fingerprint[key] = value
                continue
            song_id, domain, offset, split, filename = line.split("\t")
            records.append(ChunkRecord(song_id=song_id, domain=domain,
                                       offset=int(offset), split=split,
                                       filename=filename))
    return records, fingerprint


def load_chunk(store_dir: str, record: ChunkRecord) -> Chunk:
    pixels = read_pgm(os.path.join(store_dir, record.filename))
    return Chunk(pixels=pixels, song_id=record.song_id,
                 offset=record.offset, domain=record.domain)


def song_chunks(store_dir: str, song_id: str, domain: str,
                split: str | None = None) -> list[Chunk]:
    """All chunks of one song/domain in offset order."""
    records, _ = load_chunk_index(store_dir)
    wanted = [r for r in records
              if r.song_id == song_id and r.domain == domain
              and (split is None or r.split == split)]
    wanted.sort(key=lambda r: r.offset)
    return [load_chunk(store_dir, r) for r in wanted]


# ---------------------------------------------------------------------------
# Batch iteration


def _as_batch(stack: list[np.ndarray]) -> np.ndarray:
    """Stack chunk pixel matrices into a (batch, 1, H, W) float array in [-1, 1]."""
    return chunk_to_unit(np.stack(stack, axis=0))[:, None, :, :]


class ChunkSource:
    """Seeded, epoch-aware batch provider over in-memory chunk pixel lists.

    Unpaired mode draws the two domains in independent shuffled orders and
    one epoch is max(len(x), len(y)) items, the shorter side wrapping
    around.  Paired mode requires equal-length aligned lists.  Reshuffles
    are a pure function of (seed, epoch), so iteration is reproducible.
    """

    def __init__(self, x_pixels: Sequence[np.ndarray],
                 y_pixels: Sequence[np.ndarray] | None = None, *,
                 paired: bool = False, batch_size: int = 1, seed: int = 0):
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if not x_pixels:
            raise ValueError("empty chunk source")
        self.x = [np.asarray(p) for p in x_pixels]
        self.y = None if y_pixels is None else [np.asarray(p) for p in y_pixels]
        if paired:
            if self.y is None or len(self.y) != len(self.x):
                raise ValueError("paired mode needs aligned lists of equal length")
        elif self.y is not None and not self.y:
            raise ValueError("empty chunk source")
        self.paired = paired
        self.batch_size = batch_size
        self.seed = seed

    def epoch_size(self) -> int:
        if self.y is None or self.paired:
            return len(self.x)
        return max(len(self.x), len(self.y))

    def epoch(self, epoch_index: int) -> Iterable:
        """Yield batches for one epoch: arrays (B,1,H,W), or pairs of them."""
        rng = np.random.default_rng((self.seed, epoch_index))
        if self.y is None:
            order = rng.permutation(len(self.x))
            usable = len(order) - len(order) % self.batch_size
            for start in range(0, usable, self.batch_size):
                idx = order[start : start + self.batch_size]
                yield _as_batch([self.x[i] for i in idx])
            return
        if self.paired:
            order = rng.permutation(len(self.x))
            usable = len(order) - len(order) % self.batch_size
            for start in range(0, usable, self.batch_size):
                idx = order[start : start + self.batch_size]
                yield (_as_batch([self.x[i] for i in idx]),
                       _as_batch([self.y[i] for i in idx]))
            return
        n = self.epoch_size()
        x_order = rng.permutation(len(self.x))
        y_order = rng.permutation(len(self.y))
        usable = n - n % self.batch_size
        for start in range(0, usable, self.batch_size):
            xb = _as_batch([self.x[x_order[(start + j) % len(self.x)]]
                            for j in range(self.batch_size)])
            yb = _as_batch([self.y[y_order[(start + j) % len(self.y)]]
                            for j in range(self.batch_size)])
            yield xb, yb


def chunk_source_from_store(store_dir: str, *, domains: Sequence[str] = DOMAINS,
                            split: str = "train", paired: bool = False,
                            batch_size: int = 1, seed: int = 0) -> ChunkSource:
    """Build a ChunkSource from a chunk store directory."""
    records, _ = load_chunk_index(store_dir)
    records = [r for r in records if r.split == split]
    if len(domains) == 1:
        pixels = [load_chunk(store_dir, r).pixels for r in records if r.domain == domains[0]]
        return ChunkSource(pixels, paired=False, batch_size=batch_size, seed=seed)
    if len(domains) != 2:
        raise ValueError("domains must name one or two domains")
    if paired:
        by_key = {}
        for r in records:
            by_key.setdefault((r.song_id, r.offset), {})[r.domain] = r
        keys = sorted(k for k, v in by_key.items() if set(v) >= set(domains))
        xs = [load_chunk(store_dir, by_key[k][domains[0]]).pixels for k in keys]
        ys = [load_chunk(store_dir, by_key[k][domains[1]]).pixels for k in keys]
        return ChunkSource(xs, ys, paired=True, batch_size=batch_size, seed=seed)
    xs = [load_chunk(store_dir, r).pixels for r in records if r.domain == domains[0]]
    ys = [load_chunk(store_dir, r).pixels for r in records if r.domain == domains[1]]
    return ChunkSource(xs, ys, paired=False, batch_size=batch_size, seed=seed)
