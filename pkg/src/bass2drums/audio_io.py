"""WAV input/output, channel down-mix, and sample-rate conversion.

Every downstream stage expects mono float audio at a single project rate
(22050 Hz by default), while source material arrives as arbitrary PCM or
float RIFF/WAVE files at studio rates.  This module owns that boundary:
parsing, validation, down-mixing, and a windowed-sinc resampler.
"""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 22050

# Windowed-sinc resampler geometry: 64 taps centred on each output sample,
# Kaiser window with beta 8.6 (roughly 90 dB stopband).
_RESAMPLE_TAPS = 64
_KAISER_BETA = 8.6

_INT16_SCALE = 32768.0


class WavError(Exception):
    """Base class for WAV parsing failures."""


class MalformedWavError(WavError):
    """File is not a structurally valid RIFF/WAVE container."""


class UnsupportedEncodingError(WavError):
    """File parsed, but uses an encoding this project does not read."""


@dataclass
class Waveform:
    """Time-domain audio: float samples plus the rate they were captured at.

    ``samples`` is a float array of shape (n,) for mono or (n, channels) for
    multi-channel audio.  Samples must be finite; the nominal range is
    [-1, 1] and writing clips to it, but intermediate processing (for
    example phase reconstruction output) may transiently exceed it.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim not in (1, 2):
            raise ValueError("samples must be 1-D (mono) or 2-D (frames x channels)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if not isinstance(self.sample_rate, (int, np.integer)) or self.sample_rate <= 0:
            raise ValueError("sample_rate must be a positive integer")
        self.sample_rate = int(self.sample_rate)

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self) / self.sample_rate


def read_wav(path: str) -> Waveform:
    """Parse a RIFF/WAVE file into a Waveform scaled to [-1, 1].

    Accepts 16-bit PCM (format tag 1) and 32-bit IEEE float (format tag 3),
    mono or stereo.  Integer samples are scaled by 1/32768; float samples are
    clipped into [-1, 1].

    Raises FileNotFoundError for a missing path, MalformedWavError for a
    broken container, UnsupportedEncodingError for anything else.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", blob, pos + 4)
        body_start = pos + 8
        if body_start + chunk_size > len(blob):
            raise MalformedWavError(
                f"{path}: chunk {chunk_id!r} declares {chunk_size} bytes past end of file"
            )
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short ({chunk_size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", blob, body_start)
        elif chunk_id == b"data":
            data = blob[body_start : body_start + chunk_size]
        # chunks are word-aligned: odd sizes carry a pad byte
        pos = body_start + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    audio_format, n_channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if n_channels not in (1, 2):
        raise UnsupportedEncodingError(f"{path}: {n_channels} channels (want 1 or 2)")
    if sample_rate <= 0:
        raise MalformedWavError(f"{path}: non-positive sample rate {sample_rate}")

    if audio_format == 1 and bits == 16:
        itemsize = 2
        usable = len(data) - (len(data) % (itemsize * n_channels))
        raw = np.frombuffer(data[:usable], dtype="<i2")
        samples = raw.astype(np.float64) / _INT16_SCALE
    elif audio_format == 3 and bits == 32:
        itemsize = 4
        usable = len(data) - (len(data) % (itemsize * n_channels))
        raw = np.frombuffer(data[:usable], dtype="<f4")
        if not np.all(np.isfinite(raw)):
            raise MalformedWavError(f"{path}: non-finite float samples")
        samples = np.clip(raw.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedEncodingError(
            f"{path}: format tag {audio_format} with {bits} bits per sample"
        )

    if n_channels == 2:
        samples = samples.reshape(-1, 2)
    return Waveform(samples=samples, sample_rate=int(sample_rate))


def write_wav(path: str, w: Waveform) -> None:
    """Write a mono Waveform as 16-bit PCM.

    Samples are quantized as clip(round(s * 32768), -32768, 32767), so values
    outside [-1, 1] saturate.  Together with read_wav the round trip error is
    at most 1/32768 per sample.
    """
    if w.samples.ndim != 1:
        raise ValueError("write_wav expects mono audio; call to_mono first")
    q = np.clip(np.rint(w.samples * _INT16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(w.sample_rate)
        out.writeframes(q.tobytes())


def to_mono(w: Waveform) -> Waveform:
    """Average channels down to one. Mono input is returned unchanged."""
    if w.samples.ndim == 1:
        return w
    if w.samples.shape[1] > 2:
        raise ValueError(f"cannot down-mix {w.samples.shape[1]} channels")
    return Waveform(samples=w.samples.mean(axis=1), sample_rate=w.sample_rate)


def _kaiser(u: np.ndarray, half_width: float) -> np.ndarray:
    """Kaiser window evaluated at continuous offsets u in [-half_width, half_width]."""
    inside = np.abs(u) <= half_width
    t = np.where(inside, u / half_width, 1.0)
    vals = np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - t * t))) / np.i0(_KAISER_BETA)
    return np.where(inside, vals, 0.0)


def _resample_channel(x: np.ndarray, ratio: float, n_out: int) -> np.ndarray:
    half = _RESAMPLE_TAPS // 2
    # Low-pass at the narrower of the two Nyquist limits (input units).
    cutoff = min(1.0, ratio)
    x_pad = np.concatenate([np.zeros(half + 1), x, np.zeros(half + 1)])
    offsets = np.arange(-half + 1, half + 1)  # 64 taps around each centre

    out = np.empty(n_out, dtype=np.float64)
    block = 1 << 15
    for start in range(0, n_out, block):
        stop = min(start + block, n_out)
        t = np.arange(start, stop, dtype=np.float64) / ratio
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        u = idx.astype(np.float64) - t[:, None]
        kern = cutoff * np.sinc(cutoff * u) * _kaiser(u, float(half))
        norm = kern.sum(axis=1, keepdims=True)
        # DC gain pinned to 1 at every output position
        kern /= np.where(norm == 0.0, 1.0, norm)
        out[start:stop] = (x_pad[idx + half + 1] * kern).sum(axis=1)
    return out


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Windowed-sinc rate conversion to target_rate.

    Output length is round(len(w) * target_rate / w.sample_rate).  Equal
    input and output rates return the samples bit-exactly.  Downsampling
    low-passes at the target Nyquist before decimation.
    """
    if not isinstance(target_rate, (int, np.integer)) or target_rate <= 0:
        raise ValueError("target_rate must be a positive integer")
    if int(target_rate) == w.sample_rate:
        return Waveform(samples=w.samples.copy(), sample_rate=w.sample_rate)
    if len(w) == 0:
        return Waveform(samples=np.zeros_like(w.samples), sample_rate=int(target_rate))

    ratio = target_rate / w.sample_rate
    n_out = int(round(len(w) * ratio))
    if w.samples.ndim == 1:
        resampled = _resample_channel(w.samples, ratio, n_out)
    else:
        cols = [_resample_channel(w.samples[:, c], ratio, n_out) for c in range(w.samples.shape[1])]
        resampled = np.stack(cols, axis=1)
    return Waveform(samples=resampled, sample_rate=int(target_rate))
