"""Short-time spectra, mel projection, and 8-bit dB quantization.

Conventions, fixed across the project:

- Frames start at sample 0 with no padding, so a signal of length L at
  window N and hop H yields floor((L - N) / H) + 1 frames.
- The transform is one-sided: bins 0 .. N/2 inclusive.
- Windows are periodic (DFT-even), which makes the Hann window satisfy
  constant overlap-add exactly at hop N/4.
- Mel filters are triangles with unit peak height, built from n_mels + 2
  points equally spaced on the mel scale between fmin and fmax.
- Decibels are relative to the matrix maximum and clipped to
  [floor_db, 0]; quantization maps that interval affinely onto 0..255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform

DEFAULT_N_FFT = 2048
DEFAULT_HOP = 512
DEFAULT_N_MELS = 256
DEFAULT_FLOOR_DB = -80.0

_DB_EPS = 1e-10


class ColaViolationError(ValueError):
    """Window/hop combination leaves gaps the inverse transform cannot fill."""


def window_samples(window: str, n: int) -> np.ndarray:
    """Periodic analysis window of length n. Known ids: 'hann', 'rectangular'."""
    if n <= 0:
        raise ValueError("window length must be positive")
    if window == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if window == "rectangular":
        return np.ones(n)
    raise ValueError(f"unknown window id {window!r}")


@dataclass
class ComplexSpectrogram:
    """One-sided short-time spectrum, shape (n_fft // 2 + 1, n_frames)."""

    values: np.ndarray
    window_len: int
    hop: int
    sample_rate: int
    window: str = "hann"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ValueError("spectrogram values must be 2-D (bins x frames)")
        if self.window_len <= 0 or self.hop <= 0 or self.sample_rate <= 0:
            raise ValueError("window_len, hop and sample_rate must be positive")
        if self.values.shape[0] != self.window_len // 2 + 1:
            raise ValueError(
                f"expected {self.window_len // 2 + 1} frequency rows for "
                f"window_len {self.window_len}, got {self.values.shape[0]}"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MagnitudeSpectrogram:
    """Nonnegative real spectrogram (amplitude or power), same grid as the complex one."""

    values: np.ndarray
    window_len: int
    hop: int
    sample_rate: int
    window: str = "hann"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("spectrogram values must be 2-D (bins x frames)")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("magnitude values must be finite and nonnegative")
        if self.window_len <= 0 or self.hop <= 0 or self.sample_rate <= 0:
            raise ValueError("window_len, hop and sample_rate must be positive")
        if self.values.shape[0] != self.window_len // 2 + 1:
            raise ValueError(
                f"expected {self.window_len // 2 + 1} frequency rows for "
                f"window_len {self.window_len}, got {self.values.shape[0]}"
            )


@dataclass
class FilterBank:
    """Mel filter matrix, shape (n_mels, n_fft // 2 + 1)."""

    weights: np.ndarray
    fmin: float
    fmax: float
    n_mels: int

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.n_mels:
            raise ValueError("weights must be 2-D with n_mels rows")
        if np.any(self.weights < 0):
            raise ValueError("filter weights must be nonnegative")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError("need 0 <= fmin < fmax")


@dataclass
class MelSpectrogram:
    """Mel-domain energies, shape (n_mels, n_frames)."""

    values: np.ndarray
    n_mels: int
    hop: int
    sample_rate: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.n_mels:
            raise ValueError("values must be 2-D with n_mels rows")
        if self.hop <= 0 or self.sample_rate <= 0:
            raise ValueError("hop and sample_rate must be positive")


def n_frames_for(n_samples: int, n_fft: int, hop: int) -> int:
    """Frame count for an unpadded transform starting at sample 0."""
    if n_samples < n_fft:
        raise ValueError(f"signal of {n_samples} samples is shorter than one window ({n_fft})")
    return (n_samples - n_fft) // hop + 1


def stft(w: Waveform, n_fft: int = DEFAULT_N_FFT, hop: int = DEFAULT_HOP,
         window: str = "hann") -> ComplexSpectrogram:
    """Short-time Fourier transform of mono audio.

    X(m, k) = sum_n x(n + m*hop) * win(n) * exp(-2j*pi*k*n/n_fft), collected
    column-per-frame into a (n_fft//2 + 1, n_frames) matrix.
    """
    if w.samples.ndim != 1:
        raise ValueError("stft expects mono audio; call to_mono first")
    if hop <= 0 or n_fft <= 0:
        raise ValueError("n_fft and hop must be positive")
    x = w.samples
    n_fr = n_frames_for(len(x), n_fft, hop)
    win = window_samples(window, n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[:: hop][:n_fr]
    spec = np.fft.rfft(frames * win, axis=1)
    return ComplexSpectrogram(values=spec.T, window_len=n_fft, hop=hop,
                              sample_rate=w.sample_rate, window=window)


def istft(spec: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse of stft.

    Each frame is inverse-transformed, multiplied by the analysis window
    again, overlap-added, and the sum is divided pointwise by the summed
    squared window.  Wherever that denominator is positive this inverts
    stft exactly; positions never covered by a window (possible only at
    the two boundary samples for end-tapered windows) come back as 0.
    """
    n_fft, hop = spec.window_len, spec.hop
    win = window_samples(spec.window, n_fft)
    frames = np.fft.irfft(spec.values.T, n=n_fft, axis=1)
    n_out = n_fft + (spec.n_frames - 1) * hop
    acc = np.zeros(n_out)
    wsum = np.zeros(n_out)
    win_sq = win * win
    for m in range(spec.n_frames):
        start = m * hop
        acc[start : start + n_fft] += frames[m] * win
        wsum[start : start + n_fft] += win_sq

    tiny = 1e-12 * max(wsum.max(), 1.0)
    dead = wsum <= tiny
    # A tapered window may zero out the very first/last sample; anything
    # else uncovered means the hop leaves real gaps.
    if np.any(dead[1:-1]):
        raise ColaViolationError(
            f"window {spec.window!r} with hop {hop} and length {n_fft} "
            "leaves uncovered samples"
        )
    out = np.where(dead, 0.0, acc / np.where(dead, 1.0, wsum))
    return Waveform(samples=out, sample_rate=spec.sample_rate)


def power(spec: ComplexSpectrogram) -> MagnitudeSpectrogram:
    """Squared-magnitude (power) spectrogram."""
    v = spec.values
    return MagnitudeSpectrogram(values=(v.real * v.real + v.imag * v.imag),
                                window_len=spec.window_len, hop=spec.hop,
                                sample_rate=spec.sample_rate, window=spec.window)


def hz_to_mel(f):
    """Map frequency in Hz to mel: 2595 * log10(1 + f / 700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    """Inverse of hz_to_mel: 700 * (10**(m / 2595) - 1)."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be nonnegative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def mel_filterbank(n_mels: int = DEFAULT_N_MELS, n_fft: int = DEFAULT_N_FFT,
                   sample_rate: int = 22050, fmin: float = 0.0,
                   fmax: float | None = None) -> FilterBank:
    """Triangular mel filterbank with unit peak height per filter.

    Centre frequencies are n_mels + 2 points equally spaced in mel between
    fmin and fmax (default sample_rate / 2).  Filter i rises linearly from
    point i to point i+1 and falls to point i+2, evaluated at the one-sided
    bin frequencies k * sample_rate / n_fft.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    if n_mels <= 0:
        raise ValueError("n_mels must be positive")
    if not 0 <= fmin < fmax:
        raise ValueError("need 0 <= fmin < fmax")
    if fmax > sample_rate / 2.0 + 1e-9:
        raise ValueError("fmax beyond Nyquist")

    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (sample_rate / n_fft)
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    lower = hz_pts[:-2][:, None]
    centre = hz_pts[1:-1][:, None]
    upper = hz_pts[2:][:, None]
    rise = (bin_hz[None, :] - lower) / (centre - lower)
    fall = (upper - bin_hz[None, :]) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rise, fall))
    return FilterBank(weights=weights, fmin=float(fmin), fmax=float(fmax), n_mels=n_mels)


def mel_project(mag: MagnitudeSpectrogram, fb: FilterBank) -> MelSpectrogram:
    """Project a (power) spectrogram onto the filterbank: values = W @ Y."""
    if fb.weights.shape[1] != mag.values.shape[0]:
        raise ValueError(
            f"filterbank expects {fb.weights.shape[1]} frequency rows, "
            f"spectrogram has {mag.values.shape[0]}"
        )
    return MelSpectrogram(values=fb.weights @ mag.values, n_mels=fb.n_mels,
                          hop=mag.hop, sample_rate=mag.sample_rate)


def _values_of(m) -> np.ndarray:
    return m.values if hasattr(m, "values") else np.asarray(m, dtype=np.float64)


def power_to_db(mel, floor_db: float = DEFAULT_FLOOR_DB) -> np.ndarray:
    """Decibels relative to the matrix maximum, clipped to [floor_db, 0].

    d = 10 * log10(max(v, 1e-10) / max(v_max, 1e-10)), then clipped.  An
    all-zero matrix maps to all zeros dB (everything sits at the reference).
    """
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    v = _values_of(mel)
    ref = max(float(v.max()) if v.size else 0.0, _DB_EPS)
    db = 10.0 * np.log10(np.maximum(v, _DB_EPS) / ref)
    return np.clip(db, floor_db, 0.0)


def db_to_power(db, floor_db: float = DEFAULT_FLOOR_DB) -> np.ndarray:
    """Invert power_to_db up to the lost reference scale: 10**(d / 10)."""
    d = np.asarray(db, dtype=np.float64)
    return 10.0 ** (d / 10.0)


def quantize(db: np.ndarray, floor_db: float = DEFAULT_FLOOR_DB) -> np.ndarray:
    """Affine map of [floor_db, 0] dB onto uint8 levels 0..255.

    level = round((1 - d / floor_db) * 255) with round-half-to-even, so
    floor_db maps to 0 and 0 dB maps to 255.
    """
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    d = np.clip(np.asarray(db, dtype=np.float64), floor_db, 0.0)
    levels = np.rint((1.0 - d / floor_db) * 255.0)
    return np.clip(levels, 0, 255).astype(np.uint8)


def dequantize(levels: np.ndarray, floor_db: float = DEFAULT_FLOOR_DB) -> np.ndarray:
    """Map uint8 levels back to dB: d = floor_db * (1 - level / 255)."""
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    q = np.asarray(levels)
    if q.dtype != np.uint8:
        raise ValueError("expected uint8 levels")
    # + 0.0 turns the level-255 result from -0.0 into 0.0
    return floor_db * (1.0 - q.astype(np.float64) / 255.0) + 0.0
