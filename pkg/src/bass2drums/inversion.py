"""Back from mel images to audio: filterbank inversion and phase recovery.

The forward pipeline throws away two things the ear needs: linear-frequency
detail (mel projection) and phase (magnitude spectrograms).  This module
recovers both approximately.  Filterbank inversion solves the nonnegative
least-squares problem min_{Y >= 0} ||Mel - W @ Y||_F^2 by projected gradient
descent with an exact line search on the quadratic plus backtracking after
the projection.  Phase comes from Griffin-Lim alternating projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio_io import Waveform
from .spectral import (
    ComplexSpectrogram,
    FilterBank,
    MagnitudeSpectrogram,
    MelSpectrogram,
    DEFAULT_FLOOR_DB,
    db_to_power,
    dequantize,
    istft,
    stft,
)


@dataclass
class InversionConfig:
    """Knobs for both inversion stages.

    max_iters / tol / step_size drive the filterbank inversion; gl_iters is
    the number of Griffin-Lim projection rounds.  tol is the threshold on
    per-iteration improvement of the relative residual.
    """

    max_iters: int = 500
    step_size: float = 1.0
    tol: float = 1e-5
    gl_iters: int = 60

    def __post_init__(self) -> None:
        if self.max_iters <= 0 or self.gl_iters < 0:
            raise ValueError("iteration counts must be positive")
        if self.step_size <= 0 or self.tol < 0:
            raise ValueError("step_size must be positive and tol nonnegative")


def mel_to_linear(mel: MelSpectrogram, fb: FilterBank,
                  cfg: InversionConfig | None = None,
                  window: str = "hann") -> tuple[MagnitudeSpectrogram, float]:
    """Invert the mel projection: find Y >= 0 minimizing ||M - W @ Y||_F.

    Starts from Y0 = W.T @ M and iterates projected gradient steps.  Each
    step uses the exact minimizer of the quadratic along the gradient ray,
    then halves the step until the projected iterate does not increase the
    objective, so the residual sequence is monotone nonincreasing.

    Returns the power-scale estimate together with the final relative
    residual ||M - W @ Y||_F / ||M||_F (0.0 for an all-zero target).
    """
    cfg = cfg or InversionConfig()
    W = fb.weights
    M = mel.values
    if W.shape[0] != M.shape[0]:
        raise ValueError(
            f"filterbank has {W.shape[0]} filters but mel matrix has {M.shape[0]} rows"
        )

    m_norm = float(np.linalg.norm(M))
    Y = W.T @ M
    resid = M - W @ Y
    obj = float((resid * resid).sum())

    for _ in range(cfg.max_iters):
        if obj == 0.0:
            break
        grad = -2.0 * (W.T @ resid)
        gg = float((grad * grad).sum())
        if gg == 0.0:
            break
        # Unconstrained minimizer along -grad of the quadratic objective:
        # alpha* = g.g / (2 ||W g||^2).
        wg = W @ grad
        denom = 2.0 * float((wg * wg).sum())
        alpha = gg / denom if denom > 0.0 else cfg.step_size
        if not np.isfinite(alpha):
            raise FloatingPointError("non-finite step size in filterbank inversion")

        prev_obj = obj
        for _halving in range(60):
            cand = np.maximum(Y - alpha * grad, 0.0)
            resid_cand = M - W @ cand
            obj_cand = float((resid_cand * resid_cand).sum())
            if obj_cand <= prev_obj:
                break
            alpha *= 0.5
        else:
            break  # projection blocks all progress along this gradient
        if not np.isfinite(obj_cand):
            raise FloatingPointError("objective diverged in filterbank inversion")
        if obj_cand > prev_obj:
            break

        Y, resid, obj = cand, resid_cand, obj_cand
        if m_norm > 0.0:
            improvement = (np.sqrt(prev_obj) - np.sqrt(obj)) / m_norm
            if improvement < cfg.tol:
                break

    residual = float(np.sqrt(obj) / m_norm) if m_norm > 0.0 else 0.0
    n_fft = (W.shape[1] - 1) * 2
    est = MagnitudeSpectrogram(values=Y, window_len=n_fft, hop=mel.hop,
                               sample_rate=mel.sample_rate, window=window)
    return est, residual


def spectral_convergence(mag: MagnitudeSpectrogram, w: Waveform) -> float:
    """|| |stft(w)| - A ||_F / ||A||_F for amplitude target A."""
    rebuilt = np.abs(stft(w, mag.window_len, mag.hop, mag.window).values)
    denom = float(np.linalg.norm(mag.values))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(rebuilt - mag.values) / denom)


def griffin_lim(mag: MagnitudeSpectrogram, cfg: InversionConfig | None = None) -> Waveform:
    """Recover a waveform whose transform magnitude approximates mag.

    mag holds amplitudes (not power).  Phase starts at zero everywhere;
    each round goes signal-domain and back (istft then stft) and replaces
    the magnitude with the target, keeping only the phase.  The spectral
    convergence error of the iterates is nonincreasing.
    """
    cfg = cfg or InversionConfig()
    A = mag.values
    spec = ComplexSpectrogram(values=A.astype(np.complex128),
                              window_len=mag.window_len, hop=mag.hop,
                              sample_rate=mag.sample_rate, window=mag.window)
    for _ in range(cfg.gl_iters):
        x = istft(spec)
        rebuilt = stft(x, mag.window_len, mag.hop, mag.window).values
        norm = np.abs(rebuilt)
        phase = np.where(norm > 1e-30, rebuilt / np.where(norm > 1e-30, norm, 1.0), 1.0)
        spec = ComplexSpectrogram(values=A * phase, window_len=mag.window_len,
                                  hop=mag.hop, sample_rate=mag.sample_rate,
                                  window=mag.window)
    return istft(spec)


def mel_chunks_to_waveform(chunks: Sequence, fb: FilterBank,
                           cfg: InversionConfig | None = None, *,
                           overlap: int = 50,
                           floor_db: float = DEFAULT_FLOOR_DB,
                           hop: int = 512,
                           sample_rate: int = 22050,
                           window: str = "hann") -> Waveform:
    """Full decode: quantized mel chunks -> assembled image -> audio.

    Assembles the chunk sequence (crossfading overlaps), dequantizes to dB,
    re-exponentiates to power, inverts the filterbank, takes amplitudes, and
    runs Griffin-Lim.
    """
    from .dataset import assemble  # local import keeps module layering acyclic

    if not chunks:
        raise ValueError("no chunks to decode")
    cfg = cfg or InversionConfig()
    img = assemble(list(chunks), overlap=overlap)
    db = dequantize(img, floor_db=floor_db)
    mel = MelSpectrogram(values=db_to_power(db, floor_db=floor_db),
                         n_mels=img.shape[0], hop=hop, sample_rate=sample_rate)
    est_power, _residual = mel_to_linear(mel, fb, cfg, window=window)
    amplitude = MagnitudeSpectrogram(values=np.sqrt(est_power.values),
                                     window_len=est_power.window_len, hop=hop,
                                     sample_rate=sample_rate, window=window)
    return griffin_lim(amplitude, cfg)
