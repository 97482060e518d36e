"""Bass-to-drums accompaniment synthesis on quantized mel spectrogram images.

Pipeline: stem WAVs are resampled and short-time transformed, projected onto a
mel filterbank, converted to clipped decibels, quantized to 8-bit images, and
cut into fixed-width chunks.  Generative image-to-image models (CycleGAN or
Pix2Pix, built on an internal numpy autograd engine) translate bass chunks
into drum chunks.  Generated chunks are reassembled, the mel projection is
inverted by projected gradient descent, and phase is recovered with
Griffin-Lim to yield audio.  An evaluation stage scores generated material
with signal-correlation features, embedding-density features, and a logistic
grade classifier.
"""

__version__ = "0.1.0"

from . import audio_io, spectral, inversion, dataset, autograd, models, evaluation

__all__ = [
    "audio_io",
    "spectral",
    "inversion",
    "dataset",
    "autograd",
    "models",
    "evaluation",
    "__version__",
]
