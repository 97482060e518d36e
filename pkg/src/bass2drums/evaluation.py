"""Scoring generated material: signal features, embedding statistics, grades.

Three feature families feed a multinomial logistic classifier that buckets
samples into four quality grades:

- Correlation features: per-row sums of column-centered products between
  the original and generated images (a short-time intelligibility-style
  measure on the mel grid).
- Density features: log-density of a generated chunk's embedding under a
  Gaussian fitted to embeddings of real material.  Embeddings are spatial
  averages of discriminator activations, and the same Gaussians support a
  Frechet distance between the real and generated embedding clouds.
- Human annotations, when available, carry quality/contamination/
  credibility/time integer grades (0..9) whose inter-rater agreement is
  summarized with a Pearson matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .dataset import Chunk, chunk_to_unit

log = logging.getLogger(__name__)


class GradeBucket(IntEnum):
    """Ordered grade ranges; values sort from worst to best."""

    B0_3 = 0
    B4_5 = 1
    B6_7 = 2
    B8_9 = 3

    @property
    def label(self) -> str:
        return {0: "0-3", 1: "4-5", 2: "6-7", 3: "8-9"}[int(self)]


def grade_bucket(mean_grade: float) -> GradeBucket:
    """Round a mean grade half-to-even and map into its bucket."""
    if not np.isfinite(mean_grade) or not 0.0 <= mean_grade <= 9.0:
        raise ValueError(f"mean grade must lie in [0, 9], got {mean_grade}")
    g = int(np.rint(mean_grade))
    if g <= 3:
        return GradeBucket.B0_3
    if g <= 5:
        return GradeBucket.B4_5
    if g <= 7:
        return GradeBucket.B6_7
    return GradeBucket.B8_9


# ---------------------------------------------------------------------------
# Annotations


ANNOTATION_DIMENSIONS = ("quality", "contamination", "credibility", "time")


@dataclass
class Annotation:
    sample_id: str
    rater_id: str
    quality: int
    contamination: int
    credibility: int
    time: int

    def __post_init__(self) -> None:
        for dim in ANNOTATION_DIMENSIONS:
            v = getattr(self, dim)
            if not isinstance(v, (int, np.integer)) or not 0 <= v <= 9:
                raise ValueError(f"{dim} grade must be an integer in [0, 9], got {v!r}")


def load_annotations(path: str) -> list[Annotation]:
    """Read tab-separated annotation records:
    sample_id, rater_id, quality, contamination, credibility, time."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            out.append(Annotation(parts[0], parts[1], *(int(p) for p in parts[2:])))
    return out


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Plain Pearson correlation; constant inputs are an error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("pearson needs two equal-length 1-D arrays of size >= 2")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom == 0.0:
        raise ValueError("pearson undefined for constant input")
    return float(np.clip((ac * bc).sum() / denom, -1.0, 1.0))


def rater_pearson_matrix(annotations: Sequence[Annotation],
                         dimension: str = "quality") -> tuple[list[str], np.ndarray]:
    """Pairwise rater agreement over samples every pair graded in common."""
    if dimension not in ANNOTATION_DIMENSIONS:
        raise ValueError(f"unknown dimension {dimension!r}")
    by_rater: dict[str, dict[str, int]] = {}
    for a in annotations:
        by_rater.setdefault(a.rater_id, {})[a.sample_id] = getattr(a, dimension)
    raters = sorted(by_rater)
    n = len(raters)
    if n == 0:
        raise ValueError("no annotations")
    matrix = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            shared = sorted(set(by_rater[raters[i]]) & set(by_rater[raters[j]]))
            if len(shared) < 2:
                raise ValueError(f"raters {raters[i]} and {raters[j]} share "
                                 f"{len(shared)} samples, need >= 2")
            gi = np.array([by_rater[raters[i]][s] for s in shared], dtype=np.float64)
            gj = np.array([by_rater[raters[j]][s] for s in shared], dtype=np.float64)
            matrix[i, j] = matrix[j, i] = pearson(gi, gj)
    return raters, matrix


# ---------------------------------------------------------------------------
# Correlation features


def stoi_features(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row sums of column-centered products.

    Columns (time frames) are centered to their own mean across rows; the
    feature for row i is sum_t xc[i, t] * yc[i, t].  Identical inputs give
    nonnegative features.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("stoi_features needs two equal-shape 2-D matrices")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("empty feature input")
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    return (xc * yc).sum(axis=1)


# ---------------------------------------------------------------------------
# Embeddings, Gaussians, Frechet distance


class Embedder:
    """Spatially pooled discriminator activations as fixed-length vectors.

    Wraps a trained PatchDiscriminator; embed() averages the activation map
    of the configured block(s) over space, concatenating if several blocks
    are requested.  Refuses to run with an untrained discriminator because
    random projections make densities meaningless.
    """

    def __init__(self, discriminator, trained_steps: int,
                 blocks: tuple[int, ...] | None = None):
        if trained_steps <= 0:
            raise ValueError("embedder needs a trained discriminator "
                             "(trained_steps must be positive)")
        self.discriminator = discriminator
        self.trained_steps = int(trained_steps)
        self.blocks = blocks if blocks is not None else (discriminator.embed_block,)
        if not self.blocks:
            raise ValueError("at least one block required")

    @property
    def dim(self) -> int:
        total = 0
        for b in self.blocks:
            total += self.discriminator.convs[b].w.data.shape[0]
        return total

    def embed(self, pixels: np.ndarray | Chunk) -> np.ndarray:
        if isinstance(pixels, Chunk):
            pixels = pixels.pixels
        x = Tensor(chunk_to_unit(pixels)[None, None, :, :])
        parts = []
        for b in self.blocks:
            feats = self.discriminator.features(x, b)
            parts.append(feats.data[0].mean(axis=(1, 2)))
        return np.concatenate(parts).astype(np.float64)

    def embed_many(self, items: Sequence[np.ndarray | Chunk]) -> np.ndarray:
        if not len(items):
            raise ValueError("nothing to embed")
        return np.stack([self.embed(p) for p in items], axis=0)


def save_embeddings(path: str, embeddings: np.ndarray) -> None:
    """Store an (n, d) embedding matrix as a standalone .npy file."""
    np.save(path, np.asarray(embeddings, dtype=np.float64))


def load_embeddings(path: str) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected an (n, d) embedding matrix")
    return arr.astype(np.float64)


@dataclass
class GaussianModel:
    """Mean and ridge-stabilized covariance of an embedding cloud."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ValueError("mean must be (d,), cov must be (d, d)")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")

    def log_density(self, e: np.ndarray) -> float:
        """Gaussian log-density of one embedding vector."""
        e = np.asarray(e, dtype=np.float64)
        if e.shape != self.mean.shape:
            raise ValueError(f"embedding has shape {e.shape}, model wants "
                             f"{self.mean.shape}")
        chol = np.linalg.cholesky(self.cov)
        diff = e - self.mean
        sol = np.linalg.solve(chol, diff)
        maha = float(sol @ sol)
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        d = self.mean.shape[0]
        return -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))


def fit_gaussian(embeddings: np.ndarray, ridge: float = 1e-6) -> GaussianModel:
    """Sample mean and covariance (ddof=1) plus ridge * identity."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError("need at least 2 embeddings to fit a Gaussian")
    mean = e.mean(axis=0)
    centered = e - mean
    cov = (centered.T @ centered) / (e.shape[0] - 1)
    cov += ridge * np.eye(e.shape[1])
    return GaussianModel(mean=mean, cov=cov)


def frechet_distance(a: GaussianModel, b: GaussianModel) -> float:
    """||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2).

    Matrix square roots go through symmetric eigendecompositions with
    negative eigenvalues clamped to zero, and the result is clamped to be
    nonnegative, so fid(g, g) is exactly 0 up to float round-off.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("Gaussians live in different dimensions")
    diff = a.mean - b.mean

    vals, vecs = np.linalg.eigh(a.cov)
    root_a = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    inner = root_a @ b.cov @ root_a
    inner = 0.5 * (inner + inner.T)
    ivals = np.linalg.eigvalsh(inner)
    tr_sqrt = float(np.sqrt(np.maximum(ivals, 0.0)).sum())

    fid = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_sqrt
    return max(fid, 0.0)


# ---------------------------------------------------------------------------
# Logistic grade model


@dataclass
class LogisticModel:
    """Multinomial logistic over standardized features, one class per bucket."""

    weights: np.ndarray  # (4, p)
    bias: np.ndarray  # (4,)
    feature_mean: np.ndarray  # (p,)
    feature_std: np.ndarray  # (p,)
    l2: float
    loss_history: list = field(default_factory=list)

    def _standardize(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.ndim == 1:
            f = f[None, :]
        if f.shape[1] != self.feature_mean.shape[0]:
            raise ValueError(f"model expects {self.feature_mean.shape[0]} features, "
                             f"got {f.shape[1]}")
        return (f - self.feature_mean) / self.feature_std

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = self._standardize(features)
        logits = z @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Bucket values (ints 0..3), one per row."""
        return self.predict_proba(features).argmax(axis=1)


def _softmax_loss_grad(z: np.ndarray, onehot: np.ndarray, w: np.ndarray,
                       b: np.ndarray, l2: float):
    n = z.shape[0]
    logits = z @ w.T + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    denom = exps.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = -(onehot * log_probs).sum() / n + 0.5 * l2 * float((w * w).sum())
    p = exps / denom
    delta = (p - onehot) / n
    gw = delta.T @ z + l2 * w
    gb = delta.sum(axis=0)
    return loss, gw, gb


def fit_logistic(features: np.ndarray, labels: Sequence, l2: float = 1e-3,
                 max_iters: int = 10000, tol: float = 1e-6) -> LogisticModel:
    """Full-batch gradient descent on the regularized multinomial loss.

    The step size is 1/L for the curvature bound
    L = sigma_max(Z)^2 / (2 n) + l2, halved whenever a step would increase
    the loss (which the convex objective makes rare).  Training stops when
    the gradient norm drops below tol or after max_iters passes.  The label
    order never matters beyond float round-off because every update is a
    deterministic function of class-wise sums.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("features must be a nonempty (n, p) matrix")
    y = np.array([int(v) for v in labels], dtype=np.int64)
    if y.shape[0] != x.shape[0]:
        raise ValueError("feature/label count mismatch")
    if np.any(y < 0) or np.any(y >= len(GradeBucket)):
        raise ValueError("labels must be GradeBucket values")
    if np.unique(y).size < 2:
        raise ValueError("labels are degenerate (a single class)")
    if l2 < 0:
        raise ValueError("l2 must be nonnegative")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    z = (x - mean) / std

    n, p = z.shape
    k = len(GradeBucket)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    sigma_max = float(np.linalg.svd(z, compute_uv=False)[0]) if min(n, p) else 0.0
    lipschitz = sigma_max * sigma_max / (2.0 * n) + l2
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    w = np.zeros((k, p))
    b = np.zeros(k)
    history: list[float] = []
    loss, gw, gb = _softmax_loss_grad(z, onehot, w, b, l2)
    for _ in range(max_iters):
        history.append(loss)
        gnorm = np.sqrt(float((gw * gw).sum()) + float((gb * gb).sum()))
        if gnorm < tol:
            break
        alpha = step
        for _halving in range(50):
            w_new = w - alpha * gw
            b_new = b - alpha * gb
            loss_new, gw_new, gb_new = _softmax_loss_grad(z, onehot, w_new, b_new, l2)
            if loss_new <= loss:
                break
            alpha *= 0.5
        else:
            break
        w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
    history.append(loss)

    return LogisticModel(weights=w, bias=b, feature_mean=mean, feature_std=std,
                         l2=l2, loss_history=history)


def accuracy(model: LogisticModel, features: np.ndarray, labels: Sequence) -> float:
    y = np.array([int(v) for v in labels], dtype=np.int64)
    return float((model.predict(features) == y).mean())


# ---------------------------------------------------------------------------
# Sample scoring


@dataclass
class SampleScore:
    song_id: str
    offset: int
    stoi_mean: float
    density: float
    bucket: GradeBucket


def pair_features(original: np.ndarray | Chunk, generated: np.ndarray | Chunk,
                  embedder: Embedder, gaussian: GaussianModel) -> np.ndarray:
    """The feature vector the grade model consumes for one sample pair:
    row-correlation features of the pair plus the generated embedding's
    log-density under the real-material Gaussian."""
    orig = original.pixels if isinstance(original, Chunk) else original
    gen = generated.pixels if isinstance(generated, Chunk) else generated
    corr = stoi_features(chunk_to_unit(orig).astype(np.float64),
                         chunk_to_unit(gen).astype(np.float64))
    density = gaussian.log_density(embedder.embed(gen))
    return np.concatenate([corr, [density]])


def score_samples(originals: Sequence[Chunk], generated: Sequence[Chunk],
                  embedder: Embedder, gaussian: GaussianModel,
                  model: LogisticModel) -> list[SampleScore]:
    """Grade aligned (original, generated) chunk pairs."""
    if len(originals) != len(generated):
        raise ValueError("originals and generated must be aligned")
    if not originals:
        raise ValueError("nothing to score")
    scores = []
    for orig, gen in zip(originals, generated):
        if (orig.song_id, orig.offset) != (gen.song_id, gen.offset):
            raise ValueError(f"pair misaligned: {orig.song_id}@{orig.offset} vs "
                             f"{gen.song_id}@{gen.offset}")
        feats = pair_features(orig, gen, embedder, gaussian)
        bucket = GradeBucket(int(model.predict(feats[None, :])[0]))
        scores.append(SampleScore(song_id=orig.song_id, offset=orig.offset,
                                  stoi_mean=float(feats[:-1].mean()),
                                  density=float(feats[-1]), bucket=bucket))
    return scores


def bucket_histogram(scores: Sequence[SampleScore]) -> dict[GradeBucket, int]:
    hist = {bucket: 0 for bucket in GradeBucket}
    for s in scores:
        hist[s.bucket] += 1
    return hist


def write_score_table(scores: Sequence[SampleScore], path: str) -> None:
    """Delimited per-sample score table (deterministic formatting)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("song_id\toffset\tstoi_mean\tdensity\tbucket\n")
        for s in scores:
            fh.write(f"{s.song_id}\t{s.offset}\t{s.stoi_mean!r}\t"
                     f"{s.density!r}\t{s.bucket.label}\n")
