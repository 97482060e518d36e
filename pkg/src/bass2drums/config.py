"""Run configuration: one flat record of every knob, with named presets.

Config files are plain ``key=value`` lines (``#`` comments and blank lines
ignored).  A ``preset`` key selects a baseline; explicit keys then override
it, and command-line flags override both.  Parsing is strict: an unknown key
or an unparsable value raises ConfigError, which the command line surfaces
as exit code 2.

Presets:

- ``paper``: full-scale geometry (256-mel images, 256-wide chunks with
  overlap 50, 9 residual blocks at 64 base channels).
- ``desk``: laptop-scale geometry for tests and smoke runs (64-mel images,
  64-wide chunks with overlap 12, 3 residual blocks at 16 base channels).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """Invalid configuration input (unknown key, bad value, bad preset)."""


@dataclass
class RunConfig:
    """Every pipeline knob in one flat, serializable record."""

    preset: str = "paper"
    # signal front end
    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 256
    floor_db: float = -80.0
    window: str = "hann"
    # chunking
    chunk_width: int = 256
    chunk_overlap: int = 50
    # model architecture
    n_res_blocks: int = 9
    base_channels: int = 64
    disc_layers: int = 3
    unet_depth: int = 7
    # training
    gan_mode: str = "lsgan"
    lambda_cycle: float = 10.0
    lambda_identity: float = 0.0
    lambda_l1: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 1
    max_steps: int = 0
    pool_size: int = 50
    seed: int = 0
    log_every: int = 100
    # inversion
    gl_iters: int = 60
    inv_max_iters: int = 500
    inv_tol: float = 1e-5
    # dataset
    train_count: int = -1

    def __post_init__(self) -> None:
        if self.sample_rate <= 0 or self.n_fft <= 0 or self.hop <= 0:
            raise ConfigError("sample_rate, n_fft and hop must be positive")
        if self.hop > self.n_fft:
            raise ConfigError("hop must not exceed n_fft")
        if self.window not in ("hann", "rectangular"):
            raise ConfigError(f"unknown window {self.window!r}")
        if self.n_mels <= 0 or self.chunk_width <= 0:
            raise ConfigError("n_mels and chunk_width must be positive")
        if self.floor_db >= 0:
            raise ConfigError("floor_db must be negative")
        if not 0 <= self.chunk_overlap < self.chunk_width:
            raise ConfigError("need 0 <= chunk_overlap < chunk_width")
        if self.gan_mode not in ("lsgan", "cross_entropy"):
            raise ConfigError(f"unknown gan_mode {self.gan_mode!r}")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("lr must be positive and betas in [0, 1)")
        if self.pool_size < 0:
            raise ConfigError("pool_size must be nonnegative")

    def fingerprint(self) -> dict[str, str]:
        """The spectral identity of a chunk store; stores with different
        fingerprints are not interchangeable."""
        return {
            "sample_rate": str(self.sample_rate),
            "n_fft": str(self.n_fft),
            "hop": str(self.hop),
            "n_mels": str(self.n_mels),
            "floor_db": repr(self.floor_db),
            "chunk_width": str(self.chunk_width),
            "chunk_overlap": str(self.chunk_overlap),
        }


_PRESETS: dict[str, dict[str, object]] = {
    "paper": {},
    "desk": {
        "n_mels": 64,
        "chunk_width": 64,
        "chunk_overlap": 12,
        "n_res_blocks": 3,
        "base_channels": 16,
        "unet_depth": 4,
    },
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    ftype = _FIELDS[key].type
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat key=value lines into a raw string map (strict keys)."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        items[key] = value
    return items


def build_config(items: dict[str, str] | None = None,
                 overrides: dict[str, str] | None = None) -> RunConfig:
    """Assemble a RunConfig: preset baseline, then file items, then overrides."""
    items = dict(items or {})
    overrides = dict(overrides or {})
    for key in overrides:
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
    merged_raw = {**items, **overrides}

    preset = merged_raw.pop("preset", "paper")
    if preset not in _PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {sorted(_PRESETS)})")

    values: dict[str, object] = dict(_PRESETS[preset])
    for key, raw in merged_raw.items():
        values[key] = _convert(key, raw)
    return RunConfig(preset=preset, **values)


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig as key=value lines; parses back to an equal record."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name}={rendered}")
    return "\n".join(lines) + "\n"


def load_config(path: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a config file and apply overrides on top."""
    with open(path, "r", encoding="utf-8") as fh:
        return build_config(parse_config_text(fh.read()), overrides)
