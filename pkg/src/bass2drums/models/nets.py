"""Network architectures for chunk-to-chunk translation.

Three nets, all operating on (N, 1, size, size) images in [-1, 1]:

- ResnetGenerator: wide-kernel head, two stride-2 downsampling stages,
  a stack of residual blocks at the bottleneck, two transposed-conv
  upsampling stages, wide-kernel tail into tanh.
- PatchDiscriminator: stacked stride-2 4x4 convolutions with leaky ReLU,
  ending in a 1-channel logit map whose receptive field is 70 pixels.
- UNetGenerator: encoder/decoder with channel-concatenated skip paths.

All stride-2 stages (down and up) use 4x4 kernels with padding 1, which
halve or double spatial size exactly; the strict shape arithmetic in the
conv ops rejects anything that does not divide.  Weights initialize from
N(0, 0.02^2); norm scales start at 1, shifts and biases at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import Tensor, concat, conv2d, conv_transpose2d, instance_norm
from ..autograd import tensor as T
from ..autograd.tensor import get_default_dtype

WEIGHT_STD = 0.02
LEAKY_SLOPE = 0.2


def receptive_field(layer_specs: list[tuple[int, int]]) -> int:
    """Receptive field of stacked convs given (kernel, stride) per layer."""
    r = 1
    for k, s in reversed(layer_specs):
        r = r * s + (k - s)
    return r


class Module:
    """Minimal parameter container with named children."""

    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def own_params(self) -> list[tuple[str, Tensor]]:
        return []

    def params_dict(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, t in self.own_params():
            out[prefix + name] = t
        for name, child in self.children():
            out.update(child.params_dict(f"{prefix}{name}."))
        return out

    def set_trainable(self, flag: bool) -> None:
        for p in self.params_dict().values():
            p.requires_grad = bool(flag)

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        dtype = get_default_dtype()
        for name, p in self.params_dict().items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint is missing parameter {key!r}")
            arr = arrays[key]
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {key!r}: checkpoint shape {arr.shape} "
                                 f"!= model shape {p.data.shape}")
            p.data = arr.astype(dtype, copy=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int, k: int,
                 stride: int = 1, padding: int = 0, pad_mode: str = "zeros"):
        dtype = get_default_dtype()
        self.stride, self.padding, self.pad_mode = stride, padding, pad_mode
        self.w = Tensor(rng.normal(0.0, WEIGHT_STD, (out_ch, in_ch, k, k)).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def own_params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride,
                      padding=self.padding, pad_mode=self.pad_mode)


class ConvTranspose2d(Module):
    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int, k: int,
                 stride: int = 2, padding: int = 0):
        dtype = get_default_dtype()
        self.stride, self.padding = stride, padding
        self.w = Tensor(rng.normal(0.0, WEIGHT_STD, (in_ch, out_ch, k, k)).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def own_params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.w, self.b, stride=self.stride,
                                padding=self.padding)


class InstanceNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def forward(self, x: Tensor) -> Tensor:
        return instance_norm(x, self.gamma, self.beta, eps=self.eps)


# ---------------------------------------------------------------------------


@dataclass
class GeneratorConfig:
    in_channels: int = 1
    out_channels: int = 1
    base_channels: int = 64
    n_res_blocks: int = 9
    n_down: int = 2
    image_size: int = 256

    def __post_init__(self) -> None:
        if min(self.in_channels, self.out_channels, self.base_channels,
               self.n_res_blocks, self.n_down, self.image_size) <= 0:
            raise ValueError("all generator dimensions must be positive")
        factor = 2 ** self.n_down
        if self.image_size % factor:
            raise ValueError(f"image_size {self.image_size} not divisible by {factor}")
        if self.image_size // factor < 2:
            raise ValueError("bottleneck would be smaller than 2x2")

    @classmethod
    def desk(cls) -> "GeneratorConfig":
        return cls(base_channels=16, n_res_blocks=3, image_size=64)

    def to_meta(self) -> dict:
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "base_channels": self.base_channels, "n_res_blocks": self.n_res_blocks,
                "n_down": self.n_down, "image_size": self.image_size}


class ResBlock(Module):
    """Two reflect-padded 3x3 convs with norms; input added back to output."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.conv1 = Conv2d(rng, channels, channels, 3, 1, 1, "reflect")
        self.norm1 = InstanceNorm(channels)
        self.conv2 = Conv2d(rng, channels, channels, 3, 1, 1, "reflect")
        self.norm2 = InstanceNorm(channels)

    def children(self):
        return [("conv1", self.conv1), ("norm1", self.norm1),
                ("conv2", self.conv2), ("norm2", self.norm2)]

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return T.add(x, h)


class ResnetGenerator(Module):
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        ch = cfg.base_channels
        self.head = Conv2d(rng, cfg.in_channels, ch, 7, 1, 3, "reflect")
        self.head_norm = InstanceNorm(ch)
        self.downs: list[tuple[Conv2d, InstanceNorm]] = []
        for i in range(cfg.n_down):
            self.downs.append((Conv2d(rng, ch, ch * 2, 4, 2, 1), InstanceNorm(ch * 2)))
            ch *= 2
        self.blocks = [ResBlock(rng, ch) for _ in range(cfg.n_res_blocks)]
        self.ups: list[tuple[ConvTranspose2d, InstanceNorm]] = []
        for i in range(cfg.n_down):
            self.ups.append((ConvTranspose2d(rng, ch, ch // 2, 4, 2, 1),
                             InstanceNorm(ch // 2)))
            ch //= 2
        self.tail = Conv2d(rng, ch, cfg.out_channels, 7, 1, 3, "reflect")

    def children(self):
        out = [("head", self.head), ("head_norm", self.head_norm)]
        for i, (conv, norm) in enumerate(self.downs):
            out += [(f"down{i}", conv), (f"down{i}_norm", norm)]
        for i, block in enumerate(self.blocks):
            out.append((f"res{i}", block))
        for i, (conv, norm) in enumerate(self.ups):
            out += [(f"up{i}", conv), (f"up{i}_norm", norm)]
        out.append(("tail", self.tail))
        return out

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.head_norm(self.head(x)))
        for conv, norm in self.downs:
            h = T.relu(norm(conv(h)))
        for block in self.blocks:
            h = block(h)
        for convt, norm in self.ups:
            h = T.relu(norm(convt(h)))
        return T.tanh(self.tail(h))


# ---------------------------------------------------------------------------


@dataclass
class DiscriminatorConfig:
    in_channels: int = 1
    base_channels: int = 64
    n_layers: int = 3
    image_size: int = 256

    def __post_init__(self) -> None:
        if min(self.in_channels, self.base_channels, self.n_layers,
               self.image_size) <= 0:
            raise ValueError("all discriminator dimensions must be positive")
        if self.image_size % (2 ** self.n_layers):
            raise ValueError(f"image_size {self.image_size} not divisible "
                             f"by {2 ** self.n_layers}")

    @classmethod
    def desk(cls) -> "DiscriminatorConfig":
        return cls(base_channels=16, image_size=64)

    def to_meta(self) -> dict:
        return {"in_channels": self.in_channels, "base_channels": self.base_channels,
                "n_layers": self.n_layers, "image_size": self.image_size}


class PatchDiscriminator(Module):
    """Stride-2 conv stack scoring overlapping patches with one logit each.

    Layer plan for n_layers=3 (channel multipliers of base): 1x -> 2x -> 4x
    stride 2, then 8x stride 1, then the 1-channel logit map, all 4x4
    kernels with padding 1.  Every conv except the first and last is
    followed by instance norm; activations are leaky ReLU (slope 0.2).
    """

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        b = cfg.base_channels
        self.convs: list[Conv2d] = [Conv2d(rng, cfg.in_channels, b, 4, 2, 1)]
        self.norms: list[InstanceNorm | None] = [None]
        ch = b
        for _ in range(1, cfg.n_layers):
            nxt = min(ch * 2, 8 * b)
            self.convs.append(Conv2d(rng, ch, nxt, 4, 2, 1))
            self.norms.append(InstanceNorm(nxt))
            ch = nxt
        nxt = min(ch * 2, 8 * b)
        self.convs.append(Conv2d(rng, ch, nxt, 4, 1, 1))
        self.norms.append(InstanceNorm(nxt))
        ch = nxt
        self.final = Conv2d(rng, ch, 1, 4, 1, 1)
        # last stride-2 block: where embeddings are pooled from
        self.embed_block = cfg.n_layers - 1
        self.embed_dim = self.convs[self.embed_block].w.data.shape[0]

    def layer_specs(self) -> list[tuple[int, int]]:
        specs = [(4, c.stride) for c in self.convs]
        specs.append((4, 1))
        return specs

    def children(self):
        out = []
        for i, conv in enumerate(self.convs):
            out.append((f"conv{i}", conv))
            if self.norms[i] is not None:
                out.append((f"norm{i}", self.norms[i]))
        out.append(("final", self.final))
        return out

    def forward(self, x: Tensor) -> Tensor:
        h, _ = self._run(x, None)
        return h

    def features(self, x: Tensor, block: int | None = None) -> Tensor:
        """Activation map after the given block (default: last stride-2)."""
        block = self.embed_block if block is None else block
        if not 0 <= block < len(self.convs):
            raise ValueError(f"block must be in [0, {len(self.convs)})")
        _, feats = self._run(x, block)
        return feats

    def _run(self, x: Tensor, feature_block: int | None):
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if self.norms[i] is not None:
                h = self.norms[i](h)
            h = T.leaky_relu(h, LEAKY_SLOPE)
            if feature_block == i:
                return None, h
        return self.final(h), None


# ---------------------------------------------------------------------------


@dataclass
class UNetConfig:
    in_channels: int = 1
    out_channels: int = 1
    base_channels: int = 64
    depth: int = 7
    image_size: int = 256

    def __post_init__(self) -> None:
        if min(self.in_channels, self.out_channels, self.base_channels,
               self.depth, self.image_size) <= 0:
            raise ValueError("all U-Net dimensions must be positive")
        if self.depth < 2:
            raise ValueError("U-Net needs depth >= 2")
        factor = 2 ** self.depth
        if self.image_size % factor:
            raise ValueError(f"image_size {self.image_size} not divisible by {factor}")
        if self.image_size // factor < 2:
            raise ValueError("U-Net bottleneck would be smaller than 2x2 "
                             "(reduce depth)")

    @classmethod
    def desk(cls) -> "UNetConfig":
        return cls(base_channels=16, depth=4, image_size=64)

    def to_meta(self) -> dict:
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "base_channels": self.base_channels, "depth": self.depth,
                "image_size": self.image_size}


class UNetGenerator(Module):
    """Encoder/decoder with skip concatenation at every resolution.

    Encoder level i convolves to base * min(2^i, 8) channels at stride 2;
    the first and innermost levels skip normalization.  Each decoder level
    upsamples, normalizes, applies ReLU, and concatenates the matching
    encoder activation; the last transposed conv maps into tanh.
    """

    def __init__(self, cfg: UNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        b = cfg.base_channels
        chans = [cfg.in_channels] + [b * min(2 ** i, 8) for i in range(cfg.depth)]
        self.enc: list[Conv2d] = []
        self.enc_norms: list[InstanceNorm | None] = []
        for i in range(cfg.depth):
            self.enc.append(Conv2d(rng, chans[i], chans[i + 1], 4, 2, 1))
            inner_or_outer = i == 0 or i == cfg.depth - 1
            self.enc_norms.append(None if inner_or_outer else InstanceNorm(chans[i + 1]))
        self.dec: list[ConvTranspose2d] = []
        self.dec_norms: list[InstanceNorm] = []
        for i in range(cfg.depth - 1, 0, -1):
            in_ch = chans[i + 1] if i == cfg.depth - 1 else 2 * chans[i + 1]
            self.dec.append(ConvTranspose2d(rng, in_ch, chans[i], 4, 2, 1))
            self.dec_norms.append(InstanceNorm(chans[i]))
        self.out = ConvTranspose2d(rng, 2 * chans[1], cfg.out_channels, 4, 2, 1)

    def children(self):
        out = []
        for i, conv in enumerate(self.enc):
            out.append((f"enc{i}", conv))
            if self.enc_norms[i] is not None:
                out.append((f"enc{i}_norm", self.enc_norms[i]))
        for j, convt in enumerate(self.dec):
            out.append((f"dec{j}", convt))
            out.append((f"dec{j}_norm", self.dec_norms[j]))
        out.append(("out", self.out))
        return out

    def forward(self, x: Tensor) -> Tensor:
        skips: list[Tensor] = []
        h = x
        for i, conv in enumerate(self.enc):
            h = conv(h)
            if self.enc_norms[i] is not None:
                h = self.enc_norms[i](h)
            h = T.leaky_relu(h, LEAKY_SLOPE)
            skips.append(h)
        for j, convt in enumerate(self.dec):
            level = self.cfg.depth - 1 - j  # encoder level this decoder stage restores
            h = T.relu(self.dec_norms[j](convt(h)))
            h = concat([h, skips[level - 1]], axis=1)
        return T.tanh(self.out(h))


# ---------------------------------------------------------------------------
# RunConfig adapters


def generator_config_from(run) -> GeneratorConfig:
    return GeneratorConfig(base_channels=run.base_channels,
                           n_res_blocks=run.n_res_blocks,
                           image_size=run.n_mels)


def discriminator_config_from(run, in_channels: int = 1) -> DiscriminatorConfig:
    return DiscriminatorConfig(in_channels=in_channels,
                               base_channels=run.base_channels,
                               n_layers=run.disc_layers,
                               image_size=run.n_mels)


def unet_config_from(run) -> UNetConfig:
    return UNetConfig(base_channels=run.base_channels, depth=run.unet_depth,
                      image_size=run.n_mels)
