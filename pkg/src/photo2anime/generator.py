"""Translation network: content encoder, style encoder, and decoder.

One generator serves both directions; the output domain is determined by the
reference image that supplies the style. The decoder is a residual-free
bottleneck stack (style-conditioned convolutions) followed by upsampling
blocks that re-inject style right after each resolution doubling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ContractViolation, InvalidInputError, ShapeError
from .normalization import AdaPoLIN, BaselineNorm, PoLIN

POLIN_MODES = ("polin", "in", "ln", "lin")
ADAPOLIN_MODES = ("adapolin", "adain", "adalin")


class AffineStyle(NamedTuple):
    """Per-channel scale and shift for one style injection site."""

    gamma: torch.Tensor
    beta: torch.Tensor


# Ordered (gamma, beta) pairs, one per adaptive site in decoding order.
StyleParams = list


def check_image_batch(x: torch.Tensor, name: str = "image batch") -> None:
    """Validate the [N,3,H,W] square power-of-two >=16 image contract."""
    if not torch.is_tensor(x) or x.dim() != 4:
        raise ShapeError(f"{name} must be a [N, 3, H, W] tensor")
    n, c, h, w = x.shape
    if n < 1 or c != 3:
        raise ShapeError(f"{name} must have 3 channels, got shape {tuple(x.shape)}")
    if h != w or h < 16 or (h & (h - 1)) != 0:
        raise ShapeError(f"{name} must be square with power-of-two side >= 16, got {h}x{w}")
    if not torch.isfinite(x).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    if x.abs().max().item() > 1.0 + 1e-5:
        raise InvalidInputError(f"{name} values must lie in [-1, 1]")


@dataclass
class GeneratorConfig:
    image_size: int = 128
    base_channels: int = 64
    bottleneck_channels: int | None = None
    asc_depth: int = 4
    fst_count: int = 2
    style_dim: int = 256
    use_asc: bool = True
    use_fst_style_injection: bool = True
    polin_mode: str = "polin"
    adapolin_mode: str = "adapolin"

    def __post_init__(self):
        s = self.image_size
        if s < 16 or (s & (s - 1)) != 0:
            raise ConfigurationError(f"image_size must be a power of two >= 16, got {s}")
        if self.base_channels < 1 or self.style_dim < 1 or self.asc_depth < 1:
            raise ConfigurationError("base_channels, style_dim and asc_depth must be positive")
        if self.bottleneck_channels is None:
            self.bottleneck_channels = 4 * self.base_channels
        if self.bottleneck_channels < 4 or self.bottleneck_channels % 4 != 0:
            raise ConfigurationError("bottleneck_channels must be a positive multiple of 4")
        # The decoder must undo exactly the encoder's two stride-2 stages.
        if self.fst_count != 2:
            raise ConfigurationError("fst_count is fixed at 2 (quarter-resolution bottleneck)")
        if self.polin_mode not in POLIN_MODES:
            raise ConfigurationError(f"polin_mode must be one of {POLIN_MODES}")
        if self.adapolin_mode not in ADAPOLIN_MODES:
            raise ConfigurationError(f"adapolin_mode must be one of {ADAPOLIN_MODES}")


def _conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1) -> nn.Conv2d:
    pad_mode = "reflect" if stride == 1 else "zeros"
    padding = kernel // 2 if stride == 1 else (kernel - stride) // 2
    return nn.Conv2d(in_ch, out_ch, kernel, stride, padding=padding, padding_mode=pad_mode)


class ContentEncoder(nn.Module):
    """Two stride-2 stages plus refinement convs; output is 1/4 resolution."""

    def __init__(self, base: int, bottleneck: int):
        super().__init__()
        layers = [_conv(3, base, 7), nn.InstanceNorm2d(base), nn.LeakyReLU(0.2)]
        ch = base
        for _ in range(2):
            layers += [_conv(ch, 2 * ch, 4, stride=2), nn.InstanceNorm2d(2 * ch), nn.LeakyReLU(0.2)]
            ch *= 2
        layers += [_conv(ch, bottleneck, 3), nn.InstanceNorm2d(bottleneck), nn.LeakyReLU(0.2),
                   _conv(bottleneck, bottleneck, 3), nn.InstanceNorm2d(bottleneck), nn.LeakyReLU(0.2)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class StyleEncoder(nn.Module):
    """Strided conv trunk, global average pooling, linear projection to the style latent."""

    def __init__(self, base: int, style_dim: int):
        super().__init__()
        layers = [_conv(3, base, 7), nn.LeakyReLU(0.2)]
        ch = base
        for _ in range(4):
            nxt = min(2 * ch, 4 * base)
            layers += [_conv(ch, nxt, 4, stride=2), nn.LeakyReLU(0.2)]
            ch = nxt
        self.net = nn.Sequential(*layers)
        self.project = nn.Linear(ch, style_dim)

    def forward(self, y):
        h = self.net(y)
        return self.project(h.mean(dim=(2, 3)))


class StyleHead(nn.Module):
    """Maps the shared style latent to one site's (gamma, beta); gamma is centered at 1."""

    def __init__(self, style_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.fc = nn.Linear(style_dim, 2 * channels)

    def forward(self, latent) -> AffineStyle:
        out = self.fc(latent)
        return AffineStyle(1.0 + out[:, :self.channels], out[:, self.channels:])


def _take_site(norm, z, sites):
    if not norm.takes_style:
        return norm(z)
    try:
        gamma, beta = next(sites)
    except StopIteration:
        raise ContractViolation("style parameter list is shorter than the adaptive sites") from None
    return norm(z, gamma, beta)


class AscBlock(nn.Module):
    """Residual-free stack of [conv3x3 -> style norm -> activation] layers."""

    def __init__(self, channels: int, depth: int, norm_factory):
        super().__init__()
        self.convs = nn.ModuleList(_conv(channels, channels, 3) for _ in range(depth))
        self.norms = nn.ModuleList(norm_factory(channels) for _ in range(depth))
        self.style_channels = [n.channels for n in self.norms if n.takes_style]

    def forward(self, z, styles=()):
        sites = iter(styles)
        for conv, norm in zip(self.convs, self.norms):
            z = F.leaky_relu(_take_site(norm, conv(z), sites), 0.2)
        return z


class ResidualBottleneck(nn.Module):
    """Skip-connected drop-in for the bottleneck, used by the no-stack ablation."""

    class _Block(nn.Module):
        def __init__(self, channels: int, norm_factory):
            super().__init__()
            self.conv1 = _conv(channels, channels, 3)
            self.norm1 = norm_factory(channels)
            self.conv2 = _conv(channels, channels, 3)
            self.norm2 = norm_factory(channels)

        def forward(self, z, sites):
            h = F.leaky_relu(_take_site(self.norm1, self.conv1(z), sites), 0.2)
            h = _take_site(self.norm2, self.conv2(h), sites)
            return z + h

    def __init__(self, channels: int, depth: int, norm_factory):
        super().__init__()
        self.blocks = nn.ModuleList(self._Block(channels, norm_factory) for _ in range((depth + 1) // 2))
        self.style_channels = [c for b in self.blocks for n in (b.norm1, b.norm2)
                               for c in ([n.channels] if n.takes_style else [])]

    def forward(self, z, styles=()):
        sites = iter(styles)
        for block in self.blocks:
            z = block(z, sites)
        return z


class FstBlock(nn.Module):
    """Doubles resolution; style enters right after the upsampling convolution."""

    def __init__(self, in_ch: int, out_ch: int, ada_factory, plain_factory):
        super().__init__()
        self.conv1 = _conv(in_ch, out_ch, 3)
        self.norm1 = ada_factory(out_ch)
        self.conv2 = _conv(out_ch, out_ch, 3)
        self.norm2 = plain_factory(out_ch)
        self.style_channels = [out_ch] if self.norm1.takes_style else []

    def forward(self, z, styles=()):
        sites = iter(styles)
        z = F.interpolate(z, scale_factor=2, mode="nearest")
        z = F.leaky_relu(_take_site(self.norm1, self.conv1(z), sites), 0.2)
        return F.leaky_relu(self.norm2(self.conv2(z)), 0.2)


class Generator(nn.Module):
    """G(x, y): translate the content of x into the domain and style of y."""

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        cb = cfg.bottleneck_channels

        def ada_norm(channels: int) -> nn.Module:
            if not cfg.use_fst_style_injection:
                return BaselineNorm("in", channels)
            if cfg.adapolin_mode == "adapolin":
                return AdaPoLIN(channels)
            return BaselineNorm(cfg.adapolin_mode, channels)

        def plain_norm(channels: int) -> nn.Module:
            if cfg.polin_mode == "polin":
                return PoLIN(channels)
            return BaselineNorm(cfg.polin_mode, channels)

        self.content_encoder = ContentEncoder(cfg.base_channels, cb)
        self.style_encoder = StyleEncoder(cfg.base_channels, cfg.style_dim)

        if cfg.use_asc:
            self.bottleneck = AscBlock(cb, cfg.asc_depth, ada_norm)
        else:
            self.bottleneck = ResidualBottleneck(cb, cfg.asc_depth, ada_norm)
        self.up_blocks = nn.ModuleList()
        ch = cb
        for _ in range(cfg.fst_count):
            self.up_blocks.append(FstBlock(ch, ch // 2, ada_norm, plain_norm))
            ch //= 2
        self.to_image = _conv(ch, 3, 7)

        self._site_counts = [len(self.bottleneck.style_channels)] + \
            [len(b.style_channels) for b in self.up_blocks]
        self.style_heads = nn.ModuleList(
            StyleHead(cfg.style_dim, c)
            for block in [self.bottleneck, *self.up_blocks]
            for c in block.style_channels
        )

    @property
    def style_site_channels(self) -> list:
        return [h.channels for h in self.style_heads]

    def _check_sites(self, style: StyleParams) -> None:
        if len(style) != len(self.style_heads):
            raise ContractViolation(
                f"expected {len(self.style_heads)} style sites, got {len(style)}")

    def _block_slice(self, index: int) -> slice:
        start = sum(self._site_counts[:index])
        return slice(start, start + self._site_counts[index])

    def encode_content(self, x) -> torch.Tensor:
        check_image_batch(x, "content input")
        return self.content_encoder(x)

    def style_latent(self, y) -> torch.Tensor:
        check_image_batch(y, "style reference")
        return self.style_encoder(y)

    def encode_style(self, y) -> StyleParams:
        latent = self.style_latent(y)
        return [head(latent) for head in self.style_heads]

    def asc_block(self, alpha, style: StyleParams):
        self._check_sites(style)
        return self.bottleneck(alpha, style[self._block_slice(0)])

    def fst_block(self, f, style: StyleParams, stage: int):
        if not 0 <= stage < self.config.fst_count:
            raise ContractViolation(f"stage {stage} out of range [0, {self.config.fst_count})")
        self._check_sites(style)
        return self.up_blocks[stage](f, style[self._block_slice(1 + stage)])

    def decode(self, alpha, style: StyleParams):
        self._check_sites(style)
        z = self.bottleneck(alpha, style[self._block_slice(0)])
        for i, block in enumerate(self.up_blocks):
            z = block(z, style[self._block_slice(1 + i)])
        return torch.tanh(self.to_image(z))

    def translate(self, x, y):
        check_image_batch(x, "content input")
        check_image_batch(y, "style reference")
        if x.shape[2:] != y.shape[2:] or x.shape[0] != y.shape[0]:
            raise ShapeError(f"content {tuple(x.shape)} and reference {tuple(y.shape)} "
                             "must share batch size and resolution")
        return self.decode(self.encode_content(x), self.encode_style(y))

    forward = translate
