"""Feature statistics and the style-conditioned normalization family.

Point-wise layer-instance normalization (PoLIN) concatenates the
instance-normalized and layer-normalized copies of a feature map and mixes
them with a 1x1 convolution, so every output channel can draw on every
channel of either normalization. The adaptive variant (AdaPoLIN) keeps the
convolution bias at zero and applies externally supplied per-channel scale
and shift. Per-channel baselines (IN, LN, LIN, AdaIN, AdaLIN) are provided
for ablations.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractViolation, InvalidInputError, ShapeError

# Variance stabilizer inside the square root.
EPS = 1e-5

BASELINE_MODES = ("in", "ln", "lin", "adain", "adalin")


def _check_feature_map(z: torch.Tensor) -> None:
    if z.dim() != 4:
        raise ShapeError(f"expected a [N, C, H, W] feature map, got shape {tuple(z.shape)}")
    if z.numel() == 0:
        raise ShapeError("feature map has zero elements")
    if not torch.isfinite(z).all():
        raise InvalidInputError("feature map contains non-finite values")


def instance_stats(z: torch.Tensor, eps: float = EPS):
    """Per-(sample, channel) mean and eps-stabilized std over the spatial axes.

    Returns tensors shaped [N, C, 1, 1]. Uses the population variance.
    """
    _check_feature_map(z)
    mu = z.mean(dim=(2, 3), keepdim=True)
    var = z.var(dim=(2, 3), correction=0, keepdim=True)
    return mu, torch.sqrt(var + eps)


def layer_stats(z: torch.Tensor, eps: float = EPS):
    """Per-sample mean and eps-stabilized std over channels and spatial axes.

    Returns tensors shaped [N, 1, 1, 1]. Uses the population variance.
    """
    _check_feature_map(z)
    mu = z.mean(dim=(1, 2, 3), keepdim=True)
    var = z.var(dim=(1, 2, 3), correction=0, keepdim=True)
    return mu, torch.sqrt(var + eps)


def instance_norm(z: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    mu, sigma = instance_stats(z, eps)
    return (z - mu) / sigma


def layer_norm(z: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    mu, sigma = layer_stats(z, eps)
    return (z - mu) / sigma


def _as_conv_weight(weight: torch.Tensor, in_channels: int) -> torch.Tensor:
    if weight.dim() == 2:
        weight = weight[:, :, None, None]
    if weight.dim() != 4 or weight.shape[2:] != (1, 1):
        raise ShapeError(f"mix weight must be [C_out, 2C] or [C_out, 2C, 1, 1], got {tuple(weight.shape)}")
    if weight.shape[1] != 2 * in_channels:
        raise ShapeError(
            f"mix weight expects {weight.shape[1]} input channels but the "
            f"IN/LN concatenation has {2 * in_channels}"
        )
    return weight


def _as_style_code(code: torch.Tensor, channels: int, name: str) -> torch.Tensor:
    if code.dim() == 1:
        code = code[None, :, None, None]
    elif code.dim() == 2:
        code = code[:, :, None, None]
    if code.dim() != 4 or code.shape[2:] != (1, 1):
        raise ShapeError(f"{name} must broadcast as [N, C, 1, 1], got shape {tuple(code.shape)}")
    if code.shape[1] != channels:
        raise ShapeError(f"{name} has {code.shape[1]} channels, expected {channels}")
    return code


def polin(z: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
          eps: float = EPS) -> torch.Tensor:
    """All-channel recombination of the IN- and LN-normalized feature map."""
    _check_feature_map(z)
    weight = _as_conv_weight(weight, z.shape[1])
    mu_i, sigma_i = instance_stats(z, eps)
    mu_l, sigma_l = layer_stats(z, eps)
    stacked = torch.cat([(z - mu_i) / sigma_i, (z - mu_l) / sigma_l], dim=1)
    return F.conv2d(stacked, weight, bias)


def adapolin(z: torch.Tensor, weight: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
             bias: torch.Tensor | None = None, eps: float = EPS) -> torch.Tensor:
    """Style-conditioned PoLIN: zero-bias channel mix scaled/shifted by style codes."""
    if bias is not None and bool((bias != 0).any()):
        raise ContractViolation("the adaptive mix keeps its 1x1 convolution bias fixed at zero")
    mixed = polin(z, weight, None, eps)
    gamma = _as_style_code(gamma, mixed.shape[1], "gamma")
    beta = _as_style_code(beta, mixed.shape[1], "beta")
    return gamma * mixed + beta


def baseline_norm(z: torch.Tensor, mode: str, gamma: torch.Tensor | None = None,
                  beta: torch.Tensor | None = None, rho: torch.Tensor | None = None,
                  eps: float = EPS) -> torch.Tensor:
    """Per-channel reference normalizations used as ablation stand-ins.

    ``lin``/``adalin`` blend IN and LN per channel as rho*IN + (1-rho)*LN;
    ``adain``/``adalin`` additionally apply the supplied gamma/beta style codes.
    """
    mode = mode.lower()
    if mode not in BASELINE_MODES:
        raise ContractViolation(f"unknown normalization mode {mode!r}; expected one of {BASELINE_MODES}")
    _check_feature_map(z)

    if mode == "in":
        return instance_norm(z, eps)
    if mode == "ln":
        return layer_norm(z, eps)

    if mode in ("lin", "adalin"):
        if rho is None:
            raise ContractViolation(f"mode {mode!r} requires the per-channel mix ratio rho")
        rho = _as_style_code(rho, z.shape[1], "rho")
        if bool((rho < 0).any()) or bool((rho > 1).any()):
            raise ContractViolation("rho must lie in [0, 1]")
        normed = rho * instance_norm(z, eps) + (1.0 - rho) * layer_norm(z, eps)
    else:  # adain
        normed = instance_norm(z, eps)

    if mode in ("adain", "adalin"):
        if gamma is None or beta is None:
            raise ContractViolation(f"mode {mode!r} requires gamma and beta style codes")
        gamma = _as_style_code(gamma, z.shape[1], "gamma")
        beta = _as_style_code(beta, z.shape[1], "beta")
        normed = gamma * normed + beta
    return normed


def polin_mix_init(channels: int) -> torch.Tensor:
    """Identity on the IN half, zero on the LN half: the mix starts as plain IN."""
    weight = torch.zeros(channels, 2 * channels)
    weight[:, :channels] = torch.eye(channels)
    return weight


class PoLIN(nn.Module):
    """Trainable PoLIN layer: learned 1x1 mix of the IN and LN copies plus a bias."""

    def __init__(self, channels: int, eps: float = EPS):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = nn.Parameter(polin_mix_init(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    takes_style = False

    def forward(self, z):
        return polin(z, self.weight, self.bias, self.eps)


class AdaPoLIN(nn.Module):
    """Trainable AdaPoLIN layer; style codes supply the per-channel scale and shift."""

    def __init__(self, channels: int, eps: float = EPS):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = nn.Parameter(polin_mix_init(channels))

    takes_style = True

    def forward(self, z, gamma, beta):
        return adapolin(z, self.weight, gamma, beta, eps=self.eps)


class BaselineNorm(nn.Module):
    """Ablation stand-in with the same call surface as PoLIN/AdaPoLIN.

    LIN and AdaLIN carry a trainable per-channel mix ratio, initialized at
    0.5 and expected to be clamped to [0, 1] after each optimizer step via
    :func:`clamp_mix_ratios`.
    """

    def __init__(self, mode: str, channels: int, eps: float = EPS):
        super().__init__()
        mode = mode.lower()
        if mode not in BASELINE_MODES:
            raise ContractViolation(f"unknown normalization mode {mode!r}; expected one of {BASELINE_MODES}")
        self.mode = mode
        self.channels = channels
        self.eps = eps
        if mode in ("lin", "adalin"):
            self.rho = nn.Parameter(torch.full((channels,), 0.5))

    @property
    def takes_style(self) -> bool:
        return self.mode in ("adain", "adalin")

    def forward(self, z, gamma=None, beta=None):
        rho = getattr(self, "rho", None)
        return baseline_norm(z, self.mode, gamma, beta, rho=rho, eps=self.eps)

    def extra_repr(self) -> str:
        return f"mode={self.mode}, channels={self.channels}"


def clamp_mix_ratios(module: nn.Module) -> None:
    """Clamp every LIN/AdaLIN mix ratio to [0, 1]; call after each optimizer step."""
    for m in module.modules():
        if isinstance(m, BaselineNorm) and hasattr(m, "rho"):
            with torch.no_grad():
                m.rho.clamp_(0.0, 1.0)
