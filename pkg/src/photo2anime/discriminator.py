"""Double-branch discriminator: shared shallow trunk plus one branch per domain.

Both domains share the trunk's two stride-2 stages (feature taps 1 and 2);
each branch adds one stride-2 stage (tap 3) and a patch scoring head. Feature
taps are global-average-pooled vectors consumed by the matching losses.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn

from .errors import ConfigurationError, ContractViolation
from .generator import check_image_batch


class Domain(Enum):
    PHOTO = "photo"
    ANIME = "anime"


def as_domain(value) -> Domain:
    if isinstance(value, Domain):
        return value
    try:
        return Domain(str(value).lower())
    except ValueError:
        raise ContractViolation(f"unknown domain {value!r}; expected 'photo' or 'anime'") from None


@dataclass
class FeatureTaps:
    """Pooled per-scale feature vectors: two from the trunk, one from the branch."""

    shared: list
    branch: list
    domain: Domain

    def __post_init__(self):
        if len(self.shared) != 2 or len(self.branch) != 1:
            raise ContractViolation(
                f"expected 2 shared and 1 branch tap, got {len(self.shared)} and {len(self.branch)}")


@dataclass
class DiscOutput:
    score: torch.Tensor  # [N], patch scores averaged per sample
    taps: FeatureTaps


def _conv(in_ch, out_ch, kernel, stride=1):
    padding = kernel // 2 if stride == 1 else (kernel - stride) // 2
    return nn.Conv2d(in_ch, out_ch, kernel, stride, padding=padding)


class _Branch(nn.Module):
    """One stride-2 stage (the tapped scale) followed by a 1-channel patch head."""

    def __init__(self, in_ch: int):
        super().__init__()
        self.down = _conv(in_ch, 2 * in_ch, 4, stride=2)
        # No output bias: hinge gradients from real and fake samples cancel on
        # it exactly while both margins are active, leaving it untrainable.
        self.score_head = nn.Conv2d(2 * in_ch, 1, 3, padding=1, bias=False)

    def forward(self, h):
        feat = torch.nn.functional.leaky_relu(self.down(h), 0.2)
        patch = self.score_head(feat)
        return patch.mean(dim=(1, 2, 3)), feat


class DoubleBranchDiscriminator(nn.Module):
    """Routes images through the shared trunk and the branch named by their domain.

    ``use_photo_branch=False`` builds the single-branch ablation: only the
    anime branch exists and photo-domain scoring is rejected.
    """

    def __init__(self, base_channels: int = 64, use_photo_branch: bool = True):
        super().__init__()
        if base_channels < 1:
            raise ConfigurationError("base_channels must be positive")
        self.use_photo_branch = use_photo_branch
        self.stage1 = _conv(3, base_channels, 4, stride=2)
        self.stage2 = _conv(base_channels, 2 * base_channels, 4, stride=2)
        self.anime_branch = _Branch(2 * base_channels)
        self.photo_branch = _Branch(2 * base_channels) if use_photo_branch else None

    def shared_features(self, h) -> list:
        """Un-pooled trunk feature maps at the two tapped scales."""
        check_image_batch(h, "discriminator input")
        f1 = torch.nn.functional.leaky_relu(self.stage1(h), 0.2)
        f2 = torch.nn.functional.leaky_relu(self.stage2(f1), 0.2)
        return [f1, f2]

    def _branch(self, domain: Domain) -> _Branch:
        if domain is Domain.ANIME:
            return self.anime_branch
        if self.photo_branch is None:
            raise ConfigurationError(
                "photo branch disabled (single-branch ablation); cannot score photo domain")
        return self.photo_branch

    def discriminate(self, h, domain) -> DiscOutput:
        domain = as_domain(domain)
        trunk = self.shared_features(h)
        score, branch_feat = self._branch(domain)(trunk[-1])
        taps = FeatureTaps(shared=[f.mean(dim=(2, 3)) for f in trunk],
                           branch=[branch_feat.mean(dim=(2, 3))],
                           domain=domain)
        return DiscOutput(score=score, taps=taps)

    forward = discriminate
