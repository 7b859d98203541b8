"""Training objectives for the translation GAN.

The adversarial loss is trained in its hinge form; the saturating log form
is kept selectable for fidelity runs. Feature matching compares pooled
discriminator features of a real image against its self-reconstruction,
once over the shared trunk scales and once over the domain branch scale.
All L1 reductions are mean-normalized so the loss weights stay
resolution-independent.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace

import torch
import torch.nn.functional as F

from .discriminator import Domain, FeatureTaps, as_domain
from .errors import ConfigurationError, ContractViolation, NumericError, ShapeError

ADV_FORMS = ("hinge", "log")


@dataclass
class LossWeights:
    lambda_rec: float = 1.2
    lambda_fm: float = 1.0
    r1_gamma: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError(f"{f.name} must be >= 0")


@dataclass
class LossReport:
    """Per-iteration scalar losses; one CSV row per training step."""

    adv_g: float = 0.0
    adv_d: float = 0.0
    fm: float = 0.0
    dfm: float = 0.0
    rec: float = 0.0
    r1: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    CSV_COLUMNS = ("iter", "adv_g", "adv_d", "fm", "dfm", "rec", "r1", "total_g", "total_d")

    def merged_with_discriminator(self, d_report: "LossReport") -> "LossReport":
        return replace(self, adv_d=d_report.adv_d, r1=d_report.r1, total_d=d_report.total_d)

    def check_finite(self) -> "LossReport":
        bad = [f.name for f in fields(self) if not math.isfinite(getattr(self, f.name))]
        if bad:
            raise NumericError(f"non-finite loss component(s): {', '.join(bad)}")
        return self

    def csv_row(self, iteration: int) -> str:
        vals = [str(iteration)] + [repr(getattr(self, name)) for name in self.CSV_COLUMNS[1:]]
        return ",".join(vals)


def _check_scores(scores: torch.Tensor, name: str) -> None:
    if scores.numel() == 0:
        raise ContractViolation(f"{name} scores are empty")
    if not torch.isfinite(scores).all():
        raise NumericError(f"{name} scores contain non-finite values")


def _check_form(form: str) -> None:
    if form not in ADV_FORMS:
        raise ConfigurationError(f"adversarial form must be one of {ADV_FORMS}, got {form!r}")


def adv_d_loss(real_scores, fake_scores, form: str = "hinge"):
    _check_form(form)
    _check_scores(real_scores, "real")
    _check_scores(fake_scores, "fake")
    if form == "hinge":
        return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()
    # Saturating form: scores pass through a sigmoid to give D(h) in (0, 1).
    return -(F.logsigmoid(real_scores).mean() + F.logsigmoid(-fake_scores).mean())


def adv_g_loss(fake_scores, form: str = "hinge"):
    _check_form(form)
    _check_scores(fake_scores, "fake")
    if form == "hinge":
        return -fake_scores.mean()
    return F.logsigmoid(-fake_scores).mean()


def _l1_sum(feats_a, feats_b):
    """Sum over scales of the mean absolute difference."""
    total = 0.0
    for a, b in zip(feats_a, feats_b):
        if a.shape != b.shape:
            raise ShapeError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        total = total + (a - b).abs().mean()
    return total


def feature_matching(taps_real: FeatureTaps, taps_recon: FeatureTaps):
    """L1 over the pooled shared-trunk features at both tapped scales."""
    return _l1_sum(taps_real.shared, taps_recon.shared)


def domain_feature_matching(taps_real: FeatureTaps, taps_recon: FeatureTaps, domain):
    """L1 over the pooled branch features of the branch matching `domain`."""
    domain = as_domain(domain)
    if taps_real.domain is not domain or taps_recon.domain is not domain:
        raise ContractViolation(
            f"taps were produced for {taps_real.domain}/{taps_recon.domain}, not {domain}")
    return _l1_sum(taps_real.branch, taps_recon.branch)


def reconstruction_loss(x, x_rec):
    if x.shape != x_rec.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x_rec - x).abs().mean()


def r1_penalty(score_fn, real, gamma: float = 10.0):
    """(gamma/2) * batch mean of the squared input-gradient norm of the score.

    `score_fn` maps an image batch to per-sample scores. The returned value
    keeps the graph alive so the penalty can be backpropagated into the
    discriminator parameters.
    """
    real = real.detach().requires_grad_(True)
    scores = score_fn(real)
    _check_scores(scores, "real")
    (grad,) = torch.autograd.grad(scores.sum(), real, create_graph=True)
    if not torch.isfinite(grad).all():
        raise NumericError("non-finite gradient in the R1 penalty")
    return 0.5 * gamma * grad.flatten(1).pow(2).sum(dim=1).mean()


@contextmanager
def frozen(module):
    """Temporarily drop requires_grad on all parameters of `module`."""
    saved = [(p, p.requires_grad) for p in module.parameters()]
    for p, _ in saved:
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, state in saved:
            p.requires_grad_(state)


def _pooled_shared(disc, h):
    return [f.mean(dim=(2, 3)) for f in disc.shared_features(h)]


def _scalar(value) -> float:
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def generator_objective(gen, disc, x, y, weights: LossWeights, form: str = "hinge"):
    """Full generator loss over both translation directions.

    Adversarial terms sum over the two directions; reconstruction and the
    matching losses average over the two self-reconstruction domains. The
    discriminator is treated as a constant. Returns the differentiable total
    and a report of the component values.
    """
    _check_form(form)
    single_branch = not disc.use_photo_branch
    with frozen(disc):
        fake_y = gen.translate(x, y)
        adv = adv_g_loss(disc.discriminate(fake_y, Domain.ANIME).score, form)
        if not single_branch:
            fake_x = gen.translate(y, x)
            adv = adv + adv_g_loss(disc.discriminate(fake_x, Domain.PHOTO).score, form)

        x_rec = gen.translate(x, x)
        y_rec = gen.translate(y, y)
        rec = 0.5 * (reconstruction_loss(x, x_rec) + reconstruction_loss(y, y_rec))

        y_taps = disc.discriminate(y, Domain.ANIME).taps
        y_rec_taps = disc.discriminate(y_rec, Domain.ANIME).taps
        dfm = domain_feature_matching(y_taps, y_rec_taps, Domain.ANIME)
        if single_branch:
            # Photo branch absent: the trunk still provides both shared scales.
            fm = 0.5 * (feature_matching(y_taps, y_rec_taps)
                        + _l1_sum(_pooled_shared(disc, x), _pooled_shared(disc, x_rec)))
        else:
            x_taps = disc.discriminate(x, Domain.PHOTO).taps
            x_rec_taps = disc.discriminate(x_rec, Domain.PHOTO).taps
            fm = 0.5 * (feature_matching(y_taps, y_rec_taps)
                        + feature_matching(x_taps, x_rec_taps))
            dfm = 0.5 * (dfm + domain_feature_matching(x_taps, x_rec_taps, Domain.PHOTO))

    total = adv + weights.lambda_rec * rec + weights.lambda_fm * (fm + dfm)
    report = LossReport(adv_g=_scalar(adv), fm=_scalar(fm), dfm=_scalar(dfm), rec=_scalar(rec),
                        total_g=_scalar(total))
    return total, report


def discriminator_objective(gen, disc, x, y, weights: LossWeights, form: str = "hinge"):
    """Hinge (or log) real/fake loss plus the R1 penalty, over both domains.

    Fake samples are produced without generator gradient tracking, so this
    objective reaches only discriminator parameters.
    """
    _check_form(form)
    single_branch = not disc.use_photo_branch
    with torch.no_grad():
        fake_y = gen.translate(x, y)
        fake_x = None if single_branch else gen.translate(y, x)

    adv = adv_d_loss(disc.discriminate(y, Domain.ANIME).score,
                     disc.discriminate(fake_y, Domain.ANIME).score, form)
    r1 = r1_penalty(lambda h: disc.discriminate(h, Domain.ANIME).score, y, weights.r1_gamma)
    if not single_branch:
        adv = adv + adv_d_loss(disc.discriminate(x, Domain.PHOTO).score,
                               disc.discriminate(fake_x, Domain.PHOTO).score, form)
        r1 = r1 + r1_penalty(lambda h: disc.discriminate(h, Domain.PHOTO).score, x,
                             weights.r1_gamma)

    total = adv + r1
    report = LossReport(adv_d=_scalar(adv), r1=_scalar(r1), total_d=_scalar(total))
    return total, report
