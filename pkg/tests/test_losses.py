import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from photo2anime import losses
from photo2anime.discriminator import Domain, FeatureTaps
from photo2anime.errors import ConfigurationError, ContractViolation, NumericError, ShapeError
from photo2anime.losses import LossReport, LossWeights

from conftest import rand_images


def taps_for(values, domain=Domain.ANIME):
    shared = [torch.as_tensor(v, dtype=torch.float64) for v in values[:2]]
    branch = [torch.as_tensor(values[2], dtype=torch.float64)]
    return FeatureTaps(shared=shared, branch=branch, domain=domain)


def test_hinge_adv_d_examples():
    t = lambda v: torch.tensor([float(v)])
    assert losses.adv_d_loss(t(2.0), t(-2.0)).item() == 0.0
    assert losses.adv_d_loss(t(0.5), t(0.0)).item() == pytest.approx(1.5)


def test_hinge_adv_d_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        real = rng.standard_normal(6)
        fake = rng.standard_normal(6)
        want = sum(max(0.0, 1.0 - r) for r in real) / 6 + sum(max(0.0, 1.0 + f) for f in fake) / 6
        got = losses.adv_d_loss(torch.tensor(real), torch.tensor(fake)).item()
        assert got == pytest.approx(want, abs=1e-7)


def test_hinge_adv_g_examples():
    assert losses.adv_g_loss(torch.tensor([3.0])).item() == -3.0
    assert losses.adv_g_loss(torch.tensor([0.0])).item() == 0.0
    assert losses.adv_g_loss(torch.tensor([1.0, -1.0])).item() == 0.0


def test_log_form_matches_sigmoid_arithmetic():
    real = torch.tensor([0.3, -1.2])
    fake = torch.tensor([0.7, 2.0])
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    want_d = -(sum(math.log(sig(v)) for v in real.tolist()) / 2
               + sum(math.log(1.0 - sig(v)) for v in fake.tolist()) / 2)
    assert losses.adv_d_loss(real, fake, form="log").item() == pytest.approx(want_d, abs=1e-6)
    want_g = sum(math.log(1.0 - sig(v)) for v in fake.tolist()) / 2
    assert losses.adv_g_loss(fake, form="log").item() == pytest.approx(want_g, abs=1e-6)


def test_adv_rejects_empty_and_bad_form():
    empty = torch.zeros(0)
    with pytest.raises(ContractViolation):
        losses.adv_d_loss(empty, torch.ones(1))
    with pytest.raises(ContractViolation):
        losses.adv_g_loss(empty)
    with pytest.raises(ConfigurationError):
        losses.adv_g_loss(torch.ones(1), form="wasserstein")


def test_feature_matching_examples():
    base = [np.zeros((2, 3)), np.ones((2, 4)), np.full((2, 5), 2.0)]
    shifted = [base[0] + 0.3, base[1] + 0.3, base[2] + 0.25]
    real, recon = taps_for(base), taps_for(shifted)
    assert losses.feature_matching(real, real).item() == 0.0
    assert losses.feature_matching(real, recon).item() == pytest.approx(0.6)
    assert losses.domain_feature_matching(real, real, Domain.ANIME).item() == 0.0
    assert losses.domain_feature_matching(real, recon, Domain.ANIME).item() == pytest.approx(0.25)


def test_feature_matching_loop_oracle():
    rng = np.random.default_rng(1)
    a = [rng.standard_normal((2, 3)), rng.standard_normal((2, 5)), rng.standard_normal((2, 4))]
    b = [rng.standard_normal((2, 3)), rng.standard_normal((2, 5)), rng.standard_normal((2, 4))]
    want_fm = sum(float(np.mean(np.abs(x - y))) for x, y in zip(a[:2], b[:2]))
    want_dfm = float(np.mean(np.abs(a[2] - b[2])))
    assert losses.feature_matching(taps_for(a), taps_for(b)).item() == pytest.approx(want_fm, abs=1e-6)
    assert losses.domain_feature_matching(taps_for(a), taps_for(b), Domain.ANIME).item() \
        == pytest.approx(want_dfm, abs=1e-6)


def test_feature_matching_validation():
    a = taps_for([np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 5))])
    bad = taps_for([np.zeros((2, 3)), np.zeros((2, 6)), np.zeros((2, 5))])
    with pytest.raises(ShapeError):
        losses.feature_matching(a, bad)
    photo = taps_for([np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 5))], Domain.PHOTO)
    with pytest.raises(ContractViolation):
        losses.domain_feature_matching(a, photo, Domain.ANIME)
    with pytest.raises(ContractViolation):
        losses.domain_feature_matching(photo, photo, Domain.ANIME)


def test_reconstruction_examples():
    x = rand_images(2, 16, seed=2)
    assert losses.reconstruction_loss(x, x).item() == 0.0
    assert losses.reconstruction_loss(x, x + 0.5).item() == pytest.approx(0.5, abs=1e-6)
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((1, 3, 4, 4))
    want = float(np.mean(np.abs(b - a)))
    assert losses.reconstruction_loss(torch.tensor(a), torch.tensor(b)).item() \
        == pytest.approx(want, abs=1e-7)
    with pytest.raises(ShapeError):
        losses.reconstruction_loss(x, x[:1])


def test_r1_linear_discriminator_closed_form():
    torch.manual_seed(4)
    w = torch.randn(3, 16, 16, dtype=torch.float64)
    score_fn = lambda h: (h * w).flatten(1).sum(dim=1)
    real = rand_images(4, 16, seed=5).double()
    gamma = 10.0
    got = losses.r1_penalty(score_fn, real, gamma).item()
    want = 0.5 * gamma * w.pow(2).sum().item()
    assert got == pytest.approx(want, rel=1e-9)
    # Linear in gamma.
    assert losses.r1_penalty(score_fn, real, 2 * gamma).item() == pytest.approx(2 * got, rel=1e-9)


def test_r1_constant_discriminator_is_zero():
    score_fn = lambda h: h.flatten(1).sum(dim=1) * 0.0 + 3.0
    real = rand_images(2, 16, seed=6)
    assert losses.r1_penalty(score_fn, real, 10.0).item() == 0.0


def test_frozen_restores_requires_grad():
    net = torch.nn.Linear(3, 3)
    net.bias.requires_grad_(False)
    with losses.frozen(net):
        assert all(not p.requires_grad for p in net.parameters())
    assert net.weight.requires_grad and not net.bias.requires_grad


class _ConstGen:
    """Stub generator returning a constant field; used for analytic D-loss cases."""

    def __init__(self, value):
        self.value = value

    def translate(self, content, reference):
        return torch.full_like(content, self.value)


class _MeanDisc:
    """Stub discriminator scoring 4x the per-sample mean; domain-blind."""

    use_photo_branch = True

    def discriminate(self, h, domain):
        return SimpleNamespace(score=h.flatten(1).mean(dim=1) * 4.0, taps=None)


def test_discriminator_objective_perfect_separation_is_zero():
    x = torch.full((2, 3, 16, 16), 0.5)
    y = torch.full((2, 3, 16, 16), 0.5)
    weights = LossWeights(r1_gamma=0.0)
    total, report = losses.discriminator_objective(_ConstGen(-0.5), _MeanDisc(), x, y, weights)
    assert total.item() == 0.0
    assert report.adv_d == 0.0 and report.r1 == 0.0 and report.total_d == 0.0


def test_discriminator_objective_log_form_equals_negated_saturating_value():
    x = torch.full((2, 3, 16, 16), 0.5)
    y = torch.full((2, 3, 16, 16), 0.5)
    weights = LossWeights(r1_gamma=0.0)
    total, _ = losses.discriminator_objective(_ConstGen(-0.5), _MeanDisc(), x, y, weights,
                                              form="log")
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    # Real score +2 and fake score -2 in both domains.
    value = 2 * (math.log(sig(2.0)) + math.log(1.0 - sig(-2.0)))
    assert total.item() == pytest.approx(-value, abs=1e-6)


def test_generator_objective_composition_and_weight_zeroing(small_gen, small_disc):
    x = rand_images(2, 32, seed=7)
    y = rand_images(2, 32, seed=8)
    total0, report0 = losses.generator_objective(
        small_gen, small_disc, x, y, LossWeights(lambda_rec=0.0, lambda_fm=0.0))
    assert total0.item() == pytest.approx(report0.adv_g, abs=1e-6)

    weights = LossWeights(lambda_rec=1.2, lambda_fm=1.0)
    total, report = losses.generator_objective(small_gen, small_disc, x, y, weights)
    assert total.item() == pytest.approx(
        report.adv_g + 1.2 * report.rec + 1.0 * (report.fm + report.dfm), abs=1e-6)

    # Components are weight-independent, so totals are affine in the weights.
    for lr, lf in [(0.0, 2.0), (3.5, 0.5)]:
        t, _ = losses.generator_objective(small_gen, small_disc, x, y,
                                          LossWeights(lambda_rec=lr, lambda_fm=lf))
        assert t.item() == pytest.approx(
            report.adv_g + lr * report.rec + lf * (report.fm + report.dfm), abs=1e-6)


def test_generator_objective_matches_direct_recomputation(small_gen, small_disc):
    x = rand_images(2, 32, seed=9)
    y = rand_images(2, 32, seed=10)
    weights = LossWeights()
    total, _ = losses.generator_objective(small_gen, small_disc, x, y, weights)

    adv = losses.adv_g_loss(small_disc.discriminate(small_gen.translate(x, y), Domain.ANIME).score) \
        + losses.adv_g_loss(small_disc.discriminate(small_gen.translate(y, x), Domain.PHOTO).score)
    x_rec, y_rec = small_gen.translate(x, x), small_gen.translate(y, y)
    rec = 0.5 * (losses.reconstruction_loss(x, x_rec) + losses.reconstruction_loss(y, y_rec))
    tx, txr = small_disc.discriminate(x, Domain.PHOTO).taps, small_disc.discriminate(x_rec, Domain.PHOTO).taps
    ty, tyr = small_disc.discriminate(y, Domain.ANIME).taps, small_disc.discriminate(y_rec, Domain.ANIME).taps
    fm = 0.5 * (losses.feature_matching(ty, tyr) + losses.feature_matching(tx, txr))
    dfm = 0.5 * (losses.domain_feature_matching(ty, tyr, Domain.ANIME)
                 + losses.domain_feature_matching(tx, txr, Domain.PHOTO))
    want = adv + weights.lambda_rec * rec + weights.lambda_fm * (fm + dfm)
    assert total.item() == pytest.approx(want.item(), abs=1e-6)


def test_objective_gradient_isolation(small_gen, small_disc):
    x = rand_images(2, 32, seed=11)
    y = rand_images(2, 32, seed=12)
    small_gen.zero_grad()
    small_disc.zero_grad()
    total, _ = losses.generator_objective(small_gen, small_disc, x, y, LossWeights())
    total.backward()
    assert all(p.grad is None or p.grad.abs().max() == 0 for p in small_disc.parameters())
    assert any(p.grad is not None and p.grad.abs().max() > 0 for p in small_gen.parameters())
    assert all(p.requires_grad for p in small_disc.parameters())

    small_gen.zero_grad()
    small_disc.zero_grad()
    total, _ = losses.discriminator_objective(small_gen, small_disc, x, y, LossWeights())
    total.backward()
    assert all(p.grad is None or p.grad.abs().max() == 0 for p in small_gen.parameters())
    assert any(p.grad is not None and p.grad.abs().max() > 0 for p in small_disc.parameters())


def test_single_branch_objectives_run(small_gen):
    torch.manual_seed(13)
    from photo2anime.discriminator import DoubleBranchDiscriminator
    disc = DoubleBranchDiscriminator(base_channels=8, use_photo_branch=False)
    x = rand_images(2, 32, seed=14)
    y = rand_images(2, 32, seed=15)
    total_g, report_g = losses.generator_objective(small_gen, disc, x, y, LossWeights())
    total_d, report_d = losses.discriminator_objective(small_gen, disc, x, y, LossWeights())
    for value in (total_g.item(), total_d.item(), report_g.fm, report_g.dfm, report_d.r1):
        assert math.isfinite(value)


def test_loss_report_merge_finite_and_csv():
    g = LossReport(adv_g=1.0, fm=0.5, dfm=0.25, rec=0.1, total_g=2.0)
    d = LossReport(adv_d=3.0, r1=0.2, total_d=3.2)
    merged = g.merged_with_discriminator(d)
    assert merged.adv_g == 1.0 and merged.adv_d == 3.0 and merged.total_d == 3.2
    merged.check_finite()
    with pytest.raises(NumericError, match="rec"):
        LossReport(rec=float("nan")).check_finite()
    row = merged.csv_row(7)
    assert row.startswith("7,1.0,3.0,")
    assert len(row.split(",")) == len(LossReport.CSV_COLUMNS)


def test_loss_weights_validation():
    with pytest.raises(ConfigurationError):
        LossWeights(lambda_rec=-0.1)
    defaults = LossWeights()
    assert (defaults.lambda_rec, defaults.lambda_fm, defaults.r1_gamma) == (1.2, 1.0, 10.0)
