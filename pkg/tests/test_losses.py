"""Loss golden values, invariants, and gradient checks."""

import math

import pytest
import torch

from amykd.errors import DataError
from amykd.losses import (
    DistillWeights,
    MarginFocalConfig,
    bce_loss,
    distill_total,
    feature_distill,
    logit_distill,
    margin_focal,
    phase2_reg_scale,
    phase2_regularizer,
    phase2_total,
    triplet_loss,
)

torch.manual_seed(0)


def t(*vals):
    return torch.tensor(vals, dtype=torch.float32)


class TestTriplet:
    def test_margin_satisfied(self):
        a = p = torch.zeros(1, 4)
        n = torch.tensor([[2.0, 0.0, 0.0, 0.0]])
        assert triplet_loss(a, p, n, margin=1.0).item() == pytest.approx(0.0)

    def test_equal_distances(self):
        a = torch.zeros(1, 2)
        p = torch.tensor([[1.0, 0.0]])
        n = torch.tensor([[0.0, 1.0]])
        assert triplet_loss(a, p, n, margin=1.0).item() == pytest.approx(1.0, abs=1e-6)

    def test_hinge_floor(self):
        a = torch.zeros(1, 1)
        p = torch.tensor([[0.5]])
        n = torch.tensor([[2.0]])
        assert triplet_loss(a, p, n, margin=1.0).item() == pytest.approx(0.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(DataError):
            triplet_loss(torch.zeros(0, 2), torch.zeros(0, 2), torch.zeros(0, 2))


class TestPhase2Regularizer:
    def test_zero_embeddings_give_zero(self):
        z = torch.zeros(4, 8)
        assert phase2_regularizer(z, z, z, epoch=5).item() == pytest.approx(0.0)

    def test_reg_scale_ramp(self):
        assert phase2_reg_scale(1) == pytest.approx(0.1)
        assert phase2_reg_scale(3) == pytest.approx(0.1)
        assert phase2_reg_scale(8) == pytest.approx(0.55)
        assert phase2_reg_scale(13) == pytest.approx(1.0)
        assert phase2_reg_scale(50) == pytest.approx(1.0)

    def test_collapse_is_penalized(self):
        # Identical unit anchors: pairwise cosine 1.0 exceeds the 0.5
        # threshold by 0.5, scaled by s(epoch).
        a = torch.ones(3, 4) / 2.0
        n = -torch.ones(3, 4) / 2.0
        p = torch.zeros(3, 4)
        val = phase2_regularizer(a, p, n, epoch=13)
        l2 = 0.01 * (1.0 + 0.0 + 1.0)
        # anchor-negative cosine is -1, clamped at -0.1 threshold -> 0
        assert val.item() == pytest.approx(l2 + 1.0 * 0.5, abs=1e-5)

    def test_phase2_total_composition(self):
        torch.manual_seed(1)
        a, p, n = torch.randn(3, 8), torch.randn(3, 8), torch.randn(3, 8)
        z, y = torch.randn(3), torch.tensor([1.0, 0.0, 1.0])
        total = phase2_total(z, y, a, p, n, epoch=4, margin=1.0, lambda_cls=1.0)
        expected = (triplet_loss(a, p, n, 1.0) + bce_loss(z, y)
                    + phase2_regularizer(a, p, n, 4))
        assert total.item() == pytest.approx(expected.item(), abs=1e-6)


class TestMarginFocal:
    def test_single_sample_golden(self):
        val = margin_focal(t(0.0), t(1.0), margin=0.3)
        assert val.item() == pytest.approx(0.2819, abs=1e-4)

    def test_pair_golden_gap_clipped(self):
        val = margin_focal(t(2.0, -1.0), t(1.0, 0.0), margin=0.3)
        assert val.item() == pytest.approx(0.0242, abs=1e-4)

    def test_gap_deficit_term(self):
        base = margin_focal(t(0.5, 0.3), t(1.0, 0.0), margin=1.2, lambda_gap=0.0)
        with_gap = margin_focal(t(0.5, 0.3), t(1.0, 0.0), margin=1.2, lambda_gap=0.3)
        assert (with_gap - base).item() == pytest.approx(0.3 * 0.1 * 1.0, abs=1e-6)

    def test_single_class_batch_has_no_gap_term(self):
        a = margin_focal(t(0.5, 0.2), t(1.0, 1.0), margin=1.2, lambda_gap=0.0)
        b = margin_focal(t(0.5, 0.2), t(1.0, 1.0), margin=1.2, lambda_gap=10.0)
        assert a.item() == pytest.approx(b.item(), abs=1e-7)

    def test_extreme_logits_bounded(self):
        val = margin_focal(t(-1e4, 1e4), t(1.0, 0.0), margin=0.3)
        assert torch.isfinite(val)


class TestFeatureDistill:
    def test_identical_embeddings(self):
        e = torch.randn(4, 16)
        assert feature_distill(e, e.clone()).item() == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_unit_vectors(self):
        s = torch.tensor([[1.0, 0.0]])
        tt = torch.tensor([[0.0, 1.0]])
        assert feature_distill(s, tt).item() == pytest.approx(2.0, abs=1e-6)

    def test_antipodal_unit_vectors(self):
        s = torch.tensor([[1.0, 0.0]])
        assert feature_distill(s, -s).item() == pytest.approx(4.0, abs=1e-6)

    def test_bounded_range(self):
        for seed in range(10):
            g = torch.Generator().manual_seed(seed)
            s = torch.randn(5, 8, generator=g)
            tt = torch.randn(5, 8, generator=g)
            v = feature_distill(s, tt).item()
            assert 0.0 <= v <= 4.0 + 1e-6

    def test_teacher_detached(self):
        s = torch.randn(2, 4, requires_grad=True)
        teacher = torch.randn(2, 4, requires_grad=True)
        feature_distill(s, teacher).backward()
        assert s.grad is not None
        assert teacher.grad is None


class TestLogitDistill:
    def test_identical_zero_logits(self):
        z = torch.zeros(3)
        assert logit_distill(z, z, 1.0).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_temperature_squared_scaling(self):
        z = torch.zeros(3)
        assert logit_distill(z, z, 2.0).item() == pytest.approx(4 * math.log(2), abs=1e-6)

    def test_reference_value(self):
        val = logit_distill(t(1.0), t(2.0), 1.0)
        assert val.item() == pytest.approx(0.4325, abs=1e-4)

    def test_invalid_temperature(self):
        with pytest.raises(DataError):
            logit_distill(t(0.0), t(0.0), 0.5)

    def test_closed_form_gradient(self):
        # d/dz_S of T^2 * BCE(z_S/T, sigma(z_T/T)) = T (sigma(z_S/T) - sigma(z_T/T))
        for temp in (1.0, 2.0, 2.5):
            z_s = torch.randn(6, requires_grad=True)
            z_t = torch.randn(6)
            (logit_distill(z_s, z_t, temp) * z_s.numel()).backward()
            expected = temp * (torch.sigmoid(z_s / temp) - torch.sigmoid(z_t / temp))
            assert torch.allclose(z_s.grad, expected, atol=1e-6)


class TestDistillTotal:
    def test_feature_only_identical(self):
        e = torch.randn(2, 8)
        w = DistillWeights(0.0, 1.0, 0.0)
        val = distill_total(torch.zeros(2), torch.tensor([1.0, 0.0]), e, e.clone(),
                            torch.zeros(2), w, margin=0.3)
        assert val.item() == pytest.approx(0.0, abs=1e-6)

    def test_weighted_composition(self):
        torch.manual_seed(2)
        z_s, z_t = torch.randn(4), torch.randn(4)
        e_s, e_t = torch.randn(4, 8), torch.randn(4, 8)
        y = torch.tensor([1.0, 0.0, 1.0, 0.0])
        w = DistillWeights(0.35, 0.45, 0.2, temperature=2.0)
        total = distill_total(z_s, y, e_s, e_t, z_t, w, margin=0.7, lambda_gap=0.1)
        expected = (0.35 * margin_focal(z_s, y, 0.7, lambda_gap=0.1)
                    + 0.45 * feature_distill(e_s, e_t)
                    + 0.2 * logit_distill(z_s, z_t, 2.0))
        assert total.item() == pytest.approx(expected.item(), abs=1e-6)

    def test_negative_weight_rejected(self):
        with pytest.raises(DataError):
            DistillWeights(-0.1, 0.5, 0.2)


def _finite_diff_check(fn, x, h=1e-4, tol=1e-3):
    """Central finite differences against autograd, relative error.

    Done in float64: fp32 function noise at h=1e-4 would swamp the
    tolerance."""
    x = x.detach().double().requires_grad_(True)
    fn(x).backward()
    grad = x.grad.flatten()
    flat = x.detach().flatten()
    num = torch.zeros_like(flat)
    for i in range(flat.numel()):
        for sign in (+1.0, -1.0):
            bumped = flat.clone()
            bumped[i] += sign * h
            num[i] += sign * fn(bumped.view_as(x)).item()
    num /= 2 * h
    denom = torch.clamp(grad.abs() + num.abs(), min=1e-4)
    assert ((grad - num).abs() / denom).max() < tol


class TestGradients:
    def test_triplet_gradient(self):
        g = torch.Generator().manual_seed(3)
        for _ in range(5):
            apn = torch.randn(3, 2, 4, generator=g)
            _finite_diff_check(lambda x: triplet_loss(x[0], x[1] + 1.0, x[2] - 1.0, 1.0), apn)

    def test_margin_focal_gradient(self):
        g = torch.Generator().manual_seed(4)
        for _ in range(5):
            z = torch.randn(4, generator=g)
            y = torch.tensor([1.0, 0.0, 1.0, 0.0])
            _finite_diff_check(lambda x: margin_focal(x, y, 0.6), z)

    def test_feature_distill_gradient(self):
        g = torch.Generator().manual_seed(5)
        for _ in range(5):
            e_s = torch.randn(3, 6, generator=g)
            e_t = torch.randn(3, 6, generator=g)
            _finite_diff_check(lambda x: feature_distill(x, e_t), e_s)

    def test_logit_distill_gradient(self):
        g = torch.Generator().manual_seed(6)
        for _ in range(5):
            z_s = torch.randn(5, generator=g)
            z_t = torch.randn(5, generator=g)
            _finite_diff_check(lambda x: logit_distill(x, z_t, 2.0), z_s)
