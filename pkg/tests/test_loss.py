"""Reconstruction loss terms: arithmetic fixtures, gradients, invariants."""

import numpy as np
import pytest

from hairbench.engine import Tensor
from hairbench.errors import ContractViolation
from hairbench.loss import (LossWeights, MaskedPair, l1_background,
                            l1_foreground, l2_composed, loss_breakdown,
                            reconstruction_loss, ssim_loss, tv_loss)

from oracles import finite_diff


def make_pair(pred, gt, mask):
    return MaskedPair(Tensor(np.asarray(pred, dtype=np.float64)),
                      Tensor(np.asarray(gt, dtype=np.float64)),
                      Tensor(np.asarray(mask, dtype=np.float64)))


def random_pair(rng, size=16, channels=3, batch=1, mask_fraction=0.2):
    pred = rng.uniform(0.05, 0.95, (batch, channels, size, size))
    gt = rng.uniform(0.05, 0.95, (batch, channels, size, size))
    mask = (rng.uniform(0, 1, (batch, 1, size, size)) < mask_fraction).astype(float)
    return make_pair(pred, gt, mask)


class TestWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.alpha, w.beta, w.gamma, w.delta, w.lam) == \
            (2.626, 3.892, 0.309, 0.398, 0.597)

    def test_negative_rejected(self):
        with pytest.raises(Exception):
            LossWeights(alpha=-1.0)

    def test_lambda_alias_round_trip(self):
        w = LossWeights(lam=0.25)
        d = w.to_dict()
        assert d["lambda"] == 0.25
        assert LossWeights.from_dict(d) == w


class TestMaskedPair:
    def test_non_binary_mask_rejected(self):
        with pytest.raises(ContractViolation):
            make_pair(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 4)),
                      np.full((1, 1, 4, 4), 0.5))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            make_pair(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 8, 8)),
                      np.zeros((1, 1, 4, 4)))


class TestL1Foreground:
    def test_equal_pair_is_zero(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (1, 3, 4, 4))
        mask = np.ones((1, 1, 4, 4))
        assert l1_foreground(make_pair(img, img, mask)).item() == 0.0

    def test_empty_mask_is_zero(self):
        rng = np.random.default_rng(1)
        pair = make_pair(rng.uniform(0, 1, (1, 3, 4, 4)),
                         rng.uniform(0, 1, (1, 3, 4, 4)),
                         np.zeros((1, 1, 4, 4)))
        assert l1_foreground(pair).item() == 0.0

    def test_four_pixel_fixture(self):
        # single-channel 4x4, |error| = 0.1 on the 4 masked pixels
        gt = np.zeros((1, 1, 4, 4))
        pred = np.zeros((1, 1, 4, 4))
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, 1, 1] = mask[0, 0, 2, 2] = mask[0, 0, 0, 3] = mask[0, 0, 3, 0] = 1
        pred[mask.astype(bool)] = 0.1
        pred[0, 0, 0, 0] = 0.9  # off-mask error must not count
        assert abs(l1_foreground(make_pair(pred, gt, mask)).item() - 0.1) < 1e-12


class TestL1Background:
    def test_equal_pair_is_zero(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (1, 3, 4, 4))
        assert l1_background(make_pair(img, img, np.zeros((1, 1, 4, 4)))).item() == 0.0

    def test_full_mask_is_zero(self):
        rng = np.random.default_rng(3)
        pair = make_pair(rng.uniform(0, 1, (1, 3, 4, 4)),
                         rng.uniform(0, 1, (1, 3, 4, 4)),
                         np.ones((1, 1, 4, 4)))
        assert l1_background(pair).item() == 0.0

    def test_uniform_error_outside_mask(self):
        gt = np.full((1, 3, 4, 4), 0.3)
        pred = np.full((1, 3, 4, 4), 0.5)
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, :2, :2] = 1.0
        pred[:, :, :2, :2] = 0.3  # no error inside the mask
        assert abs(l1_background(make_pair(pred, gt, mask)).item() - 0.2) < 1e-12


class TestL2Composed:
    def test_equal_pair_is_zero(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, (1, 3, 4, 4))
        assert l2_composed(make_pair(img, img, np.ones((1, 1, 4, 4)))).item() == 0.0

    def test_four_pixel_fixture(self):
        gt = np.zeros((1, 1, 4, 4))
        pred = np.zeros((1, 1, 4, 4))
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, 0, :4] = 1.0
        pred[0, 0, 0, :4] = 0.1
        # 4 * 0.01 / 16 per the all-pixel normalization
        assert abs(l2_composed(make_pair(pred, gt, mask)).item() - 0.0025) < 1e-15

    def test_scales_linearly_with_masked_area(self):
        gt = np.zeros((1, 1, 4, 4))
        pred = np.full((1, 1, 4, 4), 0.1)
        m1 = np.zeros((1, 1, 4, 4))
        m1[0, 0, 0, :2] = 1.0
        m2 = np.zeros((1, 1, 4, 4))
        m2[0, 0, 0, :4] = 1.0
        v1 = l2_composed(make_pair(pred, gt, m1)).item()
        v2 = l2_composed(make_pair(pred, gt, m2)).item()
        assert abs(v2 - 2.0 * v1) < 1e-15


class TestSsimLoss:
    def test_equal_pair_is_zero(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 1, (1, 3, 16, 16))
        pair = make_pair(img, img, np.zeros((1, 1, 16, 16)))
        assert abs(ssim_loss(pair).item()) < 1e-12

    def test_range(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            pair = random_pair(rng)
            v = ssim_loss(pair).item()
            assert 0.0 <= v <= 2.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(0.2, 0.8, (1, 3, 16, 16))
        gt = rng.uniform(0.2, 0.8, (1, 3, 16, 16))
        mask = np.zeros((1, 1, 16, 16))

        def scalar():
            return ssim_loss(make_pair(pred, gt, mask)).item()

        pt = Tensor(pred, requires_grad=True)
        pair = MaskedPair(pt, Tensor(gt), Tensor(mask))
        ssim_loss(pair).backward()
        idx = np.random.default_rng(8).choice(pred.size, 8, replace=False).tolist()
        fd = finite_diff(scalar, pred, idx)
        analytic = pt.grad.reshape(-1)[idx]
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(analytic - fd) / denom) < 1e-4


class TestTvLoss:
    def test_constant_prediction_is_zero(self):
        mask = np.zeros((1, 1, 8, 8))
        mask[0, 0, 3:5, 3:5] = 1.0
        pair = make_pair(np.full((1, 1, 8, 8), 0.4), np.zeros((1, 1, 8, 8)), mask)
        assert tv_loss(pair).item() == 0.0

    def test_empty_mask_is_zero(self):
        rng = np.random.default_rng(9)
        pair = make_pair(rng.uniform(0, 1, (1, 3, 8, 8)),
                         np.zeros((1, 3, 8, 8)), np.zeros((1, 1, 8, 8)))
        assert tv_loss(pair).item() == 0.0

    def test_single_row_jump_fixture(self):
        # 1x4 row [0, 0, 1, 1] fully masked: one unit jump over 4 pixels
        pred = np.array([0.0, 0.0, 1.0, 1.0]).reshape(1, 1, 1, 4)
        pair = make_pair(pred, np.zeros((1, 1, 1, 4)), np.ones((1, 1, 1, 4)))
        assert abs(tv_loss(pair).item() - 0.25) < 1e-15

    def test_constant_on_dilated_region_is_zero(self):
        rng = np.random.default_rng(10)
        pred = rng.uniform(0, 1, (1, 1, 8, 8))
        pred[0, 0, 1:6, 1:6] = 0.5  # constant across the dilated region
        mask = np.zeros((1, 1, 8, 8))
        mask[0, 0, 2:5, 2:5] = 1.0
        gt = np.zeros((1, 1, 8, 8))
        assert tv_loss(make_pair(pred, gt, mask)).item() == 0.0


class TestReconstructionLoss:
    def test_perfect_prediction_empty_mask(self):
        rng = np.random.default_rng(11)
        img = rng.uniform(0, 1, (1, 3, 16, 16))
        pair = make_pair(img, img, np.zeros((1, 1, 16, 16)))
        assert reconstruction_loss(pair, LossWeights()).item() == 0.0

    def test_zero_weights_zero_loss(self):
        rng = np.random.default_rng(12)
        pair = random_pair(rng)
        zero = LossWeights(alpha=0, beta=0, gamma=0, delta=0, lam=0)
        assert reconstruction_loss(pair, zero).item() == 0.0

    def test_recomposition(self):
        rng = np.random.default_rng(13)
        pair = random_pair(rng)
        w = LossWeights()
        total = reconstruction_loss(pair, w).item()
        by_hand = (w.alpha * l1_foreground(pair).item()
                   + w.beta * l1_background(pair).item()
                   + w.gamma * l2_composed(pair).item()
                   + w.delta * ssim_loss(pair).item()
                   + w.lam * tv_loss(pair).item())
        assert abs(total - by_hand) < 1e-12

    def test_nonnegative(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            pair = random_pair(rng, mask_fraction=rng.uniform(0, 1))
            assert reconstruction_loss(pair, LossWeights()).item() >= 0.0

    def test_weight_toggle_removes_gradient_exactly(self):
        rng = np.random.default_rng(15)
        pred = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
        gt = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
        mask = (rng.uniform(0, 1, (1, 1, 16, 16)) < 0.3).astype(float)

        def grad_for(weights):
            pt = Tensor(pred, requires_grad=True)
            pair = MaskedPair(pt, Tensor(gt), Tensor(mask))
            reconstruction_loss(pair, weights).backward()
            return pt.grad.copy()

        no_tv = grad_for(LossWeights(lam=0.0))
        others = grad_for(LossWeights(lam=0.0, alpha=2.626, beta=3.892,
                                      gamma=0.309, delta=0.398))
        np.testing.assert_array_equal(no_tv, others)

        # the sum of toggled-term gradients recomposes the full gradient
        full = grad_for(LossWeights())
        only_tv = grad_for(LossWeights(alpha=0, beta=0, gamma=0, delta=0))
        np.testing.assert_allclose(no_tv + only_tv, full, atol=1e-12)

    def test_masked_error_monotonicity(self):
        gt = np.full((1, 3, 8, 8), 0.5)
        mask = np.zeros((1, 1, 8, 8))
        mask[0, 0, 2:6, 2:6] = 1.0
        prev_fg, prev_l2 = -1.0, -1.0
        for err in (0.05, 0.1, 0.2, 0.4):
            pred = gt.copy()
            pred[:, :, 2:6, 2:6] += err
            pair = make_pair(pred, gt, mask)
            fg = l1_foreground(pair).item()
            l2 = l2_composed(pair).item()
            assert fg > prev_fg and l2 > prev_l2
            prev_fg, prev_l2 = fg, l2

    def test_breakdown_logs_skipped_terms_as_zero(self):
        rng = np.random.default_rng(16)
        pair = random_pair(rng)
        _, terms = loss_breakdown(pair, LossWeights(lam=0.0))
        assert terms["tv"] == 0.0
        assert terms["l1_foreground"] > 0.0
