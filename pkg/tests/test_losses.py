"""Loss functions vs per-pixel oracles; distance transform vs brute force."""

import math

import numpy as np
import pytest

from segforge import losses
from segforge.autodiff import ShapeMismatchError, Tensor, backward, finite_diff_check
from segforge.losses import (
    LossConfig,
    auto_pos_weight,
    batch_loss,
    bce_dice_loss,
    bce_loss,
    dice_loss,
    euclidean_distance_field,
    generalized_loss,
    log_dice_loss,
    mask_boundary,
    signed_distance_map,
    surface_loss,
    weighted_bce_dice_loss,
)


def _rand_pt(rng, shape=(1, 1, 6, 6)):
    p = Tensor(rng.uniform(0.05, 0.95, shape).astype(np.float32), requires_grad=True)
    t = (rng.random(shape) > 0.5).astype(np.float32)
    return p, t


def dice_oracle(p, t, eps=1e-6):
    p = np.asarray(p, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    return 1.0 - (2.0 * float((p * t).sum()) + eps) / (float(p.sum()) + float(t.sum()) + eps)


def bce_oracle(p, t, eps=1e-6):
    p = np.asarray(p, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    total = 0.0
    for pi, ti in zip(p, t):
        total += -(ti * math.log(pi + eps) + (1.0 - ti) * math.log(1.0 - pi + eps))
    return total / p.size


class TestDice:
    def test_perfect_overlap_near_zero(self):
        t = np.zeros((1, 1, 4, 4), np.float32)
        t[0, 0, 1:3, 1:3] = 1.0
        loss = dice_loss(Tensor(t), t)
        assert float(loss.data) < 1e-6

    def test_disjoint_is_one(self):
        t = np.zeros((1, 1, 4, 4), np.float32)
        t[0, 0, :2] = 1.0
        loss = dice_loss(Tensor(1.0 - t), t)
        assert abs(float(loss.data) - 1.0) < 1e-6

    def test_empty_empty_is_zero(self):
        z = np.zeros((1, 1, 4, 4), np.float32)
        assert float(dice_loss(Tensor(z), z).data) == 0.0

    def test_range_and_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = (rng.random((1, 1, 5, 5)) > 0.5).astype(np.float32)
            b = (rng.random((1, 1, 5, 5)) > 0.5).astype(np.float32)
            lab = float(dice_loss(Tensor(a), b).data)
            lba = float(dice_loss(Tensor(b), a).data)
            assert 0.0 <= lab <= 1.0
            assert abs(lab - lba) < 1e-12

    def test_monotone_in_true_foreground(self):
        # gradient at true-foreground pixels never positive
        rng = np.random.default_rng(1)
        for _ in range(10):
            p, t = _rand_pt(rng)
            backward(dice_loss(p, t))
            assert np.all(p.grad[t.astype(bool)] <= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dice_loss(Tensor(np.zeros((1, 1, 2, 2), np.float32)), np.zeros((1, 1, 3, 3)))


class TestBce:
    def test_exact_match_near_zero(self):
        t = (np.random.default_rng(2).random((1, 1, 4, 4)) > 0.5).astype(np.float32)
        assert float(bce_loss(Tensor(t), t).data) < 1e-4

    def test_uniform_half_is_ln2(self):
        t = (np.random.default_rng(3).random((1, 1, 4, 4)) > 0.5).astype(np.float32)
        p = Tensor(np.full((1, 1, 4, 4), 0.5, np.float32))
        assert abs(float(bce_loss(p, t).data) - math.log(2.0)) < 1e-5

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(4)
        p, t = _rand_pt(rng)
        assert abs(float(bce_loss(p, t).data) - bce_oracle(p.data, t)) < 1e-6


class TestBceDice:
    def test_endpoints(self):
        rng = np.random.default_rng(5)
        p, t = _rand_pt(rng)
        assert float(bce_dice_loss(p, t, 1.0).data) == pytest.approx(
            float(bce_loss(p, t).data), abs=1e-9
        )
        assert float(bce_dice_loss(p, t, 0.0).data) == pytest.approx(
            float(dice_loss(p, t).data), abs=1e-9
        )

    def test_midpoint_is_mean_of_components(self):
        rng = np.random.default_rng(6)
        p, t = _rand_pt(rng)
        mixed = float(bce_dice_loss(p, t, 0.5).data)
        mean = 0.5 * (float(bce_loss(p, t).data) + float(dice_loss(p, t).data))
        assert abs(mixed - mean) < 1e-9

    def test_bad_lambda(self):
        p, t = _rand_pt(np.random.default_rng(7))
        with pytest.raises(ValueError):
            bce_dice_loss(p, t, 1.5)


class TestLogDice:
    def test_perfect_near_zero(self):
        t = np.zeros((1, 1, 4, 4), np.float32)
        t[0, 0, :2, :2] = 1.0
        assert float(log_dice_loss(Tensor(t), t).data) < 1e-5

    def test_half_score_construction(self):
        # p covers a of 3a true pixels with no false positives:
        # score = 2a / (a + 3a) = 0.5 -> loss = ln 2
        t = np.zeros((1, 1, 4, 4), np.float32)
        t[0, 0, 0, :4] = 1.0
        t[0, 0, 1, :4] = 1.0
        t[0, 0, 2, :4] = 1.0  # 12 true pixels
        p = np.zeros((1, 1, 4, 4), np.float32)
        p[0, 0, 0, :4] = 1.0  # 4 predicted, all inside t
        loss = float(log_dice_loss(Tensor(p), t).data)
        assert abs(loss - math.log(2.0)) < 1e-5

    def test_dominates_dice_loss(self):
        # -log s >= 1 - s for s in (0, 1)
        rng = np.random.default_rng(8)
        for _ in range(10):
            p, t = _rand_pt(rng)
            assert float(log_dice_loss(p, t).data) >= float(dice_loss(p, t).data) - 1e-9


def brute_force_distances(sources: np.ndarray) -> np.ndarray:
    """O(n^2 * |sources|) nearest-source Euclidean distances."""
    h, w = sources.shape
    pts = np.argwhere(sources)
    out = np.full((h, w), np.inf)
    for y in range(h):
        for x in range(w):
            for (sy, sx) in pts:
                d = math.hypot(float(y - sy), float(x - sx))
                out[y, x] = min(out[y, x], d)
    return out


class TestSignedDistanceMap:
    def test_single_pixel(self):
        m = np.zeros((5, 5), np.uint8)
        m[2, 2] = 1
        sd = signed_distance_map(m)
        assert sd[2, 2] == 0.0
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            assert sd[2 + dy, 2 + dx] == 1.0

    def test_all_zero_sentinel(self):
        sd = signed_distance_map(np.zeros((4, 6), np.uint8))
        assert np.all(sd == math.hypot(6, 4))

    def test_all_one_sentinel(self):
        sd = signed_distance_map(np.ones((4, 6), np.uint8))
        assert np.all(sd == -math.hypot(6, 4))

    def test_sign_matches_mask(self):
        rng = np.random.default_rng(9)
        m = (rng.random((16, 16)) > 0.6).astype(np.uint8)
        sd = signed_distance_map(m)
        assert np.all(sd[m.astype(bool)] <= 0)
        assert np.all(sd[~m.astype(bool)] > 0)

    @pytest.mark.parametrize("seed", range(8))
    def test_magnitude_matches_brute_force_exactly(self, seed):
        rng = np.random.default_rng(40 + seed)
        m = (rng.random((16, 16)) > 0.7).astype(np.uint8)
        if not m.any() or m.all():
            m[0, 0] = 1 - m[0, 0]
        sd = signed_distance_map(m)
        oracle = brute_force_distances(np.asarray(mask_boundary(m)))
        assert np.array_equal(np.abs(sd), oracle)

    def test_complement_relation(self):
        # the two shores of one interface differ by at most one pixel of
        # distance anywhere; signs flip exactly with mask membership
        rng = np.random.default_rng(10)
        for _ in range(10):
            m = (rng.random((12, 12)) > 0.5).astype(np.uint8)
            if not m.any() or m.all():
                continue
            sd = signed_distance_map(m)
            sdc = signed_distance_map(1 - m)
            assert np.all(np.abs(np.abs(sd) - np.abs(sdc)) <= 1.0)
            inside = m.astype(bool) & (np.abs(sd) > 0) & (np.abs(sdc) > 0)
            assert np.all(sdc[inside] > 0)


class TestEuclideanDistanceField:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(60 + seed)
        src = rng.random((20, 20)) > 0.9
        if not src.any():
            src[3, 7] = True
        d = euclidean_distance_field(src)
        assert np.array_equal(d, brute_force_distances(src))


class TestSurfaceLoss:
    def test_zero_prediction_is_zero(self):
        m = np.zeros((8, 8), np.uint8)
        m[2:5, 2:5] = 1
        sdm = signed_distance_map(m)
        p = Tensor(np.zeros((8, 8), np.float32))
        assert float(surface_loss(p, sdm).data) == 0.0

    def test_mask_indicator_is_negative_on_disk(self):
        ys, xs = np.mgrid[0:9, 0:9]
        disk = (((ys - 4) ** 2 + (xs - 4) ** 2) <= 6).astype(np.uint8)
        sdm = signed_distance_map(disk)
        val = float(surface_loss(Tensor(disk.astype(np.float32)), sdm).data)
        oracle = float((disk * sdm).sum() / disk.size)
        assert val == pytest.approx(oracle, abs=1e-6)
        assert val < 0

    def test_gradient_is_sdm_over_n(self):
        rng = np.random.default_rng(11)
        m = (rng.random((6, 6)) > 0.5).astype(np.uint8)
        sdm = signed_distance_map(m)
        p = Tensor(rng.uniform(0.1, 0.9, (6, 6)).astype(np.float32), requires_grad=True)
        backward(surface_loss(p, sdm))
        assert np.allclose(p.grad, sdm.astype(np.float32) / 36.0, atol=1e-6)

    def test_finite_difference(self):
        rng = np.random.default_rng(12)
        m = (rng.random((5, 5)) > 0.5).astype(np.uint8)
        sdm = signed_distance_map(m) / 10.0  # keep the scalarized value O(1)
        p = Tensor(rng.uniform(0.2, 0.8, (5, 5)).astype(np.float32), requires_grad=True)
        assert finite_diff_check(lambda q: surface_loss(q, sdm), p, 1e-3) <= 1e-3


class TestWeightedBceDice:
    def test_weight_one_reduces_to_plain(self):
        rng = np.random.default_rng(13)
        p, t = _rand_pt(rng)
        a = float(weighted_bce_dice_loss(p, t, 1.0, 0.5).data)
        b = float(bce_dice_loss(p, t, 0.5).data)
        assert abs(a - b) < 1e-9

    def test_all_background_ignores_weight(self):
        rng = np.random.default_rng(14)
        t = np.zeros((1, 1, 4, 4), np.float32)
        p = Tensor(rng.uniform(0.05, 0.95, (1, 1, 4, 4)).astype(np.float32))
        a = float(weighted_bce_dice_loss(p, t, 7.0, 0.5).data)
        b = float(weighted_bce_dice_loss(p, t, 1.0, 0.5).data)
        assert abs(a - b) < 1e-9

    def test_matches_per_pixel_weighted_oracle(self):
        rng = np.random.default_rng(15)
        p, t = _rand_pt(rng)
        w_pos = 5.0
        eps = 1e-6
        pd = p.data.astype(np.float64).ravel()
        td = t.astype(np.float64).ravel()
        num = 0.0
        den = 0.0
        for pi, ti in zip(pd, td):
            wi = w_pos if ti == 1.0 else 1.0
            num += -wi * (ti * math.log(pi + eps) + (1 - ti) * math.log(1 - pi + eps))
            den += wi
        oracle = 0.5 * (num / den) + 0.5 * dice_oracle(pd, td)
        assert abs(float(weighted_bce_dice_loss(p, t, w_pos, 0.5).data) - oracle) < 1e-6

    def test_bad_weight(self):
        p, t = _rand_pt(np.random.default_rng(16))
        with pytest.raises(ValueError):
            weighted_bce_dice_loss(p, t, 0.0, 0.5)


class TestGeneralized:
    def _setup(self, seed):
        rng = np.random.default_rng(seed)
        t2 = (rng.random((6, 6)) > 0.5).astype(np.uint8)
        sdm = signed_distance_map(t2)
        p = Tensor(rng.uniform(0.05, 0.95, (6, 6)).astype(np.float32), requires_grad=True)
        return p, t2.astype(np.float32), sdm

    def test_alpha_endpoints(self):
        p, t, sdm = self._setup(17)
        top = generalized_loss(p, t, sdm, LossConfig(alpha=1.0, pos_weight=3.0))
        assert float(top.data) == pytest.approx(
            float(weighted_bce_dice_loss(p, t, 3.0, 0.5).data), abs=1e-9
        )
        bottom = generalized_loss(p, t, sdm, LossConfig(alpha=0.0, pos_weight=3.0))
        assert float(bottom.data) == pytest.approx(float(surface_loss(p, sdm).data), abs=1e-9)

    def test_blend_recomputed_from_components(self):
        p, t, sdm = self._setup(18)
        cfg = LossConfig(alpha=0.7, pos_weight=2.0)
        whole = float(generalized_loss(p, t, sdm, cfg).data)
        parts = 0.7 * float(weighted_bce_dice_loss(p, t, 2.0, 0.5).data) + 0.3 * float(
            surface_loss(p, sdm).data
        )
        assert abs(whole - parts) < 1e-9

    def test_affine_in_alpha(self):
        p, t, sdm = self._setup(19)
        vals = []
        for alpha in (0.0, 0.5, 1.0):
            cfg = LossConfig(alpha=alpha, pos_weight=2.0)
            vals.append(float(generalized_loss(p, t, sdm, cfg).data))
        assert abs(vals[1] - 0.5 * (vals[0] + vals[2])) < 1e-9

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=1.2)


class TestAutoPosWeight:
    def test_ratio(self):
        t = np.zeros((10, 10))
        t[:2] = 1  # 20 fg, 80 bg
        assert auto_pos_weight(t) == 4.0

    def test_clamped(self):
        assert auto_pos_weight(np.zeros((10, 10))) == 100.0
        assert auto_pos_weight(np.ones((10, 10))) == 1.0


LOSS_FD_CASES = ("dice", "bce", "bce_dice", "log_dice", "weighted_bce_dice", "generalized")


@pytest.mark.parametrize("name", LOSS_FD_CASES)
def test_every_loss_passes_finite_difference(name):
    cfg = LossConfig(pos_weight=4.0, alpha=0.6)
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        t = (rng.random((1, 1, 5, 5)) > 0.5).astype(np.uint8)
        p = Tensor(rng.uniform(0.1, 0.9, (1, 1, 5, 5)).astype(np.float32), requires_grad=True)
        err = finite_diff_check(lambda q: batch_loss(name, q, t, cfg), p, 1e-3)
        assert err <= 1e-3, f"{name} seed {seed}: {err}"


def test_batch_loss_surface_dispatch():
    rng = np.random.default_rng(20)
    t = (rng.random((2, 1, 6, 6)) > 0.5).astype(np.uint8)
    p = Tensor(rng.uniform(0.1, 0.9, (2, 1, 6, 6)).astype(np.float32), requires_grad=True)
    val = batch_loss("surface", p, t, LossConfig())
    sdms = np.stack([signed_distance_map(t[i, 0]) for i in range(2)])[:, None]
    oracle = float((p.data.astype(np.float64) * sdms).mean())
    assert float(val.data) == pytest.approx(oracle, rel=1e-5)


def test_all_losses_finite_on_extreme_probabilities():
    t = (np.random.default_rng(21).random((1, 1, 4, 4)) > 0.5).astype(np.uint8)
    p = Tensor(np.clip(t.astype(np.float32), 1e-4, 1 - 1e-4))
    cfg = LossConfig(pos_weight=2.0)
    for name in losses.LOSS_NAMES:
        v = float(batch_loss(name, p, t, cfg).data)
        assert math.isfinite(v)
