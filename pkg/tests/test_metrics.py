import numpy as np
import pytest

from qtrack import metrics
from qtrack.errors import DimensionMismatch
from qtrack.metrics import iou, mota, psnr, ssim


class TestIou:
    def test_identical(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0

    def test_half_overlap(self):
        assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3)

    def test_degenerate(self):
        assert iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def _obj_box(o):
    return (o * 20.0, 0.0, 10.0, 10.0)


class TestMota:
    def test_perfect_tracking(self):
        gt = {t: [(o, _obj_box(o)) for o in range(3)] for t in range(5)}
        hyp = {t: [(o + 100, _obj_box(o)) for o in range(3)] for t in range(5)}
        result = mota(gt, hyp)
        assert result.mota_full == 1.0
        assert result.mota_mod == 1.0

    def test_hand_worked_error_counts(self):
        # 10 frames x 10 objects = 100 gt; 5 misses, 3 false positives,
        # 2 identity switches -> mota_full 0.9, mota_mod 0.93
        gt = {t: [(o, _obj_box(o)) for o in range(10)] for t in range(10)}
        hyp = {}
        for t in range(10):
            rows = []
            for o in range(10):
                if t == 9 and o < 5:
                    continue  # 5 misses
                hid = 100 + o
                if o >= 8 and t >= 5:
                    hid = 200 + o  # 2 switches, each flagged once at t=5
                rows.append((hid, _obj_box(o)))
            if t == 9:
                rows += [(900 + k, (500.0 + 30 * k, 0.0, 10.0, 10.0))
                         for k in range(3)]  # 3 false positives
            hyp[t] = rows
        result = mota(gt, hyp)
        assert sum(c.misses for c in result.counts) == 5
        assert sum(c.fp for c in result.counts) == 3
        assert sum(c.mme for c in result.counts) == 2
        assert result.mota_full == pytest.approx(0.9)
        assert result.mota_mod == pytest.approx(0.93)

    def test_single_id_switch_fixture(self):
        gt = {t: [(1, (float(t), 0.0, 10.0, 10.0))] for t in range(3)}
        hyp = {0: [(7, (0.0, 0.0, 10.0, 10.0))],
               1: [(7, (1.0, 0.0, 10.0, 10.0))],
               2: [(8, (2.0, 0.0, 10.0, 10.0))]}
        result = mota(gt, hyp)
        assert sum(c.mme for c in result.counts) == 1
        assert result.mota_full == pytest.approx(1 - 1 / 3)
        assert result.mota_mod == pytest.approx(1 - 1 / 3)

    def test_carry_over_keeps_established_pair(self):
        # after frame 0 establishes gt 1 <-> hyp 7, a closer newcomer in
        # frame 1 must not steal the correspondence
        box = (0.0, 0.0, 10.0, 10.0)
        shifted = (3.0, 0.0, 10.0, 10.0)  # IoU 7/13 > 0.5
        gt = {0: [(1, box)], 1: [(1, box)]}
        hyp = {0: [(7, box)], 1: [(7, shifted), (8, box)]}
        result = mota(gt, hyp)
        assert sum(c.mme for c in result.counts) == 0
        assert sum(c.fp for c in result.counts) == 1  # hyp 8 left unmatched

    def test_per_frame_ratio_form(self):
        gt = {0: [(1, _obj_box(0))],
              1: [(o, _obj_box(o)) for o in range(4)]}
        hyp = {0: [], 1: [(100 + o, _obj_box(o)) for o in range(4)]}
        agg = mota(gt, hyp)
        lit = mota(gt, hyp, per_frame_ratio=True)
        assert agg.mota_full == pytest.approx(1 - 1 / 5)
        assert lit.mota_full == pytest.approx(0.0)  # 1 - (1/1 + 0/4)

    def test_mod_never_below_full(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            gt = {t: [(o, (float(rng.uniform(0, 80)), float(rng.uniform(0, 80)),
                           10.0, 10.0)) for o in range(3)]
                  for t in range(4)}
            hyp = {t: [(o, (float(rng.uniform(0, 80)), float(rng.uniform(0, 80)),
                            10.0, 10.0)) for o in range(rng.integers(0, 5))]
                   for t in range(4)}
            result = mota(gt, hyp)
            assert result.mota_mod >= result.mota_full

    def test_empty_ground_truth(self):
        with pytest.raises(metrics.EmptyGroundTruth):
            mota({0: []}, {0: [(1, (0, 0, 1, 1))]})


class TestPsnr:
    def test_identical_is_infinite(self):
        f = np.arange(64, dtype=np.uint8).reshape(8, 8)
        assert psnr(f, f) == float("inf")

    def test_unit_difference(self):
        a = np.zeros((8, 8), dtype=np.uint8)
        b = np.ones((8, 8), dtype=np.uint8)
        assert psnr(a, b) == pytest.approx(48.1308, abs=1e-4)

    def test_full_scale_difference_is_zero_db(self):
        idx = np.indices((8, 8)).sum(axis=0) % 2
        a = (idx * 255).astype(np.uint8)
        b = 255 - a
        assert psnr(a, b) == pytest.approx(0.0)

    def test_symmetric(self, rng):
        a = rng.integers(0, 256, (8, 8), dtype=np.uint8)
        b = rng.integers(0, 256, (8, 8), dtype=np.uint8)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            psnr(np.zeros((4, 4)), np.zeros((8, 8)))


class TestSsim:
    def test_identical_is_one(self, rng):
        f = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        assert ssim(f, f) == pytest.approx(1.0)

    def test_structural_inversion_is_negative(self):
        idx = np.indices((32, 32)).sum(axis=0) % 2
        a = (idx * 255).astype(np.uint8)
        assert ssim(a, 255 - a) < 0

    def test_constant_shift_closed_form(self):
        a = np.full((32, 32), 100, dtype=np.uint8)
        b = np.full((32, 32), 110, dtype=np.uint8)
        c1 = (0.01 * 255) ** 2
        expected = (2 * 100 * 110 + c1) / (100 ** 2 + 110 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-9)

    def test_symmetric(self, rng):
        a = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        b = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_too_small(self):
        with pytest.raises(metrics.TooSmall):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))
