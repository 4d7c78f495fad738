"""Evaluation metrics: IoU, MOTA (full and modified), PSNR, SSIM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import fftconvolve

from .errors import DimensionMismatch

Box = Tuple[float, float, float, float]  # (x, y, w, h)


class EmptyGroundTruth(ValueError):
    pass


class TooSmall(ValueError):
    pass


def iou(a: Box, b: Box) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass
class MotCounts:
    frame_index: int
    g: int
    misses: int
    fp: int
    mme: int


@dataclass
class MotResult:
    mota_full: float
    mota_mod: float
    counts: List[MotCounts]


# frame -> list of (object id, box)
TrackTable = Dict[int, List[Tuple[int, Box]]]


def mota(gt_tracks: TrackTable, hyp_tracks: TrackTable,
         match_iou: float = 0.5, per_frame_ratio: bool = False) -> MotResult:
    """CLEAR-MOT accuracy with correspondence carry-over.

    A ground-truth/hypothesis pair matched in an earlier frame is kept as
    long as its IoU stays above the threshold; remaining objects are matched
    per frame by optimal IoU assignment. By default the error terms are
    aggregated over the whole sequence before dividing by the total
    ground-truth count; `per_frame_ratio` instead sums per-frame ratios
    (skipping empty frames), the formula as literally typeset.
    """
    if not 0 < match_iou < 1:
        raise ValueError("match_iou must be in (0, 1)")
    frames = sorted(set(gt_tracks) | set(hyp_tracks))
    last_assoc: Dict[int, int] = {}  # gt id -> hyp id, persists through gaps
    counts: List[MotCounts] = []
    for t in frames:
        gts = gt_tracks.get(t, [])
        hyps = hyp_tracks.get(t, [])
        gt_ids = [g[0] for g in gts]
        hyp_ids = [h[0] for h in hyps]
        matched_gt: Dict[int, int] = {}  # gt index -> hyp index

        # carry over still-valid correspondences
        hyp_by_id = {hid: j for j, hid in enumerate(hyp_ids)}
        used_hyp = set()
        for i, gid in enumerate(gt_ids):
            hid = last_assoc.get(gid)
            if hid is None or hid not in hyp_by_id:
                continue
            j = hyp_by_id[hid]
            if j not in used_hyp and iou(gts[i][1], hyps[j][1]) >= match_iou:
                matched_gt[i] = j
                used_hyp.add(j)

        free_gt = [i for i in range(len(gts)) if i not in matched_gt]
        free_hyp = [j for j in range(len(hyps)) if j not in used_hyp]
        if free_gt and free_hyp:
            cost = np.ones((len(free_gt), len(free_hyp)))
            for a, i in enumerate(free_gt):
                for b, j in enumerate(free_hyp):
                    v = iou(gts[i][1], hyps[j][1])
                    if v >= match_iou:
                        cost[a, b] = 1.0 - v
            rows, cols = linear_sum_assignment(cost)
            for a, b in zip(rows, cols):
                i, j = free_gt[a], free_hyp[b]
                if iou(gts[i][1], hyps[j][1]) >= match_iou:
                    matched_gt[i] = j

        mme = 0
        for i, j in matched_gt.items():
            gid, hid = gt_ids[i], hyp_ids[j]
            if gid in last_assoc and last_assoc[gid] != hid:
                mme += 1
            last_assoc[gid] = hid
        counts.append(MotCounts(
            frame_index=t, g=len(gts),
            misses=len(gts) - len(matched_gt),
            fp=len(hyps) - len(matched_gt), mme=mme))

    total_g = sum(c.g for c in counts)
    if total_g == 0:
        raise EmptyGroundTruth("no ground-truth objects in any frame")
    if per_frame_ratio:
        full = 1.0 - sum((c.misses + c.fp + c.mme) / c.g for c in counts if c.g)
        mod = 1.0 - sum((c.misses + c.mme) / c.g for c in counts if c.g)
    else:
        full = 1.0 - sum(c.misses + c.fp + c.mme for c in counts) / total_g
        mod = 1.0 - sum(c.misses + c.mme for c in counts) / total_g
    return MotResult(mota_full=full, mota_mod=mod, counts=counts)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2
    ax = np.arange(size) - half
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


_SSIM_WINDOW = 11


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 255.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window with sigma 1.5."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise TooSmall(f"frame side must be >= {_SSIM_WINDOW}")
    x = a.astype(np.float64)
    y = b.astype(np.float64)
    kernel = _gaussian_kernel(_SSIM_WINDOW, 1.5)

    def smooth(img):
        return fftconvolve(img, kernel, mode="valid")

    mu_x, mu_y = smooth(x), smooth(y)
    var_x = smooth(x * x) - mu_x ** 2
    var_y = smooth(y * y) - mu_y ** 2
    cov = smooth(x * y) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
