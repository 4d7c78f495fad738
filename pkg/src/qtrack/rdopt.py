"""ROI-weighted rate-distortion optimization of the skip/acquire quadtree.

The optimizer minimizes J = D + lambda * R over every pruning of the full
depth-N quadtree and every per-leaf skip/acquire choice, bottom-up in one
pass (the per-level arrays act as the trellis of a Viterbi recursion).
Distortion is weighted per pixel by a region map: each region contributes
its weight divided by its area, so large regions do not dominate.

Per leaf block at level n of a depth-N tree:

  d_skip    = sum over block of omega(p) * |f_new(p) - f_prev(p)|
  d_acquire = mean(omega) * population_std(f_new block) * 4**(N-n) * npixels

Rate is the exact serialized bit count of `qtree.encode_tree`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, OutOfBounds
from . import qtree
from .qtree import OptimizedQT, QTNode, SKIP, acquire, leaf, split


class EmptyFrame(ValueError):
    pass


class InfeasibleBudget(ValueError):
    """Rate budget below the 2 bits of the minimal encodable tree."""


MIN_TREE_BITS = 2

# per-leaf bit layout: structure bit (absent at max depth) + mode bit,
# acquire adds 8 value bits
_ACQ_EXTRA_BITS = 8

Box = Tuple[float, float, float, float]  # (x, y, w, h)


@dataclass(frozen=True)
class Region:
    region_id: int
    weight: float
    area: int


@dataclass(frozen=True)
class WeightMap:
    omega: np.ndarray  # (side, side) float64, w_i / A_i of the owning region
    regions: Tuple[Region, ...]

    @property
    def side(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class RDPoint:
    lam: float
    rate: int
    distortion: float

    @property
    def cost(self) -> float:
        return self.distortion + self.lam * self.rate


@dataclass(frozen=True)
class LeafCosts:
    d_skip: float
    d_acquire: float


@dataclass(frozen=True)
class RateSearch:
    qt: OptimizedQT
    lambda_star: float
    point: RDPoint
    within_tol: bool
    # False when the search proved no lambda lands in the tolerance window
    # (the rate staircase saturates below it or jumps across it)
    window_reachable: bool


def _clip_box(box: Box, side: int) -> Tuple[int, int, int, int]:
    x, y, w, h = box
    x0 = max(0, int(round(x)))
    y0 = max(0, int(round(y)))
    x1 = min(side, int(round(x + w)))
    y1 = min(side, int(round(y + h)))
    return x0, y0, max(x1, x0), max(y1, y0)


def build_weight_map(regions: Sequence[Tuple[Box, float]], frame_side: int,
                     w_bg: float) -> WeightMap:
    """Per-pixel omega = w_i / A_i with one background region.

    ROI areas are the clipped box areas; the background area is the frame
    minus the ROI union (floor 1). Pixels under several ROIs go to the
    ROI with the largest w/A ratio, ties to the smallest region id.
    """
    if frame_side == 0:
        raise EmptyFrame("frame_side is 0")
    side = frame_side
    clipped = []
    for box, weight in regions:
        if weight <= 0:
            raise ValueError("region weights must be positive")
        x0, y0, x1, y1 = _clip_box(box, side)
        area = (x1 - x0) * (y1 - y0)
        if area > 0:
            clipped.append((x0, y0, x1, y1, float(weight), area))

    covered = np.zeros((side, side), dtype=bool)
    for x0, y0, x1, y1, _, _ in clipped:
        covered[y0:y1, x0:x1] = True
    a_bg = max(1, side * side - int(covered.sum()))

    omega = np.full((side, side), w_bg / a_bg, dtype=np.float64)
    best_ratio = np.zeros((side, side), dtype=np.float64)
    table: List[Region] = []
    for rid, (x0, y0, x1, y1, weight, area) in enumerate(clipped):
        ratio = weight / area
        sel = best_ratio[y0:y1, x0:x1] < ratio  # strict: earlier id keeps ties
        omega[y0:y1, x0:x1][sel] = ratio
        best_ratio[y0:y1, x0:x1][sel] = ratio
        table.append(Region(region_id=rid, weight=weight, area=area))
    table.append(Region(region_id=len(clipped), weight=float(w_bg), area=a_bg))
    return WeightMap(omega=omega, regions=tuple(table))


def leaf_costs(f_new: np.ndarray, f_prev_recon: np.ndarray, wmap: WeightMap,
               node: QTNode) -> LeafCosts:
    """Direct skip/acquire distortion of one block (no DP machinery)."""
    side = f_new.shape[0]
    r, c = node.origin
    if r < 0 or c < 0 or r + node.size > side or c + node.size > side:
        raise OutOfBounds(f"block {node.origin}+{node.size} exceeds frame {side}")
    fn = f_new[r:r + node.size, c:c + node.size].astype(np.float64)
    fp = f_prev_recon[r:r + node.size, c:c + node.size].astype(np.float64)
    w = wmap.omega[r:r + node.size, c:c + node.size]
    d_skip = float(np.sum(w * np.abs(fn - fp)))
    sigma = float(np.std(fn))  # population std
    scale = node.size * node.size  # 4**(N-n)
    d_acquire = float(np.mean(w)) * sigma * scale * fn.size
    return LeafCosts(d_skip=d_skip, d_acquire=d_acquire)


def _pool(a: np.ndarray) -> np.ndarray:
    n = a.shape[0] // 2
    return a.reshape(n, 2, n, 2).sum(axis=(1, 3))


_SKIP, _ACQ, _SPLIT = 0, 1, 2


class _Trellis:
    """Per-level cost/choice arrays of the bottom-up optimization."""

    def __init__(self, f_new: np.ndarray, f_prev: np.ndarray, omega: np.ndarray):
        fn = f_new.astype(np.float64)
        depth = int(round(math.log2(f_new.shape[0])))
        wdiff = omega * np.abs(fn - f_prev.astype(np.float64))
        sum_wd, sum_f, sum_f2, sum_w = wdiff, fn, fn * fn, omega.copy()

        self.depth = depth
        self.d_skip: List[np.ndarray] = [None] * (depth + 1)
        self.d_acq: List[np.ndarray] = [None] * (depth + 1)
        self.mean_f: List[np.ndarray] = [None] * (depth + 1)
        for n in range(depth, -1, -1):
            m = 4 ** (depth - n)
            mean = sum_f / m
            var = np.maximum(sum_f2 / m - mean * mean, 0.0)
            self.d_skip[n] = sum_wd
            self.d_acq[n] = sum_w * np.sqrt(var) * (4 ** (depth - n))
            self.mean_f[n] = mean
            if n > 0:
                sum_wd, sum_f = _pool(sum_wd), _pool(sum_f)
                sum_f2, sum_w = _pool(sum_f2), _pool(sum_w)

    def solve(self, lam: float) -> List[np.ndarray]:
        """Returns the per-level choice arrays of the optimal tree."""
        choices: List[np.ndarray] = [None] * (self.depth + 1)
        n = self.depth
        cs = self.d_skip[n] + lam * 1.0
        ca = self.d_acq[n] + lam * (1.0 + _ACQ_EXTRA_BITS)
        choices[n] = np.where(cs <= ca, _SKIP, _ACQ).astype(np.uint8)
        cost = np.minimum(cs, ca)
        for n in range(self.depth - 1, -1, -1):
            csplit = _pool(cost) + lam * 1.0
            cs = self.d_skip[n] + lam * 2.0
            ca = self.d_acq[n] + lam * (2.0 + _ACQ_EXTRA_BITS)
            take_skip = (cs <= ca) & (cs <= csplit)
            take_acq = ~take_skip & (ca <= csplit)
            choices[n] = np.where(take_skip, _SKIP,
                                  np.where(take_acq, _ACQ, _SPLIT)).astype(np.uint8)
            cost = np.where(take_skip, cs, np.where(take_acq, ca, csplit))
        return choices


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def _build_tree(trellis: _Trellis, choices: List[np.ndarray]) -> Tuple[QTNode, float]:
    depth = trellis.depth
    distortion = 0.0

    def build(n: int, i: int, j: int) -> QTNode:
        nonlocal distortion
        size = 1 << (depth - n)
        origin = (i * size, j * size)
        choice = choices[n][i, j]
        if choice == _SPLIT:
            # NW,NE,SW,SE == (di,dj) in (0,0),(0,1),(1,0),(1,1)
            children = tuple(build(n + 1, 2 * i + di, 2 * j + dj)
                             for di in (0, 1) for dj in (0, 1))
            return split(n, origin, size, children)
        if choice == _ACQ:
            distortion += float(trellis.d_acq[n][i, j])
            value = min(255, max(0, _round_half_away(float(trellis.mean_f[n][i, j]))))
            return leaf(n, origin, size, acquire(value))
        distortion += float(trellis.d_skip[n][i, j])
        return leaf(n, origin, size, SKIP)

    root = build(0, 0, 0)
    return root, distortion


def _check_inputs(f_new: np.ndarray, f_prev_recon: np.ndarray, wmap: WeightMap):
    if f_new.shape != f_prev_recon.shape or f_new.shape != wmap.omega.shape:
        raise DimensionMismatch(
            f"shapes differ: {f_new.shape}, {f_prev_recon.shape}, {wmap.omega.shape}")
    side = f_new.shape[0]
    if f_new.ndim != 2 or side != f_new.shape[1] or side & (side - 1):
        raise DimensionMismatch(f"frame must be square with power-of-two side, got {f_new.shape}")


def viterbi_optimize(f_new: np.ndarray, f_prev_recon: np.ndarray,
                     wmap: WeightMap, lam: float,
                     _trellis: Optional[_Trellis] = None) -> Tuple[OptimizedQT, RDPoint]:
    """Optimal pruned tree and modes for J = D + lam * R.

    Exact ties prefer skip over acquire over split (fewest bits).
    """
    _check_inputs(f_new, f_prev_recon, wmap)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    trellis = _trellis or _Trellis(f_new, f_prev_recon, wmap.omega)
    choices = trellis.solve(lam)
    root, distortion = _build_tree(trellis, choices)
    qt = OptimizedQT(root=root, depth_max=trellis.depth)
    point = RDPoint(lam=lam, rate=qtree.bit_cost(qt), distortion=distortion)
    return qt, point


def solve_for_rate(f_new: np.ndarray, f_prev_recon: np.ndarray, wmap: WeightMap,
                   r_max: int, tol_frac: float, max_iters: int = 30) -> RateSearch:
    """Constant-rate operation: find lambda with rate(lambda) just under r_max.

    rate(lambda) is a nonincreasing staircase whose steps are the lower
    convex hull of the achievable (rate, distortion) points.  The search
    brackets r_max, then repeatedly evaluates at the chord slope between
    the bracketing hull points: either a new hull point appears between
    them, or the endpoints are proven adjacent and the staircase jumps
    across the tolerance window (window_reachable=False).  Returns the
    feasible side (rate <= r_max).
    """
    if r_max < MIN_TREE_BITS:
        raise InfeasibleBudget(f"budget {r_max} below minimal tree ({MIN_TREE_BITS} bits)")
    if not 0 < tol_frac < 1:
        raise ValueError("tol_frac must be in (0, 1)")
    _check_inputs(f_new, f_prev_recon, wmap)
    trellis = _Trellis(f_new, f_prev_recon, wmap.omega)

    def run(lam: float) -> Tuple[OptimizedQT, RDPoint]:
        return viterbi_optimize(f_new, f_prev_recon, wmap, lam, _trellis=trellis)

    floor_rate = (1.0 - tol_frac) * r_max
    qt0, pt0 = run(0.0)
    if pt0.rate <= r_max:
        ok = pt0.rate >= floor_rate
        return RateSearch(qt0, 0.0, pt0, within_tol=ok, window_reachable=ok)

    pt_lo = pt0
    lam_hi = 1.0
    qt_hi = pt_hi = None
    for _ in range(200):
        qt_hi, pt_hi = run(lam_hi)
        if pt_hi.rate <= r_max:
            break
        pt_lo = pt_hi
        lam_hi *= 4.0
    best = (qt_hi, lam_hi, pt_hi)

    window_reachable = True
    for _ in range(max_iters):
        if best[2].rate >= floor_rate:
            break
        # pt_lo and best bracket r_max.  A pair of adjacent hull points
        # swaps optimality exactly at the chord slope; if evaluating there
        # reproduces an endpoint rate, no hull point lies between them and
        # the staircase provably jumps across the tolerance window.
        lam_mid = ((best[2].distortion - pt_lo.distortion)
                   / (pt_lo.rate - best[2].rate))
        qt_mid, pt_mid = run(lam_mid)
        if pt_mid.rate in (pt_lo.rate, best[2].rate):
            window_reachable = False
            break
        if pt_mid.rate > r_max:
            pt_lo = pt_mid
        else:
            if pt_mid.rate > best[2].rate or (pt_mid.rate == best[2].rate
                                              and lam_mid < best[1]):
                best = (qt_mid, lam_mid, pt_mid)

    qt_best, lam_best, pt_best = best
    within = floor_rate <= pt_best.rate <= r_max
    return RateSearch(qt_best, lam_best, pt_best, within_tol=within,
                      window_reachable=window_reachable or within)
