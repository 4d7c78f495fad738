"""Pluggable detection on reconstructed frames.

A ground-truth oracle with configurable degradation (misses, jitter, false
positives, and a score penalty tied to local quadtree coarseness) stands in
for a learned detector. Candidate scores are fused with tracker predictions
and filtered before feeding the tracker. Also hosts the two-stage
distorted-dataset export used to build detector training corpora.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import codec, metrics, qtree, track
from .metrics import Box, iou
from .qtree import OptimizedQT


class BothWeightsZero(ValueError):
    pass


class MissingAnnotations(ValueError):
    pass


@dataclass
class Detection:
    box: Box
    class_id: int
    c_d: float        # detector confidence
    c_t: float = 0.0  # tracking confidence
    c_j: float = 0.0  # fused confidence


@dataclass(frozen=True)
class OracleNoiseModel:
    miss_prob: float = 0.0
    center_jitter_sigma: float = 0.0
    scale_jitter_sigma: float = 0.0
    fp_rate: float = 0.0
    fp_score_range: Tuple[float, float] = (0.1, 0.6)
    # sorted (block-area / box-area ratio threshold, c_d penalty) pairs;
    # the largest threshold not exceeding the ratio applies
    score_floor_by_quality: Tuple[Tuple[float, float], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.miss_prob <= 1:
            raise ValueError("miss_prob must be in [0, 1]")


NOISE_PRESETS: Dict[str, OracleNoiseModel] = {
    "none": OracleNoiseModel(),
    "mild": OracleNoiseModel(miss_prob=0.1, center_jitter_sigma=1.0,
                             scale_jitter_sigma=0.05, fp_rate=0.2,
                             score_floor_by_quality=((0.5, 0.2), (2.0, 0.4))),
    "heavy": OracleNoiseModel(miss_prob=0.3, center_jitter_sigma=2.0,
                              scale_jitter_sigma=0.1, fp_rate=0.5,
                              score_floor_by_quality=((0.25, 0.2), (0.75, 0.45),
                                                      (2.0, 0.65))),
}


def _quality_penalty(noise: OracleNoiseModel, ratio: float) -> float:
    penalty = 0.0
    for threshold, p in noise.score_floor_by_quality:
        if ratio >= threshold:
            penalty = p
    return penalty


def _coarseness_ratio(size_map: Optional[np.ndarray], box: Box, side: int) -> float:
    """Mean covering-leaf area over the box footprint, relative to box area."""
    if size_map is None:
        return 0.0
    x, y, w, h = box
    x0, y0 = max(0, int(x)), max(0, int(y))
    x1, y1 = min(side, int(math.ceil(x + w))), min(side, int(math.ceil(y + h)))
    if x1 <= x0 or y1 <= y0:
        return 0.0
    sizes = size_map[y0:y1, x0:x1].astype(np.float64)
    mean_leaf_area = float(np.mean(sizes * sizes))
    return mean_leaf_area / max(w * h, 1.0)


def oracle_detect(recon: np.ndarray, gt_boxes: Sequence[Tuple[Box, int]],
                  qt: Optional[OptimizedQT], noise: OracleNoiseModel,
                  frame_index: int) -> List[Detection]:
    """Degraded ground-truth detections, deterministic per (seed, frame)."""
    rng = np.random.default_rng([noise.seed, frame_index])
    side = recon.shape[0]
    size_map = qtree.leaf_size_map(qt) if qt is not None else None
    out: List[Detection] = []
    for box, class_id in gt_boxes:
        if rng.random() < noise.miss_prob:
            continue
        x, y, w, h = box
        cx, cy = x + w / 2.0, y + h / 2.0
        if noise.center_jitter_sigma > 0:
            cx += rng.normal(0.0, noise.center_jitter_sigma)
            cy += rng.normal(0.0, noise.center_jitter_sigma)
        if noise.scale_jitter_sigma > 0:
            scale = max(0.1, 1.0 + rng.normal(0.0, noise.scale_jitter_sigma))
            w, h = w * scale, h * scale
        x0 = min(max(cx - w / 2.0, 0.0), side - 1.0)
        y0 = min(max(cy - h / 2.0, 0.0), side - 1.0)
        w = max(1.0, min(w, side - x0))
        h = max(1.0, min(h, side - y0))
        jittered = (x0, y0, w, h)
        c_d = max(0.0, 1.0 - _quality_penalty(
            noise, _coarseness_ratio(size_map, jittered, side)))
        out.append(Detection(box=jittered, class_id=class_id, c_d=c_d))
    for _ in range(rng.poisson(noise.fp_rate)):
        w = float(rng.uniform(8, max(9, side / 4)))
        h = float(rng.uniform(8, max(9, side / 4)))
        x = float(rng.uniform(0, max(1, side - w)))
        y = float(rng.uniform(0, max(1, side - h)))
        lo, hi = noise.fp_score_range
        out.append(Detection(box=(x, y, w, h), class_id=0,
                             c_d=float(rng.uniform(lo, hi))))
    return out


_IOU_GATE = 0.3
_SIZE_GATE = 0.5


def fuse_scores(candidates: Sequence[Detection], predicted: Sequence[Box],
                w_d: float, w_t: float) -> List[Detection]:
    """Joint confidence c_j = min(1, sqrt(w_d*c_d^2 + w_t*c_t^2)).

    c_t is the best gated IoU against the tracker's predicted boxes:
    pairs under 0.3 IoU or differing in area by more than 50% contribute 0.
    """
    if w_d < 0 or w_t < 0:
        raise ValueError("weights must be nonnegative")
    if w_d == 0 and w_t == 0:
        raise BothWeightsZero("at least one of w_d, w_t must be positive")
    for cand in candidates:
        best = 0.0
        area_c = cand.box[2] * cand.box[3]
        for pred in predicted:
            v = iou(cand.box, pred)
            if v < _IOU_GATE:
                continue
            area_p = pred[2] * pred[3]
            if abs(area_c - area_p) / max(area_c, area_p, 1e-12) > _SIZE_GATE:
                continue
            best = max(best, v)
        cand.c_t = best
        cand.c_j = min(1.0, math.sqrt(w_d * cand.c_d ** 2 + w_t * cand.c_t ** 2))
    return list(candidates)


def filter_detections(scored: Sequence[Detection], threshold: float = 0.5,
                      nms_iou: float = 0.5) -> List[Detection]:
    """Confidence threshold then greedy per-class non-maximum suppression."""
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must be in [0, 1]")
    if not 0 < nms_iou < 1:
        raise ValueError("nms_iou must be in (0, 1)")
    alive = [(i, d) for i, d in enumerate(scored) if d.c_j >= threshold]
    alive.sort(key=lambda pair: (-pair[1].c_j, pair[0]))
    kept: List[Detection] = []
    for _, det in alive:
        if any(k.class_id == det.class_id and iou(k.box, det.box) > nms_iou
               for k in kept):
            continue
        kept.append(det)
    return kept


# -- distorted-dataset export ------------------------------------------------

@dataclass(frozen=True)
class ExportConfig:
    lambdas: Tuple[float, ...] = (50.0, 100.0, 250.0, 400.0, 650.0)
    step: int = 1  # 1: ground-truth ROIs, 2: detector+tracker loop ROIs
    weights: Tuple[float, float] = (1e7, 1e6)
    noise: OracleNoiseModel = OracleNoiseModel()
    threshold: float = 0.5
    nms_iou: float = 0.5
    fusion: Tuple[float, float] = (1.0, 1.0)
    output_dir: str = "export"


def export_training_data(sequence, cfg: ExportConfig) -> List[dict]:
    """Run the acquisition loop per lambda and dump reconstructions.

    Writes 8-bit grayscale PNGs, per-lambda annotation CSVs and a manifest
    (sequence, frame, lambda, rate, psnr). Lambda 0 is always included so
    the pristine data is part of the corpus.
    """
    from PIL import Image

    if not any(sequence.annotations):
        raise MissingAnnotations(f"sequence {sequence.name} has no annotations")
    lambdas = list(cfg.lambdas)
    if 0.0 not in lambdas:
        lambdas.insert(0, 0.0)
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest: List[dict] = []
    for lam in lambdas:
        lam_dir = out_root / f"lambda_{lam:g}"
        lam_dir.mkdir(exist_ok=True)
        tracker = track.Tracker()
        prev = codec.zero_frame(sequence.frames[0].shape[0])
        rois: List[Box] = []
        ann_rows = []
        for t, frame in enumerate(sequence.frames):
            msg, recon, point = codec.chip_encode(
                frame, prev, rois, codec.ConstLambda(lam),
                weights=cfg.weights, frame_index=t)
            gt = [(box, class_id) for _, box, class_id in sequence.annotations[t]]
            if cfg.step == 1:
                dets = [Detection(box=b, class_id=c, c_d=1.0, c_j=1.0)
                        for b, c in gt]
            else:
                cands = oracle_detect(recon, gt, msg.tree(), cfg.noise, t)
                fused = fuse_scores(cands, rois, *cfg.fusion)
                dets = filter_detections(fused, cfg.threshold, cfg.nms_iou)
            out = tracker.step([(d.box, d.class_id, d.c_j) for d in dets])
            rois = out.predicted_rois
            name = f"frame_{t:05d}.png"
            Image.fromarray(recon, mode="L").save(lam_dir / name)
            for tid, box, class_id in sequence.annotations[t]:
                ann_rows.append([t, tid, *(f"{v:g}" for v in box), class_id])
            manifest.append({
                "sequence": sequence.name, "frame": t, "lambda": lam,
                "rate": point.rate, "psnr": metrics.psnr(frame, recon),
                "image": str(lam_dir / name)})
            prev = recon
        with open(lam_dir / "annotations.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "id", "x", "y", "w", "h", "class"])
            writer.writerows(ann_rows)
    with open(out_root / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["sequence", "frame", "lambda", "rate", "psnr", "image"])
        writer.writeheader()
        writer.writerows(manifest)
    return manifest
