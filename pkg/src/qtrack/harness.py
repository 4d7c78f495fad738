"""End-to-end simulation: sequence ingestion, the per-frame host-chip loop,
experiment sweeps, and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence as Seq, Tuple, Union

import numpy as np

from . import channel, codec, detect, metrics, qtree, rdopt, track
from .detect import OracleNoiseModel
from .metrics import Box


class MissingFrames(ValueError):
    pass


class MalformedAnnotation(ValueError):
    pass


class NonMonotoneFrameIndex(ValueError):
    pass


# annotation row: (track_id, box, class_id)
Annotation = Tuple[int, Box, int]


@dataclass
class Sequence:
    frames: List[np.ndarray]
    annotations: List[List[Annotation]]  # one list per frame
    name: str = "sequence"
    fps: float = 30.0

    @property
    def side(self) -> int:
        return self.frames[0].shape[0]


def _letterbox(img: np.ndarray, target: int) -> Tuple[np.ndarray, float, int, int]:
    """Scale preserving aspect ratio, center-pad with zeros to target square."""
    from PIL import Image

    h, w = img.shape
    if h == w == target:
        return img, 1.0, 0, 0
    scale = target / max(h, w)
    new_w, new_h = max(1, round(w * scale)), max(1, round(h * scale))
    resized = np.asarray(
        Image.fromarray(img, mode="L").resize((new_w, new_h), Image.BILINEAR))
    out = np.zeros((target, target), dtype=np.uint8)
    off_y, off_x = (target - new_h) // 2, (target - new_w) // 2
    out[off_y:off_y + new_h, off_x:off_x + new_w] = resized
    return out, scale, off_x, off_y


def load_sequence(path, target_side: int = 512, fps: float = 30.0) -> Sequence:
    """Directory of numbered grayscale images + `annotations.csv`.

    Images are converted to luma and letterboxed to a power-of-two square;
    annotation boxes are scaled and offset accordingly.
    """
    from PIL import Image

    if target_side & (target_side - 1):
        raise ValueError("target_side must be a power of two")
    root = Path(path)
    files = sorted(
        (p for p in root.iterdir() if p.suffix.lower() in (".png", ".pgm")),
        key=lambda p: [int(s) if s.isdigit() else s
                       for s in re.split(r"(\d+)", p.name)])
    if not files:
        raise MissingFrames(f"no .png/.pgm frames under {root}")
    frames, scales = [], []
    for p in files:
        img = np.asarray(Image.open(p).convert("L"))
        boxed, scale, off_x, off_y = _letterbox(img, target_side)
        frames.append(boxed)
        scales.append((scale, off_x, off_y))

    annotations: List[List[Annotation]] = [[] for _ in frames]
    ann_path = root / "annotations.csv"
    if ann_path.exists():
        with open(ann_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [c.strip() for c in header[:7]] != \
                    ["frame", "id", "x", "y", "w", "h", "class"]:
                raise MalformedAnnotation("header must be frame,id,x,y,w,h,class")
            last_frame = -1
            for row in reader:
                if not row:
                    continue
                try:
                    t, tid = int(row[0]), int(row[1])
                    x, y, w, h = (float(v) for v in row[2:6])
                    class_id = int(row[6])
                except (ValueError, IndexError) as exc:
                    raise MalformedAnnotation(f"bad row {row!r}") from exc
                if w <= 0 or h <= 0:
                    raise MalformedAnnotation(f"non-positive box dims in {row!r}")
                if t < last_frame:
                    raise NonMonotoneFrameIndex(f"frame index {t} after {last_frame}")
                last_frame = t
                if t >= len(frames):
                    raise MalformedAnnotation(f"annotation for missing frame {t}")
                scale, off_x, off_y = scales[t]
                annotations[t].append(
                    (tid, (x * scale + off_x, y * scale + off_y,
                           w * scale, h * scale), class_id))
    return Sequence(frames=frames, annotations=annotations, name=root.name, fps=fps)


@dataclass(frozen=True)
class ConstRateFraction:
    fraction: float  # of the uncompressed rate (8 bits per pixel per frame)
    tol: float = 0.01

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError("rate fraction must be in (0, 1]")


RunMode = Union[codec.ConstLambda, ConstRateFraction]


@dataclass(frozen=True)
class RunConfig:
    mode: RunMode = codec.ConstLambda(100.0)
    w_roi: float = 1e7
    w_bg: float = 1e6
    noise: OracleNoiseModel = OracleNoiseModel()
    threshold: float = 0.5
    nms_iou: float = 0.5
    w_d: float = 1.0
    w_t: float = 1.0
    tracker: track.TrackerConfig = field(default_factory=track.TrackerConfig)
    transport: str = "inproc"  # or "tcp" / "tcp:HOST:PORT"
    seed: int = 0
    mota_iou: float = 0.5
    include_frame0_in_mota: bool = False


@dataclass
class FrameRecord:
    frame_index: int
    lam: float
    rate: int
    distortion: float
    psnr: float
    ssim: float
    within_tol: bool = True
    # False when the rate search proved no lambda lands in the window
    window_reachable: bool = True


@dataclass
class RunReport:
    name: str
    per_frame: List[FrameRecord]
    tracks: List[Tuple[int, int, Box, int, float]]  # frame, id, box, class, c_j
    mot: Optional[metrics.MotResult]
    ledger: channel.BandwidthLedger
    budget: Optional[int]
    chip_digests: List[str]
    host_digests: List[str]

    @property
    def psnr_mean(self) -> float:
        return float(np.mean([fr.psnr for fr in self.per_frame]))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean([fr.ssim for fr in self.per_frame]))

    @property
    def rate_mean(self) -> float:
        return float(np.mean([fr.rate for fr in self.per_frame]))


def frame_budget_bits(side: int, fraction: float) -> int:
    """Per-frame budget: a fraction of the 8 bit/pixel uncompressed rate."""
    return max(rdopt.MIN_TREE_BITS, int(round(fraction * 8 * side * side)))


def _digest(frame: np.ndarray) -> str:
    return hashlib.sha256(frame.tobytes()).hexdigest()


def _chip_loop(endpoint: channel.Endpoint, frames: Seq[np.ndarray],
               mode: codec.EncodeMode, weights: Tuple[float, float],
               results: list, digests: List[str]) -> None:
    """Chip side: receive predicted ROIs, encode, send the acquisition."""
    prev = codec.zero_frame(frames[0].shape[0])
    for t, frame in enumerate(frames):
        roi_msg = endpoint.recv(timeout=120)
        if not isinstance(roi_msg, channel.RoiMessage) or roi_msg.frame_index != t:
            raise channel.IoFailure(f"expected ROI message for frame {t}")
        res = codec.chip_encode_full(
            frame, prev, list(roi_msg.boxes), mode, weights=weights,
            frame_index=t)
        prev = res.recon
        results.append((t, res.point, res.within_tol, res.window_reachable))
        digests.append(_digest(prev))
        endpoint.send(res.message)


def _roi_wire_boxes(rois: Seq[Box], side: int) -> Tuple[channel.IntBox, ...]:
    out = []
    for x, y, w, h in rois:
        x0 = min(max(int(round(x)), 0), side - 1)
        y0 = min(max(int(round(y)), 0), side - 1)
        w0 = min(max(int(round(w)), 1), side - x0)
        h0 = min(max(int(round(h)), 1), side - y0)
        out.append((x0, y0, w0, h0))
    return tuple(out)


def _make_endpoints(cfg: RunConfig, ledger: channel.BandwidthLedger):
    if cfg.transport == "inproc":
        return channel.inproc_pair(ledger)
    if cfg.transport.startswith("tcp"):
        if ":" in cfg.transport[4:]:
            host, port = cfg.transport[4:].rsplit(":", 1)
            address = (host, int(port))
        else:
            address = ("127.0.0.1", 0)
        return channel.tcp_pair(address, ledger)
    raise ValueError(f"unknown transport {cfg.transport!r}")


def run_simulation(seq: Sequence, cfg: RunConfig) -> RunReport:
    """The per-frame feedback loop.

    Host sends predicted ROIs, chip encodes against its previous local
    reconstruction and answers with the acquisition message, host
    reconstructs, detects, fuses, filters and steps the tracker whose
    predictions become the next frame's ROIs. Frame 0 starts from an
    all-zeros prior with no ROIs.
    """
    side = seq.side
    if isinstance(cfg.mode, ConstRateFraction):
        budget = frame_budget_bits(side, cfg.mode.fraction)
        chip_mode: codec.EncodeMode = codec.ConstRate(budget, cfg.mode.tol)
    else:
        budget = None
        chip_mode = cfg.mode
    ledger = channel.BandwidthLedger(budget=budget)
    host_end, chip_end = _make_endpoints(cfg, ledger)

    rd_results: list = []
    chip_digests: List[str] = []
    chip_error: List[BaseException] = []

    def chip_main():
        try:
            _chip_loop(chip_end, seq.frames, chip_mode,
                       (cfg.w_roi, cfg.w_bg), rd_results, chip_digests)
        except BaseException as exc:  # propagate to the host thread
            chip_error.append(exc)

    chip_thread = threading.Thread(target=chip_main, name="chip", daemon=True)
    chip_thread.start()

    noise = replace(cfg.noise, seed=cfg.seed)
    tracker = track.Tracker(cfg.tracker)
    prev = codec.zero_frame(side)
    rois: List[Box] = []
    per_frame: List[FrameRecord] = []
    track_rows: List[Tuple[int, int, Box, int, float]] = []
    host_digests: List[str] = []
    hyp_table: metrics.TrackTable = {}
    gt_table: metrics.TrackTable = {}

    try:
        for t, pristine in enumerate(seq.frames):
            host_end.send(channel.RoiMessage(
                frame_index=t, boxes=_roi_wire_boxes(rois, side)))
            try:
                msg = host_end.recv(timeout=120)
            except channel.ChannelError:
                if chip_error:
                    raise chip_error[0]
                raise
            if not isinstance(msg, codec.AcquisitionMessage) or msg.frame_index != t:
                raise channel.IoFailure(f"expected acquisition message for frame {t}")
            recon = codec.reconstruct(prev, msg)
            host_digests.append(_digest(recon))

            gt = [(box, class_id) for _, box, class_id in seq.annotations[t]]
            cands = detect.oracle_detect(recon, gt, msg.tree(), noise, t)
            fused = detect.fuse_scores(cands, rois, cfg.w_d, cfg.w_t)
            dets = detect.filter_detections(fused, cfg.threshold, cfg.nms_iou)
            out = tracker.step([(d.box, d.class_id, d.c_j) for d in dets])
            rois = out.predicted_rois

            for tid, box, class_id, conf in out.tracks:
                track_rows.append((t, tid, box, class_id, conf))
            hyp_table[t] = [(tid, box) for tid, box, _, _ in out.tracks]
            gt_table[t] = [(tid, box) for tid, box, _ in seq.annotations[t]]
            per_frame.append(FrameRecord(
                frame_index=t, lam=0.0, rate=0, distortion=0.0,
                psnr=metrics.psnr(pristine, recon),
                ssim=metrics.ssim(pristine, recon)))
            prev = recon
        chip_thread.join(timeout=60)
        if chip_error:
            raise chip_error[0]
    finally:
        host_end.close()
        chip_end.close()

    for t, point, within, reachable in rd_results:
        rec = per_frame[t]
        rec.lam, rec.rate = point.lam, point.rate
        rec.distortion, rec.within_tol = point.distortion, within
        rec.window_reachable = reachable

    start = 0 if cfg.include_frame0_in_mota else 1
    gt_eval = {t: v for t, v in gt_table.items() if t >= start}
    hyp_eval = {t: v for t, v in hyp_table.items() if t >= start}
    mot = None
    if any(gt_eval.values()):
        mot = metrics.mota(gt_eval, hyp_eval, match_iou=cfg.mota_iou)
    return RunReport(name=seq.name, per_frame=per_frame, tracks=track_rows,
                     mot=mot, ledger=ledger, budget=budget,
                     chip_digests=chip_digests, host_digests=host_digests)


def run_uniform_binning(seq: Sequence, block: int, cfg: RunConfig) -> RunReport:
    """Naive binning baseline: fixed uniform all-acquire tree, no optimizer."""
    tracker = track.Tracker(cfg.tracker)
    noise = replace(cfg.noise, seed=cfg.seed)
    prev = codec.zero_frame(seq.side)
    rois: List[Box] = []
    per_frame, track_rows = [], []
    hyp_table: metrics.TrackTable = {}
    gt_table: metrics.TrackTable = {}
    ledger = channel.BandwidthLedger()
    for t, pristine in enumerate(seq.frames):
        qt = codec.uniform_tree(pristine, block)
        recon = codec.reconstruct_from_tree(prev, qt)
        rate = qtree.bit_cost(qt)
        ledger.record_chip_to_host(t, rate)
        gt = [(box, class_id) for _, box, class_id in seq.annotations[t]]
        cands = detect.oracle_detect(recon, gt, qt, noise, t)
        fused = detect.fuse_scores(cands, rois, cfg.w_d, cfg.w_t)
        dets = detect.filter_detections(fused, cfg.threshold, cfg.nms_iou)
        out = tracker.step([(d.box, d.class_id, d.c_j) for d in dets])
        rois = out.predicted_rois
        for tid, box, class_id, conf in out.tracks:
            track_rows.append((t, tid, box, class_id, conf))
        hyp_table[t] = [(tid, box) for tid, box, _, _ in out.tracks]
        gt_table[t] = [(tid, box) for tid, box, _ in seq.annotations[t]]
        per_frame.append(FrameRecord(
            frame_index=t, lam=0.0, rate=rate, distortion=0.0,
            psnr=metrics.psnr(pristine, recon),
            ssim=metrics.ssim(pristine, recon)))
        prev = recon
    start = 0 if cfg.include_frame0_in_mota else 1
    gt_eval = {t: v for t, v in gt_table.items() if t >= start}
    hyp_eval = {t: v for t, v in hyp_table.items() if t >= start}
    mot = None
    if any(gt_eval.values()):
        mot = metrics.mota(gt_eval, hyp_eval, match_iou=cfg.mota_iou)
    digests = []
    return RunReport(name=seq.name, per_frame=per_frame, tracks=track_rows,
                     mot=mot, ledger=ledger, budget=None,
                     chip_digests=digests, host_digests=digests)


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaSet:
    values: Tuple[float, ...]


@dataclass(frozen=True)
class RateFractions:
    values: Tuple[float, ...]
    tol: float = 0.01


@dataclass(frozen=True)
class FusionGrid:
    pairs: Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class UniformBinning:
    blocks: Tuple[int, ...] = (2, 4, 8, 16)


SweepAxis = Union[LambdaSet, RateFractions, FusionGrid, UniformBinning]


@dataclass
class SweepPoint:
    label: str
    value: float
    report: RunReport


@dataclass
class SweepReport:
    axis_name: str
    points: List[SweepPoint]


def sweep(seq: Sequence, base_cfg: RunConfig, axis: SweepAxis) -> SweepReport:
    points: List[SweepPoint] = []
    if isinstance(axis, LambdaSet):
        if not axis.values:
            raise ValueError("empty sweep axis")
        for lam in axis.values:
            cfg = replace(base_cfg, mode=codec.ConstLambda(lam))
            points.append(SweepPoint(f"lambda={lam:g}", lam,
                                     run_simulation(seq, cfg)))
        name = "lambda"
    elif isinstance(axis, RateFractions):
        if not axis.values:
            raise ValueError("empty sweep axis")
        for frac in axis.values:
            cfg = replace(base_cfg, mode=ConstRateFraction(frac, axis.tol))
            points.append(SweepPoint(f"rate={frac:g}", frac,
                                     run_simulation(seq, cfg)))
        name = "rate_fraction"
    elif isinstance(axis, FusionGrid):
        if not axis.pairs:
            raise ValueError("empty sweep axis")
        for w_d, w_t in axis.pairs:
            cfg = replace(base_cfg, w_d=w_d, w_t=w_t)
            points.append(SweepPoint(f"wd={w_d:g},wt={w_t:g}", w_t,
                                     run_simulation(seq, cfg)))
        name = "fusion"
    elif isinstance(axis, UniformBinning):
        if not axis.blocks:
            raise ValueError("empty sweep axis")
        for block in axis.blocks:
            points.append(SweepPoint(f"binning={block}", float(block),
                                     run_uniform_binning(seq, block, base_cfg)))
        name = "binning"
    else:
        raise TypeError(f"unknown sweep axis {axis!r}")
    return SweepReport(axis_name=name, points=points)


# -- report emission ---------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(report: RunReport, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rd.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "lambda", "rate", "distortion", "psnr",
                         "ssim", "within_tol", "window_reachable"])
        for fr in report.per_frame:
            writer.writerow([fr.frame_index, _fmt(fr.lam), fr.rate,
                             _fmt(fr.distortion), _fmt(fr.psnr),
                             _fmt(fr.ssim), int(fr.within_tol),
                             int(fr.window_reachable)])
    with open(out / "tracks.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "track_id", "x", "y", "w", "h",
                         "class_id", "c_j"])
        for t, tid, box, class_id, conf in report.tracks:
            writer.writerow([t, tid, *(_fmt(float(v)) for v in box),
                             class_id, _fmt(conf)])
    with open(out / "ledger.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "chip_to_host_bits",
                         "host_to_chip_bits", "over_budget"])
        for entry in report.ledger.rows():
            writer.writerow([entry.frame_index, entry.chip_to_host_bits,
                             entry.host_to_chip_bits,
                             int(entry.frame_index in report.ledger.violations)])
    with open(out / "metrics.json", "w") as fh:
        fh.write(metrics_json(report))


def metrics_json(report: RunReport) -> str:
    counts = {c.frame_index: c for c in report.mot.counts} if report.mot else {}
    per_frame = []
    for fr in report.per_frame:
        entry = {"frame": fr.frame_index, "lambda": fr.lam, "rate": fr.rate,
                 "psnr": fr.psnr, "ssim": fr.ssim}
        c = counts.get(fr.frame_index)
        if c is not None:
            entry.update({"g": c.g, "misses": c.misses, "fp": c.fp,
                          "mme": c.mme})
        per_frame.append(entry)
    doc = {
        "mota_full": report.mot.mota_full if report.mot else None,
        "mota_mod": report.mot.mota_mod if report.mot else None,
        "psnr_mean": report.psnr_mean,
        "ssim_mean": report.ssim_mean,
        "rate_mean": report.rate_mean,
        "budget_bits": report.budget,
        "mota_excludes_frame0": True,
        "per_frame": per_frame,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_sweep(sweep_report: SweepReport, seq_side: int, outdir) -> None:
    from . import plots

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    max_bits = 8 * seq_side * seq_side
    rows = []
    for pt in sweep_report.points:
        rep = pt.report
        rows.append({
            "axis": pt.label,
            "value": pt.value,
            "rate_percent": 100.0 * rep.rate_mean / max_bits,
            "mota_full": rep.mot.mota_full if rep.mot else float("nan"),
            "mota_mod": rep.mot.mota_mod if rep.mot else float("nan"),
            "psnr": rep.psnr_mean,
            "ssim": rep.ssim_mean,
        })
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v
                             for k, v in row.items()})
    plots.sweep_plots(sweep_report.axis_name, rows, out / "plots")
