"""Synthetic test sequences: textured backgrounds with moving square targets."""

from __future__ import annotations

import math
from typing import List

import numpy as np

from .harness import Annotation, Sequence


def textured_background(side: int, rng: np.random.Generator,
                        cell: int = 8, lo: int = 40, hi: int = 170) -> np.ndarray:
    """Blocky random texture upsampled to the frame side."""
    coarse = rng.integers(lo, hi, size=(side // cell, side // cell))
    return np.kron(coarse, np.ones((cell, cell), dtype=np.int64)).astype(np.uint8)


def moving_squares_sequence(n_frames: int, side: int = 64, n_objects: int = 2,
                            box_side: int = 12, speed: float = 1.5,
                            curve_amp: float = 0.0, curve_period: float = 40.0,
                            seed: int = 0, name: str = "synthetic",
                            static_background: bool = True,
                            fps: float = 30.0) -> Sequence:
    """Bright squares on a textured background following (optionally curved)
    constant-speed paths, with exact per-frame annotations."""
    rng = np.random.default_rng(seed)
    background = textured_background(side, rng)
    margin = box_side + int(abs(curve_amp)) + 2
    objects = []
    for k in range(n_objects):
        cx = float(rng.uniform(margin, side - margin))
        cy = float(rng.uniform(margin, side - margin))
        angle = float(rng.uniform(0, 2 * math.pi))
        vx, vy = speed * math.cos(angle), speed * math.sin(angle)
        value = int(rng.integers(200, 256))
        objects.append([cx, cy, vx, vy, value])

    frames: List[np.ndarray] = []
    annotations: List[List[Annotation]] = []
    for t in range(n_frames):
        if static_background:
            frame = background.copy()
        else:
            frame = textured_background(side, rng)
        anns: List[Annotation] = []
        for oid, (cx, cy, vx, vy, value) in enumerate(objects):
            px = cx + vx * t
            py = cy + vy * t
            if curve_amp:
                # lateral wobble perpendicular to the heading
                phase = 2 * math.pi * t / curve_period
                norm = math.hypot(vx, vy) or 1.0
                px += -vy / norm * curve_amp * math.sin(phase)
                py += vx / norm * curve_amp * math.sin(phase)
            # bounce off the walls
            span = side - box_side
            px = _reflect(px - box_side / 2, span)
            py = _reflect(py - box_side / 2, span)
            x0, y0 = int(round(px)), int(round(py))
            frame[y0:y0 + box_side, x0:x0 + box_side] = value
            anns.append((oid, (float(x0), float(y0),
                               float(box_side), float(box_side)), 0))
        frames.append(frame)
        annotations.append(anns)
    return Sequence(frames=frames, annotations=annotations, name=name, fps=fps)


def _reflect(x: float, span: float) -> float:
    if span <= 0:
        return 0.0
    period = 2 * span
    x = x % period
    return period - x if x > span else x


def static_sequence(n_frames: int, side: int = 64, seed: int = 0,
                    name: str = "static") -> Sequence:
    """Identical textured frames (no motion, no objects)."""
    rng = np.random.default_rng(seed)
    frame = textured_background(side, rng)
    return Sequence(frames=[frame.copy() for _ in range(n_frames)],
                    annotations=[[] for _ in range(n_frames)], name=name)


def write_sequence_dir(seq: Sequence, outdir) -> None:
    """Dump a sequence in the on-disk layout load_sequence expects."""
    import csv
    from pathlib import Path

    from PIL import Image

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        Image.fromarray(frame, mode="L").save(out / f"frame_{t:05d}.png")
    with open(out / "annotations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "id", "x", "y", "w", "h", "class"])
        for t, anns in enumerate(seq.annotations):
            for tid, (x, y, w, h), class_id in anns:
                writer.writerow([t, tid, f"{x:g}", f"{y:g}", f"{w:g}",
                                 f"{h:g}", class_id])
