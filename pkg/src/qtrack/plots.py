"""Static SVG figures for sweep reports."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_METRICS = ("mota_full", "mota_mod", "psnr", "ssim")


def sweep_plots(axis_name: str, rows: List[Dict], outdir) -> List[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    xs = [row["value"] for row in rows]
    written = []
    for metric in _METRICS:
        ys = [row[metric] for row in rows]
        if all(isinstance(y, float) and math.isnan(y) for y in ys):
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(axis_name)
        ax.set_ylabel(metric)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out / f"{metric}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
