"""Command line interface."""

from __future__ import annotations

import csv
import json
import os
import sys
from dataclasses import replace

import click

from . import codec, detect, harness, metrics, synth


def _parse_mode(spec: str):
    kind, _, value = spec.partition("=")
    if kind == "const-lambda":
        return codec.ConstLambda(float(value))
    if kind == "const-rate":
        return harness.ConstRateFraction(float(value))
    raise click.BadParameter(
        f"mode must be const-lambda=L or const-rate=FRACTION, got {spec!r}")


def _parse_transport(spec: str) -> str:
    if spec == "inproc":
        return spec
    if spec.startswith("tcp"):
        _, _, addr = spec.partition("=")
        return f"tcp:{addr}" if addr else "tcp"
    raise click.BadParameter("transport must be inproc or tcp[=HOST:PORT]")


def _seed(value: int) -> int:
    env = os.environ.get("QTRACK_SEED")
    return int(env) if env else value


def _noise(preset: str) -> detect.OracleNoiseModel:
    try:
        return detect.NOISE_PRESETS[preset]
    except KeyError:
        raise click.BadParameter(
            f"noise preset must be one of {sorted(detect.NOISE_PRESETS)}")


def _run_config(mode, w_roi, w_bg, wd, wt, noise, seed, transport) -> harness.RunConfig:
    return harness.RunConfig(
        mode=_parse_mode(mode), w_roi=w_roi, w_bg=w_bg, w_d=wd, w_t=wt,
        noise=_noise(noise), seed=_seed(seed),
        transport=_parse_transport(transport))


_run_options = [
    click.option("--seq", "seq_dir", required=True, type=click.Path(exists=True),
                 help="Directory of frames + annotations.csv."),
    click.option("--mode", default="const-lambda=100",
                 help="const-lambda=L or const-rate=FRACTION."),
    click.option("--w-roi", default=1e7, show_default=True),
    click.option("--w-bg", default=1e6, show_default=True),
    click.option("--wd", default=1.0, show_default=True,
                 help="Detector confidence weight."),
    click.option("--wt", default=1.0, show_default=True,
                 help="Tracking confidence weight."),
    click.option("--detector", default="oracle", type=click.Choice(["oracle"])),
    click.option("--noise", default="none", show_default=True,
                 help="Oracle noise preset: none, mild or heavy."),
    click.option("--seed", default=0, show_default=True,
                 help="Overridden by QTRACK_SEED when set."),
    click.option("--transport", default="inproc", show_default=True,
                 help="inproc or tcp[=HOST:PORT]."),
    click.option("--side", default=512, show_default=True,
                 help="Square power-of-two side frames are letterboxed to."),
    click.option("--out", "out_dir", required=True, type=click.Path()),
]


def _with_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
def main():
    """Bandwidth-constrained adaptive acquisition simulator."""


@main.command()
@_with_options(_run_options)
def run(seq_dir, mode, w_roi, w_bg, wd, wt, detector, noise, seed, transport,
        side, out_dir):
    """Run the full host-chip loop once and write reports."""
    seq = harness.load_sequence(seq_dir, target_side=side)
    cfg = _run_config(mode, w_roi, w_bg, wd, wt, noise, seed, transport)
    report = harness.run_simulation(seq, cfg)
    harness.write_report(report, out_dir)
    if report.mot:
        click.echo(f"MOTA_full={report.mot.mota_full:.4f} "
                   f"MOTA_mod={report.mot.mota_mod:.4f}")
    click.echo(f"mean rate {report.rate_mean:.0f} bits/frame, "
               f"mean PSNR {report.psnr_mean:.2f} dB -> {out_dir}")


@main.command()
@click.option("--axis", required=True,
              help="lambda=50,100,... | rate=0.0075,... | "
                   "fusion=1:0,1:1,... | binning=2,4,8,16")
@_with_options(_run_options)
def sweep(axis, seq_dir, mode, w_roi, w_bg, wd, wt, detector, noise, seed,
          transport, side, out_dir):
    """Run one simulation per axis point; write sweep.csv and SVG plots."""
    seq = harness.load_sequence(seq_dir, target_side=side)
    cfg = _run_config(mode, w_roi, w_bg, wd, wt, noise, seed, transport)
    kind, _, values = axis.partition("=")
    if kind == "lambda":
        ax = harness.LambdaSet(tuple(float(v) for v in values.split(",")))
    elif kind == "rate":
        ax = harness.RateFractions(tuple(float(v) for v in values.split(",")))
    elif kind == "fusion":
        pairs = tuple(tuple(float(x) for x in pair.split(":"))
                      for pair in values.split(","))
        ax = harness.FusionGrid(pairs)
    elif kind == "binning":
        ax = harness.UniformBinning(tuple(int(v) for v in values.split(",")))
    else:
        raise click.BadParameter(f"unknown sweep axis {kind!r}")
    report = harness.sweep(seq, cfg, ax)
    harness.write_sweep(report, seq.side, out_dir)
    click.echo(f"{len(report.points)} sweep points -> {out_dir}")


@main.command("export-training")
@click.option("--seq", "seq_dir", required=True, type=click.Path(exists=True))
@click.option("--step", default=1, type=click.IntRange(1, 2), show_default=True)
@click.option("--lambdas", default="50,100,250,400,650", show_default=True)
@click.option("--w-roi", default=1e7, show_default=True)
@click.option("--w-bg", default=1e6, show_default=True)
@click.option("--noise", default="none", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--side", default=512, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def export_training(seq_dir, step, lambdas, w_roi, w_bg, noise, seed, side,
                    out_dir):
    """Export distorted frames for detector training (lambda 0 included)."""
    seq = harness.load_sequence(seq_dir, target_side=side)
    cfg = detect.ExportConfig(
        lambdas=tuple(float(v) for v in lambdas.split(",")), step=step,
        weights=(w_roi, w_bg), noise=replace(_noise(noise), seed=_seed(seed)),
        output_dir=out_dir)
    manifest = detect.export_training_data(seq, cfg)
    click.echo(f"exported {len(manifest)} frames -> {out_dir}")


@main.command()
@click.option("--tracks", "tracks_file", required=True,
              type=click.Path(exists=True), help="tracks.csv from a run.")
@click.option("--gt", "gt_file", required=True, type=click.Path(exists=True),
              help="Ground-truth annotations CSV (frame,id,x,y,w,h,class).")
@click.option("--match-iou", default=0.5, show_default=True)
def eval(tracks_file, gt_file, match_iou):
    """MOTA of a track file against ground truth."""
    hyp: metrics.TrackTable = {}
    with open(tracks_file, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            box = (float(row["x"]), float(row["y"]),
                   float(row["w"]), float(row["h"]))
            hyp.setdefault(int(row["frame_index"]), []).append(
                (int(row["track_id"]), box))
    gt: metrics.TrackTable = {}
    with open(gt_file, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            box = (float(row["x"]), float(row["y"]),
                   float(row["w"]), float(row["h"]))
            gt.setdefault(int(row["frame"]), []).append((int(row["id"]), box))
    result = metrics.mota(gt, hyp, match_iou=match_iou)
    click.echo(json.dumps({"mota_full": result.mota_full,
                           "mota_mod": result.mota_mod}, sort_keys=True))


@main.command()
@click.option("--frames", default=64, show_default=True)
@click.option("--side", default=64, show_default=True)
@click.option("--objects", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def synthesize(frames, side, objects, seed, out_dir):
    """Generate a synthetic demo sequence in the expected on-disk layout."""
    seq = synth.moving_squares_sequence(frames, side=side, n_objects=objects,
                                        seed=_seed(seed))
    synth.write_sequence_dir(seq, out_dir)
    click.echo(f"wrote {frames} frames -> {out_dir}")


if __name__ == "__main__":
    sys.exit(main())
