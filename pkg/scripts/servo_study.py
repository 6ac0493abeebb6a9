#!/usr/bin/env python3
"""Centering-servo study: settled lateral error over a bias x sigma grid.

Scans a straight neutral arm with a constant lateral offset injected into
every waypoint and reports, per (bias, sigma) cell, the worst settled
centroid error after warm-up, the number of corrections, and lost frames.

Usage:
    python3 scripts/servo_study.py [--biases 1,3,5] [--sigmas 0.6,0.8,0.95]
"""
import argparse

import numpy as np

from limbscan.geometry import RigidTransform
from limbscan.scan import ScanParams, run_scan
from limbscan.scene import ArticulatedPose, articulate, make_template
from limbscan.trajectory import ScanTrajectory

DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def straight_trajectory(arm, x0=100.0, x1=170.0, step=1.0):
    xs = np.arange(x0, x1 + 1e-9, step)
    pts = np.column_stack([xs, np.zeros_like(xs),
                           np.full_like(xs, 2.0 * arm.vertical_b)])
    poses = [RigidTransform(DOWN, p) for p in pts]
    return ScanTrajectory(pts, np.arange(len(pts)), poses)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--biases", default="1,3,5", help="lateral biases, mm")
    ap.add_argument("--sigmas", default="0.6,0.8,0.95", help="decay weights")
    ap.add_argument("--warmup", type=int, default=10, help="warm-up frames")
    args = ap.parse_args()

    arm = articulate(make_template(), ArticulatedPose(180.0))
    print(f"{'bias':>5} {'sigma':>6} {'settled err':>12} {'corrections':>12} "
          f"{'lost':>5} {'frames':>7}")
    for bias in (float(b) for b in args.biases.split(",")):
        for sigma in (float(s) for s in args.sigmas.split(",")):
            result = run_scan(arm, straight_trajectory(arm),
                              ScanParams(sigma=sigma, lateral_bias=bias))
            settled = {}
            for e in result.centroid_log:
                settled[e["station"]] = e
            late = [abs(e["error_mm"]) for e in settled.values()
                    if e["frame"] >= args.warmup and e["error_mm"] is not None]
            print(f"{bias:>5g} {sigma:>6g} {max(late):>9.3f} mm "
                  f"{len(result.corrections):>12} "
                  f"{result.vessel_lost_count:>5} {len(result.frames):>7}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
