#!/usr/bin/env python3
"""Run the full scan-planning pipeline once and print a summary.

Usage:
    python3 scripts/run_pipeline.py [--config cfg.yaml] [--out out_dir]
                                    [--angle 140] [--seed 1]
"""
import argparse
import sys
from dataclasses import replace

from limbscan.errors import ConfigError, StageError
from limbscan.pipeline import config_from_dict, load_config, run_pipeline


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="pipeline YAML config")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--angle", type=float, help="elbow angle override (deg)")
    ap.add_argument("--seed", type=int, help="seed override")
    args = ap.parse_args()

    try:
        cfg = load_config(args.config) if args.config else config_from_dict({})
        cfg = replace(cfg, output_dir=args.out)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.angle is not None:
            cfg = replace(cfg, scene=replace(cfg.scene, elbow_angle=args.angle))
        report = run_pipeline(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 3

    h = report.registration_history
    print(f"elbow angle           {cfg.scene.elbow_angle:g} deg, seed {cfg.seed}")
    print(f"registration energy   {h[0]:.4g} -> {h[-1]:.4g} ({len(h)} accepted steps)")
    print(f"trajectory RMS        {report.trajectory_rms:.3f} mm")
    print(f"radius global error   {report.radius_global_error:.4f} mm "
          f"(mean {report.radius_global_mean:.4f} mm)")
    worst = max(s[3] for s in report.radius_segments)
    print(f"worst segment error   {worst:.4f} mm over {len(report.radius_segments)} segments")
    print(f"servo corrections     {report.correction_count}, "
          f"vessel lost {report.vessel_lost_count}")
    print(f"artifacts under       {cfg.output_dir}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
