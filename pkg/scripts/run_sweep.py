#!/usr/bin/env python3
"""Sweep the pipeline over an elbow-angle x seed grid and print a table.

Usage:
    python3 scripts/run_sweep.py [--angles 120,140,160] [--seeds 0,1]
                                 [--out sweep_out] [--csv sweep.csv]
"""
import argparse
from dataclasses import replace

from limbscan.pipeline import config_from_dict, sweep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--angles", default="120,140,160")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--out", default="sweep_out")
    ap.add_argument("--csv", default="sweep.csv")
    args = ap.parse_args()

    angles = tuple(float(a) for a in args.angles.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    base = replace(config_from_dict({}), output_dir=args.out)
    rows = sweep(base, angles=angles, seeds=seeds, out_csv=args.csv)

    print(f"{'angle':>6} {'seed':>4} {'status':>7} {'traj RMS':>9} "
          f"{'r err':>7} {'max seg':>8} {'corr':>5} {'lost':>5}")
    failed = 0
    for r in rows:
        if r["status"] == "ok":
            print(f"{r['angle']:>6g} {r['seed']:>4} {r['status']:>7} "
                  f"{r['trajectory_rms']:>9.3f} {r['radius_global_error']:>7.4f} "
                  f"{r['radius_max_segment_error']:>8.4f} "
                  f"{r['corrections']:>5} {r['vessel_lost']:>5}")
        else:
            failed += 1
            print(f"{r['angle']:>6g} {r['seed']:>4} {r['status']:>7}  {r['error']}")
    print(f"\n{len(rows)} cells, {failed} failed; CSV at {args.csv}")
    return 0 if failed == 0 else 3


if __name__ == "__main__":
    raise SystemExit(main())
