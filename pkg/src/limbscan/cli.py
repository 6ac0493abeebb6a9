"""Command-line interface.

Subcommands: scene, render, extract, plan, register, scan, pipeline, sweep.
Exit codes: 0 success, 2 configuration/usage error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pointio
from .errors import ConfigError, LimbscanError, StageError
from .extraction import ExtractionParams, JointPixels, extract_arm
from .geometry import PointCloud3, RigidTransform
from .pipeline import (PipelineConfig, config_from_dict, load_config,
                       run_pipeline, sweep)
from .registration import (ArmObservation, SolveParams, build_graph,
                           initial_align, solve)
from .scan import ScanParams, radius_report, reconstruct, run_scan
from .scene import (UP, ArticulatedPose, DepthImage, articulate,
                    default_camera, joint_pixels, make_template, render_depth)
from .trajectory import ScanTrajectory, project_trajectory, smooth_centerline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    if getattr(args, "angle", None) is not None:
        cfg = config_from_dict({**_cfg_dict(cfg),
                                "scene": {**_cfg_dict(cfg)["scene"],
                                          "elbow_angle": args.angle}})
    return cfg


def _cfg_dict(cfg: PipelineConfig) -> dict:
    from .pipeline import config_to_dict
    return config_to_dict(cfg)


def _build_scene(cfg: PipelineConfig):
    template = make_template(seed=cfg.seed,
                             length_forearm=cfg.scene.length_forearm,
                             length_upperarm=cfg.scene.length_upperarm)
    atlas = articulate(template, ArticulatedPose(180.0))
    posed = articulate(template, ArticulatedPose(
        cfg.scene.elbow_angle, blend_halfwidth=cfg.scene.blend_halfwidth))
    return template, atlas, posed


def _cmd_scene(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, atlas, posed = _build_scene(cfg)
    pointio.write_ply(out / "atlas_surface.ply", atlas.surface)
    pointio.write_ply(out / "scene_surface.ply", posed.surface)
    pointio.write_points_csv(out / "atlas_centerline.csv", atlas.centerline.points)
    pointio.write_points_csv(out / "scene_centerline.csv", posed.centerline.points)
    joints = {name: list(map(float, getattr(posed, name)))
              for name in ("wrist", "elbow", "shoulder")}
    (out / "scene_joints.json").write_text(json.dumps(joints, sort_keys=True, indent=2) + "\n")
    print(f"scene written to {out}")
    return EXIT_OK


def _cmd_render(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, _, posed = _build_scene(cfg)
    camera, w, h = default_camera(posed, height=cfg.scene.camera_height,
                                  pitch=cfg.scene.render_pitch)
    img = render_depth(posed, camera, w, h, cfg.scene.render_pitch,
                       noise_sigma=cfg.scene.noise_sigma, noise_seed=cfg.seed)
    pointio.write_depth_pgm(out / "depth.pgm", img.depth)
    meta = {"pitch": img.pitch, "table_depth": img.table_depth,
            "camera_rotation": img.camera_pose.rotation.tolist(),
            "camera_translation": img.camera_pose.translation.tolist(),
            "joint_pixels": {k: list(map(int, v))
                             for k, v in joint_pixels(img, posed).items()}}
    (out / "depth_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    print(f"depth image written to {out / 'depth.pgm'}")
    return EXIT_OK


def _read_depth(depth_path, meta_path) -> tuple[DepthImage, dict]:
    depth = pointio.read_depth_pgm(depth_path)
    meta = json.loads(Path(meta_path).read_text())
    camera = RigidTransform(np.asarray(meta["camera_rotation"], dtype=float),
                            np.asarray(meta["camera_translation"], dtype=float))
    return DepthImage(depth, float(meta["pitch"]), camera,
                      float(meta["table_depth"])), meta


def _parse_joint_pixels(text: str) -> JointPixels:
    try:
        triples = [tuple(int(v) for v in part.split(",")) for part in text.split()]
        w, e, s = triples
        return JointPixels(w, e, s)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"--joints must be 'r,c r,c r,c': {exc}") from exc


def _cmd_extract(args) -> int:
    img, meta = _read_depth(args.depth, args.meta)
    if args.joints:
        joints = _parse_joint_pixels(args.joints)
    else:
        jp = meta.get("joint_pixels")
        if jp is None:
            raise ConfigError("no --joints given and no joint_pixels in the meta file")
        joints = JointPixels(tuple(jp["wrist"]), tuple(jp["elbow"]), tuple(jp["shoulder"]))
    params = ExtractionParams(depth_jump_threshold=args.td,
                              continuity_slack=args.tl,
                              seed_spacing=args.spacing)
    seg = extract_arm(img, joints, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pointio.write_ply(out / "forearm.ply", seg.forearm)
    pointio.write_ply(out / "upperarm.ply", seg.upperarm)
    report = {
        "forearm_seeds": len(seg.forearm_seeds),
        "upperarm_seeds": len(seg.upperarm_seeds),
        "forearm_widths": [[s.half_width_left, s.half_width_right]
                           for s in seg.forearm_seeds],
        "upperarm_widths": [[s.half_width_left, s.half_width_right]
                            for s in seg.upperarm_seeds],
    }
    (out / "extract_report.json").write_text(json.dumps(report, sort_keys=True) + "\n")
    print(f"extracted {len(seg.forearm)} forearm / {len(seg.upperarm)} upper-arm points")
    return EXIT_OK


def _cmd_plan(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, atlas, _ = _build_scene(cfg)
    ca = atlas.centerline_axial
    lo = cfg.plan.scan_start_mm
    hi = lo + cfg.plan.scan_length_mm
    span = (ca >= lo - 1e-9) & (ca <= hi + 1e-9)
    cl = smooth_centerline(atlas.centerline.points[span], cfg.plan.smooth_window)
    shell, _, _ = atlas.top_shell()
    traj = project_trajectory(cl, shell, UP)
    rows = np.column_stack([np.arange(len(traj)), traj.centerline_indices,
                            traj.surface_points])
    pointio.write_points_csv(out / "atlas_trajectory.csv", rows,
                             header="index,centerline_index,x,y,z")
    print(f"trajectory with {len(traj)} points written to {out}")
    return EXIT_OK


def _parse_joints_xyz(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        parts = [np.array([float(v) for v in part.split(",")]) for part in text.split(";")]
        w, e, s = parts
        return w, e, s
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"joints must be 'x,y,z;x,y,z;x,y,z': {exc}") from exc


def _cmd_register(args) -> int:
    src = ArmObservation(pointio.read_ply(args.atlas_forearm),
                         pointio.read_ply(args.atlas_upperarm),
                         *_parse_joints_xyz(args.joints_atlas))
    tgt = ArmObservation(pointio.read_ply(args.scene_forearm),
                         pointio.read_ply(args.scene_upperarm),
                         *_parse_joints_xyz(args.joints_scene))
    aligned, _, _, _ = initial_align(src, tgt)
    graph = build_graph(aligned.union_points(), args.radius)
    params = SolveParams(alpha1=args.alpha1, alpha2=args.alpha2)
    graph, history = solve(graph, aligned.union_points(), tgt.union_points(), params)
    Path(args.out_graph).write_text(json.dumps(graph.to_dict(), sort_keys=True) + "\n")
    if args.out_history:
        Path(args.out_history).write_text(
            "step,energy\n" + "\n".join(f"{i},{e!r}" for i, e in enumerate(history)) + "\n")
    print(f"registered: {graph.n_nodes} nodes, final energy {history[-1]:.6g}")
    return EXIT_OK


def _cmd_scan(args) -> int:
    cfg = _load_cfg(args)
    scan_cfg = cfg.scan
    if args.sigma is not None:
        scan_cfg = replace(scan_cfg, sigma=args.sigma)
    if args.bias_inject is not None:
        scan_cfg = replace(scan_cfg, lateral_bias=args.bias_inject)
    _, _, posed = _build_scene(cfg)
    data = pointio.read_points_csv(args.traj)
    pts = data[:, -3:]
    # probe orientations: z into the skin via the nearest scene surface normal
    from .registration import transfer_trajectory
    from .registration import DeformationGraph
    shell, _, _ = posed.top_shell()
    identity = _identity_graph(pts)
    traj = transfer_trajectory(ScanTrajectory(pts, np.arange(len(pts))),
                               identity, shell, UP)
    result = run_scan(posed, traj, scan_cfg)
    frames_dir = Path(args.out_frames)
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(result.frames):
        pointio.write_mask_pgm(frames_dir / f"frame_{i:04d}.pgm", f.mask)
    rows = [np.concatenate([p.translation, p.rotation.ravel()])
            for p in result.executed_poses]
    pointio.write_points_csv(frames_dir / "poses.csv", np.asarray(rows),
                             header="tx,ty,tz," + ",".join(
                                 f"r{i}{j}" for i in range(3) for j in range(3)))
    vessel = reconstruct(result.frames)
    radii = radius_report(vessel, 14, posed)
    report = {
        "sub_segments": [list(s) for s in radii.sub_segments],
        "global_mean_radius": radii.global_mean,
        "global_radius_error": radii.global_error,
        "corrections": result.corrections,
        "vessel_lost_count": result.vessel_lost_count,
    }
    Path(args.report).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"scan complete: {len(result.frames)} frames, "
          f"{len(result.corrections)} corrections, report at {args.report}")
    return EXIT_OK


def _identity_graph(pts: np.ndarray):
    from .registration import DeformationGraph
    span = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) + 1.0
    return DeformationGraph(
        node_positions=pts.mean(axis=0, keepdims=True),
        affines=np.eye(3)[None], translations=np.zeros((1, 3)),
        neighbors=[[]], sampling_radius=span,
        bind_idx=np.zeros((len(pts), 1), dtype=int),
        bind_w=np.ones((len(pts), 1)))


def _cmd_pipeline(args) -> int:
    cfg = _load_cfg(args)
    report = run_pipeline(cfg)
    print(f"pipeline complete: trajectory RMS {report.trajectory_rms:.3f} mm, "
          f"radius error {report.radius_global_error:.4f} mm, "
          f"report at {Path(cfg.output_dir) / 'report.json'}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    angles = tuple(float(a) for a in args.angles.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows = sweep(cfg, angles=angles, seeds=seeds, out_csv=args.out_csv)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"sweep: {len(rows)} cells, {len(failed)} failed, CSV at {args.out_csv}")
    return EXIT_OK if not failed else EXIT_STAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limbscan",
        description="Limb-surface ultrasound scan-trajectory planning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=None):
        p.add_argument("--config", help="pipeline YAML config file")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--angle", type=float, default=None,
                       help="override scene elbow angle (degrees)")

    common(sub.add_parser("scene", help="generate atlas + posed scene clouds"))
    common(sub.add_parser("render", help="render the top-down depth image"))

    p = sub.add_parser("extract", help="extract arm surface from a depth image")
    p.add_argument("--depth", required=True, help="16-bit depth PGM")
    p.add_argument("--meta", required=True, help="depth meta JSON from render")
    p.add_argument("--joints", default=None, help="'r,c r,c r,c' wrist elbow shoulder")
    p.add_argument("--td", type=float, default=20000.0, help="depth jump threshold mm^2")
    p.add_argument("--tl", type=float, default=10.0, help="continuity slack mm")
    p.add_argument("--spacing", type=int, default=3, help="seed spacing px")
    p.add_argument("--out", required=True, help="output directory")

    common(sub.add_parser("plan", help="plan the scan trajectory on the atlas"))

    p = sub.add_parser("register", help="non-rigid atlas-to-scene registration")
    p.add_argument("--atlas-forearm", required=True)
    p.add_argument("--atlas-upperarm", required=True)
    p.add_argument("--scene-forearm", required=True)
    p.add_argument("--scene-upperarm", required=True)
    p.add_argument("--joints-atlas", required=True, help="'x,y,z;x,y,z;x,y,z'")
    p.add_argument("--joints-scene", required=True, help="'x,y,z;x,y,z;x,y,z'")
    p.add_argument("--alpha1", type=float, default=10.0)
    p.add_argument("--alpha2", type=float, default=100.0)
    p.add_argument("--radius", type=float, default=15.0)
    p.add_argument("--out-graph", required=True)
    p.add_argument("--out-history", default=None)

    p = sub.add_parser("scan", help="simulate the scan along a trajectory")
    common(p)
    p.add_argument("--traj", required=True, help="trajectory CSV (x,y,z last columns)")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--bias-inject", type=float, default=None,
                   help="constant lateral bias mm")
    p.add_argument("--out-frames", required=True)
    p.add_argument("--report", required=True)

    common(sub.add_parser("pipeline", help="run the full pipeline"))

    p = sub.add_parser("sweep", help="run the pipeline over an angle/seed grid")
    common(p)
    p.add_argument("--angles", default="120,140,160")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out-csv", default="sweep.csv")

    return parser


_COMMANDS = {
    "scene": _cmd_scene, "render": _cmd_render, "extract": _cmd_extract,
    "plan": _cmd_plan, "register": _cmd_register, "scan": _cmd_scan,
    "pipeline": _cmd_pipeline, "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except LimbscanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    raise SystemExit(main())
