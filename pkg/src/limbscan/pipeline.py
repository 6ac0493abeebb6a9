"""End-to-end pipeline: scene -> render -> extract -> plan -> register ->
transfer -> scan -> report, plus the parameter sweep.

All stage artifacts are written under the configured output directory. The
main report (report.json) contains only deterministic quantities so repeated
runs with the same seed are byte-identical; wall-clock stage timings go to a
separate timings.json.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import pointio
from .errors import ConfigError, LimbscanError, StageError
from .extraction import ExtractionParams, JointPixels, extract_arm
from .geometry import PointCloud3
from .registration import (ArmObservation, SolveParams, build_graph,
                           initial_align, solve, transfer_trajectory)
from .scan import ScanParams, radius_report, reconstruct, run_scan
from .scene import (UP, ArticulatedPose, articulate, default_camera,
                    hinge_points, joint_pixels, make_template, render_depth)
from .trajectory import ScanTrajectory, project_trajectory, smooth_centerline

STAGES = ("scene", "render", "extract", "plan", "register", "transfer",
          "scan", "report")


@dataclass(frozen=True)
class SceneConfig:
    elbow_angle: float = 160.0
    length_forearm: float = 250.0
    length_upperarm: float = 280.0
    blend_halfwidth: float = 30.0
    noise_sigma: float = 0.0
    render_pitch: float = 1.0
    camera_height: float = 800.0


@dataclass(frozen=True)
class PlanConfig:
    scan_start_mm: float = 100.0
    scan_length_mm: float = 70.0
    smooth_window: int = 5


@dataclass(frozen=True)
class RegistrationConfig:
    alpha1: float = 10.0
    alpha2: float = 100.0
    radius: float = 15.0
    tol: float = 1e-5


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output_dir: str = "out"
    scene: SceneConfig = field(default_factory=SceneConfig)
    extraction: ExtractionParams = field(default_factory=ExtractionParams)
    plan: PlanConfig = field(default_factory=PlanConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    scan: ScanParams = field(default_factory=ScanParams)


_SECTIONS = {"scene": SceneConfig, "extraction": ExtractionParams,
             "plan": PlanConfig, "registration": RegistrationConfig,
             "scan": ScanParams}


def config_from_dict(data: dict) -> PipelineConfig:
    """Build and validate a PipelineConfig; errors name the offending field."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = {"seed", "output_dir", *_SECTIONS}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config field '{key}'")
    kwargs = {}
    if "seed" in data:
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            raise ConfigError("field 'seed' must be an integer")
        kwargs["seed"] = data["seed"]
    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            raise ConfigError("field 'output_dir' must be a string")
        kwargs["output_dir"] = data["output_dir"]
    for section, cls in _SECTIONS.items():
        sub = data.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"section '{section}' must be a mapping")
        valid = set(cls.__dataclass_fields__)
        for fname, value in sub.items():
            if fname not in valid:
                raise ConfigError(f"unknown field '{section}.{fname}'")
            if isinstance(value, bool) and cls.__dataclass_fields__[fname].type != "bool":
                raise ConfigError(f"field '{section}.{fname}' must be numeric")
        try:
            kwargs[section] = cls(**sub)
        except LimbscanError as exc:
            raise ConfigError(f"section '{section}': {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"section '{section}': {exc}") from exc
    cfg = PipelineConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig) -> None:
    sc = cfg.scene
    # the template is only articulable without self-intersection above 90 deg
    if not (90.0 < sc.elbow_angle <= 180.0):
        raise ConfigError(
            f"field 'scene.elbow_angle' = {sc.elbow_angle} outside valid range (90, 180]")
    if sc.length_forearm <= 50 or sc.length_upperarm <= 50:
        raise ConfigError("field 'scene.length_forearm'/'scene.length_upperarm' "
                          "must exceed 50 mm")
    if sc.noise_sigma < 0:
        raise ConfigError("field 'scene.noise_sigma' must be >= 0")
    if sc.render_pitch <= 0 or sc.camera_height <= 0:
        raise ConfigError("field 'scene.render_pitch'/'scene.camera_height' "
                          "must be positive")
    pl = cfg.plan
    margin = 5.0
    if pl.scan_length_mm <= 0:
        raise ConfigError("field 'plan.scan_length_mm' must be positive")
    if pl.smooth_window < 1 or pl.smooth_window % 2 == 0:
        raise ConfigError("field 'plan.smooth_window' must be odd and >= 1")
    if not (margin <= pl.scan_start_mm
            and pl.scan_start_mm + pl.scan_length_mm <= sc.length_forearm - margin):
        raise ConfigError(
            "field 'plan.scan_start_mm': scan span must stay within the forearm "
            f"vessel, [{margin}, {sc.length_forearm - margin}] mm")
    rg = cfg.registration
    if rg.alpha1 < 0 or rg.alpha2 < 0:
        raise ConfigError("field 'registration.alpha1'/'alpha2' must be >= 0")
    if rg.radius <= 0:
        raise ConfigError("field 'registration.radius' must be positive")
    if rg.tol <= 0:
        raise ConfigError("field 'registration.tol' must be positive")


def load_config(path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)


@dataclass
class RunReport:
    config: dict
    registration_history: list
    trajectory_rms: float
    radius_segments: list
    radius_global_mean: float
    radius_global_error: float
    correction_count: int
    vessel_lost_count: int
    stages_completed: list

    def to_dict(self) -> dict:
        return asdict(self)


def _observation_from_atlas(atlas) -> ArmObservation:
    cloud, axial, _ = atlas.top_shell()
    fm = axial <= atlas.elbow_axial
    return ArmObservation(PointCloud3(cloud.points[fm]), PointCloud3(cloud.points[~fm]),
                          atlas.wrist, atlas.elbow, atlas.shoulder)


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Execute every stage, writing artifacts under cfg.output_dir.

    Raises StageError with the failing stage's name; artifacts produced by
    earlier stages stay on disk.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    completed: list[str] = []

    def stage(name):
        def wrap(fn):
            t0 = time.perf_counter()
            try:
                result = fn()
            except LimbscanError as exc:
                raise StageError(name, exc) from exc
            timings[name] = time.perf_counter() - t0
            completed.append(name)
            return result
        return wrap

    # ---- scene
    def _scene():
        template = make_template(seed=cfg.seed,
                                 length_forearm=cfg.scene.length_forearm,
                                 length_upperarm=cfg.scene.length_upperarm)
        atlas = articulate(template, ArticulatedPose(180.0))
        posed = articulate(template, ArticulatedPose(
            cfg.scene.elbow_angle, blend_halfwidth=cfg.scene.blend_halfwidth))
        pointio.write_ply(out / "atlas_surface.ply", atlas.surface)
        pointio.write_ply(out / "scene_surface.ply", posed.surface)
        pointio.write_points_csv(out / "scene_centerline.csv", posed.centerline.points)
        return template, atlas, posed
    template, atlas, posed = stage("scene")(_scene)

    # ---- render
    def _render():
        camera, w, h = default_camera(posed, height=cfg.scene.camera_height,
                                      pitch=cfg.scene.render_pitch)
        img = render_depth(posed, camera, w, h, cfg.scene.render_pitch,
                           noise_sigma=cfg.scene.noise_sigma, noise_seed=cfg.seed)
        pointio.write_depth_pgm(out / "depth.pgm", img.depth)
        return img
    img = stage("render")(_render)

    # ---- extract
    def _extract():
        jp = joint_pixels(img, posed)
        joints = JointPixels(jp["wrist"], jp["elbow"], jp["shoulder"])
        seg = extract_arm(img, joints, cfg.extraction)
        pointio.write_ply(out / "extracted_forearm.ply", seg.forearm)
        pointio.write_ply(out / "extracted_upperarm.ply", seg.upperarm)
        return seg
    segmented = stage("extract")(_extract)

    # ---- plan (on the atlas)
    def _plan():
        ca = atlas.centerline_axial
        lo = cfg.plan.scan_start_mm
        hi = lo + cfg.plan.scan_length_mm
        span = (ca >= lo - 1e-9) & (ca <= hi + 1e-9)
        cl = smooth_centerline(atlas.centerline.points[span], cfg.plan.smooth_window)
        shell, _, _ = atlas.top_shell()
        traj = project_trajectory(cl, shell, UP)
        pointio.write_points_csv(out / "atlas_trajectory.csv", traj.surface_points)
        return traj
    atlas_traj = stage("plan")(_plan)

    # ---- register
    def _register():
        source = _observation_from_atlas(atlas)
        target = ArmObservation(segmented.forearm, segmented.upperarm,
                                posed.wrist, posed.elbow, posed.shoulder)
        aligned, _, _, maps = initial_align(source, target)
        graph = build_graph(aligned.union_points(), cfg.registration.radius)
        params = SolveParams(alpha1=cfg.registration.alpha1,
                             alpha2=cfg.registration.alpha2,
                             tol=cfg.registration.tol)
        graph, history = solve(graph, aligned.union_points(),
                               target.union_points(), params)
        (out / "graph.json").write_text(
            json.dumps(graph.to_dict(), sort_keys=True) + "\n")
        return target, maps, graph, history
    target_obs, seg_maps, graph, history = stage("register")(_register)

    # ---- transfer
    def _transfer():
        # trajectory points live on the neutral atlas; their x coordinate is
        # the axial coordinate, which picks the segment map to apply first
        pts = atlas_traj.surface_points
        fm = pts[:, 0] <= atlas.elbow_axial
        pre = np.empty_like(pts)
        if fm.any():
            pre[fm] = seg_maps["forearm"](pts[fm])
        if (~fm).any():
            pre[~fm] = seg_maps["upperarm"](pts[~fm])
        aligned_traj = ScanTrajectory(pre, atlas_traj.centerline_indices)
        moved = transfer_trajectory(aligned_traj, graph,
                                    target_obs.forearm, UP)
        pointio.write_points_csv(out / "transferred_trajectory.csv",
                                 moved.surface_points)
        return moved
    transferred = stage("transfer")(_transfer)

    # ---- scan
    def _scan():
        result = run_scan(posed, transferred, cfg.scan)
        frame_dir = out / "frames"
        frame_dir.mkdir(exist_ok=True)
        for i, f in enumerate(result.frames):
            pointio.write_mask_pgm(frame_dir / f"frame_{i:04d}.pgm", f.mask)
        rows = [np.concatenate([p.translation, p.rotation.ravel()])
                for p in result.executed_poses]
        pointio.write_points_csv(out / "executed_poses.csv", np.asarray(rows),
                                 header="tx,ty,tz," + ",".join(
                                     f"r{i}{j}" for i in range(3) for j in range(3)))
        return result
    scan_result = stage("scan")(_scan)

    # ---- report
    def _report():
        vessel = reconstruct(scan_result.frames)
        radii = radius_report(vessel, 14, posed)
        # ground truth: the planned atlas points carried through the true hinge
        truth = hinge_points(atlas_traj.surface_points,
                             atlas_traj.surface_points[:, 0], template.elbow,
                             cfg.scene.elbow_angle, cfg.scene.blend_halfwidth)
        diff = transferred.surface_points - truth
        rms = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))
        report = RunReport(
            config=config_to_dict(cfg),
            registration_history=[float(h) for h in history],
            trajectory_rms=rms,
            radius_segments=[list(s) for s in radii.sub_segments],
            radius_global_mean=radii.global_mean,
            radius_global_error=radii.global_error,
            correction_count=len(scan_result.corrections),
            vessel_lost_count=scan_result.vessel_lost_count,
            stages_completed=list(completed) + ["report"],
        )
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
        return report
    report = stage("report")(_report)

    (out / "timings.json").write_text(
        json.dumps(timings, sort_keys=True, indent=2) + "\n")
    return report


def sweep(base: PipelineConfig, angles=(120.0, 140.0, 160.0), seeds=(0,),
          out_csv: str | None = None) -> list[dict]:
    """Run the pipeline per (angle, seed) grid cell; failures stay isolated."""
    rows: list[dict] = []
    base_out = Path(base.output_dir)
    for angle in angles:
        for seed in seeds:
            cell_dir = base_out / f"angle{angle:g}_seed{seed}"
            cfg = replace(base, seed=seed, output_dir=str(cell_dir),
                          scene=replace(base.scene, elbow_angle=angle))
            row = {"angle": angle, "seed": seed, "status": "ok",
                   "trajectory_rms": "", "radius_global_error": "",
                   "radius_max_segment_error": "", "corrections": "",
                   "vessel_lost": "", "error": ""}
            try:
                _validate(cfg)
                rep = run_pipeline(cfg)
                row.update({
                    "trajectory_rms": rep.trajectory_rms,
                    "radius_global_error": rep.radius_global_error,
                    "radius_max_segment_error": max(s[3] for s in rep.radius_segments),
                    "corrections": rep.correction_count,
                    "vessel_lost": rep.vessel_lost_count,
                })
            except (LimbscanError, StageError) as exc:
                row["status"] = "failed"
                row["error"] = str(exc)
            rows.append(row)
    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows
