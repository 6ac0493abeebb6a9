"""Virtual scan loop: cross-section imaging of the posed vessel, the
extrapolated centering servo, 3D reconstruction and sub-segment radius report.

Image frame conventions: the image x-axis (columns) runs along the probe's
long axis, the image z-axis (rows) along the probe's pushing direction.
Column c maps to lateral (c - W/2) * pitch mm, row r to depth
(r + 0.5) * pitch mm, so a centered vessel has its column centroid at
exactly W/2. The hand-eye transform maps the image-frame correction vector
[(W/2 - v_x) * pitch, 0, 0] to a world-frame probe displacement; pixel pitch
is folded in here so the correction is metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidParams, TooFewFrames, VesselLost
from .flowseg import mask_centroid
from .geometry import PointCloud3, RigidTransform
from .scene import ArmTemplate
from .trajectory import ScanTrajectory


@dataclass
class VirtualFrame:
    """One simulated ultrasound cross-section."""

    probe_pose: RigidTransform
    width_px: int
    height_px: int
    pitch: float
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.shape != (self.height_px, self.width_px):
            raise InvalidParams("mask dims must match width/height")
        if self.pitch <= 0:
            raise InvalidParams("pitch must be positive")

    @property
    def empty(self) -> bool:
        return int(self.mask.sum()) == 0


@dataclass
class CenteringState:
    """Last compensation event: trajectory index, world offset and decay."""

    i: int
    delta_p: np.ndarray
    sigma: float

    def __post_init__(self):
        self.delta_p = np.asarray(self.delta_p, dtype=float).reshape(3)
        if not (0.5 < self.sigma < 1.0):
            raise InvalidParams(f"sigma {self.sigma} outside (0.5, 1)")


@dataclass
class ReconstructedVessel:
    centerline_points: PointCloud3
    per_point_radius: np.ndarray
    sub_segments: list = field(default_factory=list)  # (start, end, mean radius)

    def __post_init__(self):
        self.per_point_radius = np.asarray(self.per_point_radius, dtype=float)
        if np.any(self.per_point_radius <= 0):
            raise InvalidParams("radii must be positive")


@dataclass
class RadiusReport:
    sub_segments: list            # (start mm, end mm, mean radius mm, error mm)
    global_mean: float
    global_error: float


@dataclass(frozen=True)
class ScanParams:
    width_px: int = 256
    height_px: int = 160
    pitch: float = 0.1            # mm / px
    sigma: float = 0.8            # Eq. decay weight, in (0.5, 1)
    deadband_px: float = 2.0      # no correction below this centroid error
    lateral_bias: float = 0.0     # injected constant lateral offset, mm
    max_recenter: int = 2         # re-images after a correction, per station
    resample_step: float = 0.05   # vessel polyline resampling, mm

    def __post_init__(self):
        if self.width_px < 2 or self.height_px < 2:
            raise InvalidParams("image must be at least 2x2")
        if self.pitch <= 0 or self.resample_step <= 0:
            raise InvalidParams("pitch and resample_step must be positive")
        if not (0.5 < self.sigma < 1.0):
            raise InvalidParams(f"sigma {self.sigma} outside (0.5, 1)")
        if self.deadband_px < 0 or self.max_recenter < 0:
            raise InvalidParams("deadband and max_recenter must be >= 0")


@dataclass
class ScanResult:
    frames: list
    executed_poses: list
    corrections: list             # dicts: station, frame, delta_p, sigma
    centroid_log: list            # dicts: station, frame, v_x, error_mm
    vessel_lost_count: int
    planned_points: np.ndarray


def image_axes(probe_pose: RigidTransform) -> np.ndarray:
    """World-frame image axes as columns [x_img, y_img, z_img].

    Image x = probe long axis (y), image z = probe push axis (z).
    """
    r = probe_pose.rotation
    x_i = r[:, 1]
    z_i = r[:, 2]
    return np.stack([x_i, np.cross(z_i, x_i), z_i], axis=1)


def hand_eye(probe_pose: RigidTransform) -> RigidTransform:
    """Image-to-base correction transform ^b_I T.

    Maps [(W/2 - v_x) * pitch, 0, 0] to the world displacement that moves the
    probe toward the vessel, i.e. its x column is the negated image x axis.
    """
    ax = image_axes(probe_pose)
    return RigidTransform(ax @ np.diag([-1.0, -1.0, 1.0]), probe_pose.translation)


class VesselSampler:
    """Densely resampled vessel polyline with a nearest-point index."""

    def __init__(self, centerline: np.ndarray, radius: float, step: float = 0.05):
        pts = np.atleast_2d(np.asarray(centerline, dtype=float))
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        dense_s = np.arange(0.0, s[-1] + step / 2, step)
        self.points = np.stack([np.interp(dense_s, s, pts[:, d]) for d in range(3)], axis=1)
        self.radius = float(radius)
        self.tree = cKDTree(self.points)

    def inside(self, query: np.ndarray) -> np.ndarray:
        d, _ = self.tree.query(query, distance_upper_bound=self.radius * 1.5 + 1.0)
        return d <= self.radius


def image_slice(scene: ArmTemplate, probe_pose: RigidTransform, width_px: int,
                height_px: int, pitch: float,
                sampler: VesselSampler | None = None) -> VirtualFrame:
    """Binary cross-section: pixels within vessel_radius of the centerline curve."""
    if sampler is None:
        sampler = VesselSampler(scene.centerline.points, scene.vessel_radius)
    ax = image_axes(probe_pose)
    lat = (np.arange(width_px) - width_px / 2.0) * pitch
    dep = (np.arange(height_px) + 0.5) * pitch
    grid = (probe_pose.translation[None, None, :]
            + dep[:, None, None] * ax[:, 2]
            + lat[None, :, None] * ax[:, 0])
    mask = sampler.inside(grid.reshape(-1, 3)).reshape(height_px, width_px)
    return VirtualFrame(probe_pose, width_px, height_px, pitch, mask.astype(np.uint8))


def centering_step(frame: VirtualFrame, remaining: np.ndarray, state: CenteringState,
                   hand_eye_t: RigidTransform, deadband_px: float = 2.0):
    """One Eq.-style compensation: immediate world correction from the centroid
    error, extrapolated onto the remaining points with geometric decay.

    Returns (corrected remaining points, new state, delta_p or None).
    Raises VesselLost on an empty mask; the trajectory is left unchanged.
    """
    if frame.empty:
        raise VesselLost("empty mask, no centroid")
    v_x = mask_centroid(frame.mask)
    err_px = frame.width_px / 2.0 - v_x
    if abs(err_px) <= deadband_px:
        return remaining, state, None
    delta_p = hand_eye_t.rotation @ np.array([err_px * frame.pitch, 0.0, 0.0])
    out = np.array(remaining, dtype=float, copy=True)
    if len(out):
        k = np.arange(1, len(out) + 1, dtype=float)
        out += delta_p[None, :] * (state.sigma ** k)[:, None]
    return out, CenteringState(state.i + 1, delta_p, state.sigma), delta_p


def run_scan(scene: ArmTemplate, trajectory: ScanTrajectory,
             params: ScanParams = ScanParams()) -> ScanResult:
    """Execute the trajectory with imaging and closed-loop centering.

    At each station the probe images, and if the centroid error exceeds the
    deadband it moves by the full correction, extrapolates the decayed
    correction onto the remaining stations, and re-images (up to
    max_recenter times). Empty masks count as vessel-lost; the scan
    continues on the planned path.
    """
    if len(trajectory) == 0:
        raise InvalidParams("trajectory is empty")
    if trajectory.poses is None:
        raise InvalidParams("trajectory has no probe poses")
    sampler = VesselSampler(scene.centerline.points, scene.vessel_radius,
                            params.resample_step)
    pts = np.array(trajectory.surface_points, dtype=float, copy=True)
    if params.lateral_bias != 0.0:
        for i, pose in enumerate(trajectory.poses):
            pts[i] += params.lateral_bias * image_axes(pose)[:, 0]

    frames: list[VirtualFrame] = []
    executed: list[RigidTransform] = []
    corrections: list[dict] = []
    centroid_log: list[dict] = []
    lost = 0
    state = CenteringState(0, np.zeros(3), params.sigma)

    n = len(pts)
    for i in range(n):
        pose = RigidTransform(trajectory.poses[i].rotation, pts[i])
        for attempt in range(params.max_recenter + 1):
            frame = image_slice(scene, pose, params.width_px, params.height_px,
                                params.pitch, sampler)
            frames.append(frame)
            if frame.empty:
                lost += 1
                centroid_log.append({"station": i, "frame": len(frames) - 1,
                                     "v_x": None, "error_mm": None})
                break
            v_x = mask_centroid(frame.mask)
            err_mm = (params.width_px / 2.0 - v_x) * params.pitch
            centroid_log.append({"station": i, "frame": len(frames) - 1,
                                 "v_x": float(v_x), "error_mm": float(err_mm)})
            state = CenteringState(i, state.delta_p, params.sigma)
            new_rest, state, delta_p = centering_step(
                frame, pts[i + 1:], state, hand_eye(pose), params.deadband_px)
            if delta_p is None or attempt == params.max_recenter:
                break
            pts[i + 1:] = new_rest
            pts[i] = pts[i] + delta_p
            pose = RigidTransform(pose.rotation, pts[i])
            corrections.append({"station": i, "frame": len(frames) - 1,
                                "delta_p": delta_p.tolist(), "sigma": params.sigma})
        executed.append(pose)

    return ScanResult(frames, executed, corrections, centroid_log, lost, pts)


def reconstruct(frames: list) -> ReconstructedVessel:
    """Per-frame centroid + equivalent-circle radius, mapped to world."""
    centers, radii = [], []
    for f in frames:
        if f.empty:
            continue
        rows, cols = np.nonzero(f.mask)
        area = len(rows)
        v_x = float(cols.mean())
        v_y = float(rows.mean())
        ax = image_axes(f.probe_pose)
        center = (f.probe_pose.translation
                  + (v_x - f.width_px / 2.0) * f.pitch * ax[:, 0]
                  + (v_y + 0.5) * f.pitch * ax[:, 2])
        centers.append(center)
        radii.append(f.pitch * np.sqrt(area / np.pi))
    if len(centers) < 2:
        raise TooFewFrames(f"need >= 2 non-empty frames, got {len(centers)}")
    return ReconstructedVessel(PointCloud3(np.asarray(centers)), np.asarray(radii))


def radius_report(vessel: ReconstructedVessel, n_segments: int,
                  truth: ArmTemplate) -> RadiusReport:
    """Equal-arc-length sub-segment mean radii and errors vs the true radius.

    The centerline is first put into a canonical orientation (lexicographically
    smaller endpoint first) so the report is invariant under frame-order
    reversal. Empty spans fall back to the global mean.
    """
    if n_segments < 1:
        raise InvalidParams("n_segments must be >= 1")
    centers = vessel.centerline_points.points
    radii = vessel.per_point_radius
    first, last = tuple(centers[0]), tuple(centers[-1])
    if first > last:
        centers = centers[::-1]
        radii = radii[::-1]
    seg = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        raise InvalidParams("vessel arc length must be positive")
    edges = np.linspace(0.0, total, n_segments + 1)
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_segments - 1)
    counts = np.bincount(idx, minlength=n_segments)
    sums = np.bincount(idx, weights=radii, minlength=n_segments)
    global_mean = float(radii.mean())
    means = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    truth_r = truth.vessel_radius
    subs = [(float(edges[i]), float(edges[i + 1]), float(means[i]),
             float(abs(means[i] - truth_r))) for i in range(n_segments)]
    vessel.sub_segments = [(a, b, m) for a, b, m, _ in subs]
    return RadiusReport(subs, global_mean, float(abs(global_mean - truth_r)))
