"""Synthetic world: parametric arm template, elbow articulation, depth rendering.

The template frame puts the arm on a table plane z = 0, axis along +x with
the wrist end at x = 0, elbow at x = length_forearm and shoulder at
x = length_forearm + length_upperarm. "Up" is +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParams, OutOfFrame
from .geometry import PointCloud3, RigidTransform

UP = np.array([0.0, 0.0, 1.0])


@dataclass
class ArmTemplate:
    """Generalized-cylinder arm: skin surface, vessel centerline, joint landmarks.

    surface_axial / centerline_axial keep each point's template-frame axial
    coordinate so articulation and ground-truth labeling stay exact after the
    cloud has been posed.
    """

    surface: PointCloud3
    centerline: PointCloud3
    wrist: np.ndarray
    elbow: np.ndarray
    shoulder: np.ndarray
    vessel_radius: float
    surface_axial: np.ndarray
    centerline_axial: np.ndarray
    length_forearm: float
    length_upperarm: float
    width_knots: tuple  # (wrist, elbow, shoulder) horizontal semi-axes a(s)
    vertical_b: float   # constant vertical semi-axis, keeps the joints collinear
    vessel_depth: float
    seed: int

    @property
    def elbow_axial(self) -> float:
        return self.length_forearm

    def horizontal_semi_axis(self, s) -> np.ndarray:
        """Horizontal cross-section semi-axis a(s) at axial coordinate s (mm)."""
        knots_s = [0.0, self.length_forearm, self.length_forearm + self.length_upperarm]
        return np.interp(s, knots_s, list(self.width_knots))

    def forearm_radius_profile(self, s):
        """a(s) for arc-length s measured from the wrist, s in [0, length_forearm]."""
        return self.horizontal_semi_axis(np.clip(s, 0.0, self.length_forearm))

    def upperarm_radius_profile(self, s):
        """a(s) for arc-length s measured from the elbow, s in [0, length_upperarm]."""
        return self.horizontal_semi_axis(self.length_forearm + np.clip(s, 0.0, self.length_upperarm))

    @property
    def joints(self) -> dict[str, np.ndarray]:
        return {"wrist": self.wrist, "elbow": self.elbow, "shoulder": self.shoulder}

    def top_shell(self) -> tuple[PointCloud3, np.ndarray, np.ndarray]:
        """Surface subset above the cross-section center line (camera-visible side).

        Membership is decided in the template frame (z above the section
        center), so it is meaningful on posed templates too. Returns the
        cloud, its axial coordinates and the index mask into `surface`.
        """
        mask = self._top_mask
        return (PointCloud3(self.surface.points[mask]), self.surface_axial[mask], mask)

    # populated by make_template / carried through articulation
    _top_mask: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class ArticulatedPose:
    """Elbow hinge angle plus an optional whole-arm rigid pose."""

    elbow_angle: float
    global_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    blend_halfwidth: float = 30.0

    def __post_init__(self):
        if not (90.0 <= self.elbow_angle <= 180.0):
            raise InvalidParams(f"elbow_angle {self.elbow_angle} outside [90, 180]")
        if self.blend_halfwidth <= 0:
            raise InvalidParams("blend_halfwidth must be > 0")


@dataclass
class DepthImage:
    """Orthographic top-down depth grid in mm; 0 marks invalid pixels."""

    depth: np.ndarray
    pitch: float
    camera_pose: RigidTransform
    table_depth: float

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        valid = self.depth > 0
        if not np.all(np.isfinite(self.depth[valid])):
            raise InvalidParams("non-finite depth values")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def unproject(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Pixel centers + stored depths back to world coordinates."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        d = self.depth[rows, cols]
        x_cam = (cols + 0.5 - self.width / 2.0) * self.pitch
        y_cam = (rows + 0.5 - self.height / 2.0) * self.pitch
        p_cam = np.stack([x_cam, y_cam, d], axis=-1)
        T = self.camera_pose
        return p_cam @ T.rotation.T + T.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points to (rows, cols, depths); no bounds check."""
        T = self.camera_pose
        p_cam = (np.atleast_2d(points) - T.translation) @ T.rotation
        cols = np.floor(p_cam[:, 0] / self.pitch + self.width / 2.0).astype(int)
        rows = np.floor(p_cam[:, 1] / self.pitch + self.height / 2.0).astype(int)
        return rows, cols, p_cam[:, 2]


def make_template(seed: int = 0,
                  length_forearm: float = 250.0,
                  length_upperarm: float = 280.0,
                  wrist_width: float = 14.0,
                  elbow_width: float = 22.0,
                  shoulder_width: float = 26.0,
                  vertical_b: float = 16.0,
                  vessel_depth: float = 4.0,
                  vessel_radius: float = 1.2,
                  axial_step: float = 1.6,
                  ring_points: int = 104,
                  jitter: float = 0.12) -> ArmTemplate:
    """Deterministic synthetic arm with elliptical cross-sections.

    The width semi-axis a(s) tapers from wrist to shoulder while the vertical
    semi-axis stays constant, so the skin top and the vessel run at constant
    height and the three joint landmarks are collinear in the neutral pose.
    The vessel centerline sits `vessel_depth` below the top of the skin.
    """
    if length_forearm <= 50 or length_upperarm <= 50:
        raise InvalidParams("segment lengths must exceed 50 mm")
    for name, v in [("wrist_width", wrist_width), ("elbow_width", elbow_width),
                    ("shoulder_width", shoulder_width), ("vertical_b", vertical_b),
                    ("vessel_depth", vessel_depth), ("vessel_radius", vessel_radius),
                    ("axial_step", axial_step)]:
        if v <= 0:
            raise InvalidParams(f"{name} must be positive")
    if vessel_depth <= vessel_radius:
        raise InvalidParams("vessel_depth must exceed vessel_radius")

    rng = np.random.default_rng(seed)
    total = length_forearm + length_upperarm
    knots = (wrist_width, elbow_width, shoulder_width)
    b = vertical_b

    def a_of(s):
        return np.interp(s, [0.0, length_forearm, total], list(knots))

    s_vals = np.arange(0.0, total + 1e-9, axial_step)
    n_rings = len(s_vals)
    phi_base = np.linspace(0.0, 2.0 * np.pi, ring_points, endpoint=False)
    # per-ring angular offset breaks grid alignment without harming invariants
    offsets = rng.uniform(0.0, 2.0 * np.pi / ring_points, size=n_rings)

    pts = np.empty((n_rings * ring_points, 3))
    axial = np.repeat(s_vals, ring_points)
    top = np.empty(n_rings * ring_points, dtype=bool)
    for i, s in enumerate(s_vals):
        a = a_of(s)
        phi = phi_base + offsets[i]
        sl = slice(i * ring_points, (i + 1) * ring_points)
        pts[sl, 0] = s
        pts[sl, 1] = a * np.sin(phi)
        pts[sl, 2] = b + b * np.cos(phi)
        top[sl] = np.cos(phi) > 0.0
    if jitter > 0:
        center = np.stack([axial, np.zeros_like(axial), np.full_like(axial, b)], axis=1)
        radial = pts - center
        radial /= np.linalg.norm(radial, axis=1, keepdims=True)
        pts = pts + radial * rng.normal(0.0, jitter, size=(len(pts), 1))

    margin = 5.0
    s_center = np.arange(margin, total - margin + 1e-9, 1.0)
    centerline = np.stack(
        [s_center, np.zeros_like(s_center), np.full_like(s_center, 2.0 * b - vessel_depth)],
        axis=1)

    wrist = centerline[0].copy()
    elbow = centerline[int(np.argmin(np.abs(s_center - length_forearm)))].copy()
    shoulder = centerline[-1].copy()

    return ArmTemplate(
        surface=PointCloud3(pts),
        centerline=PointCloud3(centerline),
        wrist=wrist, elbow=elbow, shoulder=shoulder,
        vessel_radius=vessel_radius,
        surface_axial=axial,
        centerline_axial=s_center,
        length_forearm=length_forearm,
        length_upperarm=length_upperarm,
        width_knots=knots,
        vertical_b=vertical_b,
        vessel_depth=vessel_depth,
        seed=seed,
        _top_mask=top,
    )


def _hinge_weights(axial: np.ndarray, elbow_s: float, halfwidth: float) -> np.ndarray:
    """Smooth-step blend weight: 1 deep in the forearm, 0 deep in the upper arm."""
    d = elbow_s - np.asarray(axial, dtype=float)
    t = np.clip((d + halfwidth) / (2.0 * halfwidth), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def hinge_points(points: np.ndarray, axial: np.ndarray, elbow_point: np.ndarray,
                 elbow_angle: float, halfwidth: float) -> np.ndarray:
    """Rotate template-frame points about the elbow hinge (y-axis) with blending."""
    theta = np.deg2rad(180.0 - elbow_angle)
    w = _hinge_weights(axial, elbow_point[0], halfwidth)
    ang = w * theta
    rel = np.atleast_2d(points) - elbow_point
    c, s = np.cos(ang), np.sin(ang)
    out = np.empty_like(rel)
    out[:, 0] = c * rel[:, 0] + s * rel[:, 2]
    out[:, 1] = rel[:, 1]
    out[:, 2] = -s * rel[:, 0] + c * rel[:, 2]
    return out + elbow_point


def articulate(template: ArmTemplate, pose: ArticulatedPose) -> ArmTemplate:
    """Pose the template: forearm rotated about the elbow hinge, then global_pose.

    Must be called on a neutral (unposed) template; axial coordinates index
    the blend, so posing a posed template would double-apply the hinge.
    """
    elbow = template.elbow
    h = pose.blend_halfwidth
    ang = pose.elbow_angle

    surf = hinge_points(template.surface.points, template.surface_axial, elbow, ang, h)
    cl = hinge_points(template.centerline.points, template.centerline_axial, elbow, ang, h)
    ca = template.centerline_axial
    joint_axial = np.array([ca[0], ca[int(np.argmin(np.abs(ca - template.elbow_axial)))], ca[-1]])
    joints = hinge_points(
        np.stack([template.wrist, template.elbow, template.shoulder]),
        joint_axial, elbow, ang, h)

    g = pose.global_pose
    return replace(
        template,
        surface=PointCloud3(g.apply(surf)),
        centerline=PointCloud3(g.apply(cl)),
        wrist=g.apply(joints[0]), elbow=g.apply(joints[1]), shoulder=g.apply(joints[2]),
    )


def default_camera(posed: ArmTemplate, height: float = 800.0,
                   pitch: float = 1.0, margin: float = 40.0):
    """Top-down camera over the scene centroid plus a resolution that fits it.

    Returns (camera_pose, width, height_px).
    """
    p = posed.surface.points
    lo = p.min(axis=0)
    hi = p.max(axis=0)
    center = (lo + hi) / 2.0
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    cam = RigidTransform(rotation, np.array([center[0], center[1], height]))
    w = int(np.ceil((hi[0] - lo[0] + 2 * margin) / pitch))
    h = int(np.ceil((hi[1] - lo[1] + 2 * margin) / pitch))
    return cam, w, h


def render_depth(posed: ArmTemplate, camera: RigidTransform, width: int, height: int,
                 pitch: float, table_z: float = 0.0,
                 noise_sigma: float = 0.0, noise_seed: int = 0,
                 depth_band: float = 2.0) -> DepthImage:
    """Orthographic splat render with table background.

    Each pixel averages the splatted depths within depth_band of its minimum;
    a raw minimum would bias sloped surfaces toward the camera by half the
    per-pixel depth spread, which matters on steeply articulated poses.
    """
    cam_z = camera.translation[2]
    table_depth = cam_z - table_z
    if table_depth <= 0:
        raise InvalidParams("camera must be above the table")

    p_cam = (posed.surface.points - camera.translation) @ camera.rotation
    u = p_cam[:, 0] / pitch + width / 2.0
    v = p_cam[:, 1] / pitch + height / 2.0
    depths = p_cam[:, 2]
    if np.any(depths <= 0):
        raise InvalidParams("camera must be above the scene")
    if np.any((u < 0) | (u >= width) | (v < 0) | (v >= height)):
        raise OutOfFrame("arm points project outside the image")
    # 2x2 surfel footprint: closes the holes a sparser-than-pixel-pitch point
    # sampling would leave; widens the silhouette by at most one pixel
    flat = np.full(height * width, table_depth)
    c0 = np.floor(u - 0.5).astype(int)  # the two pixel centers bracketing u
    r0 = np.floor(v - 0.5).astype(int)
    du = u - (c0 + 0.5)
    dv = v - (r0 + 0.5)
    targets = []
    for dr in (0, 1):
        for dc in (0, 1):
            rr = np.clip(r0 + dr, 0, height - 1)
            cc = np.clip(c0 + dc, 0, width - 1)
            idx = rr * width + cc
            # bilinear weight, floored so silhouette pixels never go unfilled
            wu = du if dc else 1.0 - du
            wv = dv if dr else 1.0 - dv
            targets.append((idx, np.maximum(wu * wv, 0.05)))
            np.minimum.at(flat, idx, depths)
    sums = np.zeros(height * width)
    weights = np.zeros(height * width)
    for idx, w in targets:
        near = depths <= flat[idx] + depth_band
        np.add.at(sums, idx[near], (w * depths)[near])
        np.add.at(weights, idx[near], w[near])
    hit = weights > 0
    flat[hit] = sums[hit] / weights[hit]
    depth = flat.reshape(height, width)
    if noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        depth = depth + rng.normal(0.0, noise_sigma, size=depth.shape)
    return DepthImage(depth, pitch, camera, table_depth)


def joint_pixels(img: DepthImage, posed: ArmTemplate) -> dict[str, tuple[int, int]]:
    """Ground-truth joint pixel positions (the OpenPose stand-in)."""
    pts = np.stack([posed.wrist, posed.elbow, posed.shoulder])
    rows, cols, _ = img.project(pts)
    return {"wrist": (int(rows[0]), int(cols[0])),
            "elbow": (int(rows[1]), int(cols[1])),
            "shoulder": (int(rows[2]), int(cols[2]))}
