"""Arm surface extraction from depth images by adaptive bidirectional search.

Seeds are placed along the joint-to-joint pixel line; from each seed the
search marches perpendicular to that line, one pixel per step, until either
the squared-depth difference feature jumps (arm/table edge) or the running
half-width exceeds the previous seed's half-width plus a continuity slack.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, InvalidParams, NoEdgeFound, SeedOffArm
from .geometry import PointCloud3
from .scene import DepthImage


@dataclass(frozen=True)
class JointPixels:
    """Wrist / elbow / shoulder pixel positions as (row, col)."""

    wrist: tuple[int, int]
    elbow: tuple[int, int]
    shoulder: tuple[int, int]

    def validate(self, height: int, width: int) -> None:
        seen = set()
        for name, (r, c) in [("wrist", self.wrist), ("elbow", self.elbow),
                             ("shoulder", self.shoulder)]:
            if not (0 <= r < height and 0 <= c < width):
                raise InvalidParams(f"{name} pixel {(r, c)} outside image")
            seen.add((r, c))
        if len(seen) != 3:
            raise InvalidParams("joint pixels must be pairwise distinct")


@dataclass(frozen=True)
class ExtractionParams:
    depth_jump_threshold: float = 20000.0   # T_d, mm^2
    continuity_slack: float = 10.0          # T_l, mm
    seed_spacing: int = 3                   # px along the joint line
    # alternative second-difference feature kept for comparison runs
    feature_offset: int = 2                 # k of the depth feature
    use_second_difference: bool = False
    table_margin: float = 1.0               # mm below table counted as background

    def __post_init__(self):
        if self.depth_jump_threshold <= 0 or self.continuity_slack <= 0:
            raise InvalidParams("thresholds must be positive")
        if self.seed_spacing < 1 or self.feature_offset < 1:
            raise InvalidParams("spacing and feature offset must be >= 1")


@dataclass
class SeedSearchResult:
    """Edges found from one seed: march step counts and edge pixels per side."""

    seed: tuple[int, int]
    half_width_left: float      # mm, seed to last arm sample
    half_width_right: float
    edge_left: tuple[int, int]  # first background pixel past the arm
    edge_right: tuple[int, int]
    terminated_by: tuple[str, str]  # "depth" or "continuity" per side


@dataclass
class SegmentedArm:
    """Extraction output: both segment clouds plus per-seed boundary pixels."""

    forearm: PointCloud3
    upperarm: PointCloud3
    forearm_pixels: np.ndarray      # (n, 2) row, col
    upperarm_pixels: np.ndarray
    forearm_seeds: list[SeedSearchResult] = field(default_factory=list)
    upperarm_seeds: list[SeedSearchResult] = field(default_factory=list)


def depth_feature(depths: np.ndarray, i: int, k: int = 2,
                  second_difference: bool = False) -> float:
    """Squared-depth difference feature along a march ray, in mm^2.

    The default form is I_d(P_i)^2 - I_d(P_{i-k})^2. The second-difference
    variant I_d(P_i) - 2 I_d(P_{i-1}) + I_d(P_{i-2}) on squared depths is
    kept behind a flag for comparison.
    """
    d = np.asarray(depths, dtype=float)
    if second_difference:
        if i < 2 or i >= len(d):
            raise IndexOutOfRange(f"i={i} needs two predecessors")
        sq = d ** 2
        return float(sq[i] - 2.0 * sq[i - 1] + sq[i - 2])
    if i < k or i >= len(d):
        raise IndexOutOfRange(f"i={i} out of range for k={k}, n={len(d)}")
    return float(d[i] ** 2 - d[i - k] ** 2)


def _march(img: DepthImage, seed: np.ndarray, direction: np.ndarray,
           params: ExtractionParams, prev_half_width: float | None):
    """March from seed along direction until an edge fires.

    Returns (half_width_mm, edge_pixel, arm_pixels, reason).
    """
    h, w = img.depth.shape
    depths = [img.depth[int(seed[0]), int(seed[1])]]
    pixels = [(int(seed[0]), int(seed[1]))]
    k = params.feature_offset
    t = 0
    while True:
        t += 1
        pos = seed + t * direction
        r, c = int(round(pos[0])), int(round(pos[1]))
        if not (0 <= r < h and 0 <= c < w):
            raise NoEdgeFound(f"march exited the image at step {t}")
        if (r, c) == pixels[-1]:
            continue
        pixels.append((r, c))
        depths.append(img.depth[r, c])
        i = len(depths) - 1
        if i >= (2 if params.use_second_difference else k):
            f = depth_feature(depths, i, k, params.use_second_difference)
            if f > params.depth_jump_threshold:
                half = (t - 1) * img.pitch
                return half, (r, c), pixels[:-1], "depth"
        half_now = t * img.pitch
        if prev_half_width is not None and half_now > prev_half_width + params.continuity_slack:
            # clamp: the recorded half-width stays within the adaptive bound
            return (t - 1) * img.pitch, (r, c), pixels[:-1], "continuity"


def extract_segment(img: DepthImage, joint_a: tuple[int, int], joint_b: tuple[int, int],
                    params: ExtractionParams) -> list[SeedSearchResult]:
    """Bidirectional adaptive search along the joint_a -> joint_b line."""
    a = np.asarray(joint_a, dtype=float)
    b = np.asarray(joint_b, dtype=float)
    line = b - a
    length = np.linalg.norm(line)
    if length < 1:
        raise InvalidParams("joint pixels coincide")
    u = line / length
    perp = np.array([-u[1], u[0]])

    background = img.table_depth - params.table_margin
    results: list[SeedSearchResult] = []
    prev_left: float | None = None
    prev_right: float | None = None
    for t in np.arange(0.0, length + 1e-9, params.seed_spacing):
        seed = a + t * u
        r, c = int(round(seed[0])), int(round(seed[1]))
        if img.depth[r, c] >= background:
            raise SeedOffArm(f"seed at {(r, c)} has background depth")
        hw_l, edge_l, px_l, why_l = _march(img, seed, perp, params, prev_left)
        hw_r, edge_r, px_r, why_r = _march(img, seed, -perp, params, prev_right)
        results.append(SeedSearchResult(
            seed=(r, c),
            half_width_left=hw_l, half_width_right=hw_r,
            edge_left=edge_l, edge_right=edge_r,
            terminated_by=(why_l, why_r)))
        prev_left, prev_right = hw_l, hw_r
    return results


def _fill_pixels(img: DepthImage, seeds: list[SeedSearchResult]) -> np.ndarray:
    """Pixels strictly between the left and right edge of every seed line."""
    rows, cols = [], []
    for s in seeds:
        seed = np.asarray(s.seed, dtype=float)
        for edge in (np.asarray(s.edge_left, dtype=float),
                     np.asarray(s.edge_right, dtype=float)):
            vec = edge - seed
            n = int(round(np.linalg.norm(vec)))
            if n < 1:
                continue
            step = vec / n
            for t in range(n):  # excludes the edge pixel itself
                p = seed + t * step
                rows.append(int(round(p[0])))
                cols.append(int(round(p[1])))
    if not rows:
        return np.empty((0, 2), dtype=int)
    px = np.stack([rows, cols], axis=1)
    return np.unique(px, axis=0)


def extract_arm(img: DepthImage, joints: JointPixels,
                params: ExtractionParams = ExtractionParams()) -> SegmentedArm:
    """Extract forearm (wrist->elbow) and upper arm (elbow->shoulder) clouds."""
    joints.validate(img.height, img.width)
    fore_seeds = extract_segment(img, joints.wrist, joints.elbow, params)
    upper_seeds = extract_segment(img, joints.elbow, joints.shoulder, params)

    fore_px = _fill_pixels(img, fore_seeds)
    upper_px = _fill_pixels(img, upper_seeds)
    if len(fore_px) and len(upper_px):
        fore_set = set(map(tuple, fore_px))
        keep = np.array([tuple(p) not in fore_set for p in upper_px], dtype=bool)
        upper_px = upper_px[keep]

    fore_cloud = PointCloud3(img.unproject(fore_px[:, 0], fore_px[:, 1]))
    upper_cloud = PointCloud3(img.unproject(upper_px[:, 0], upper_px[:, 1]))
    return SegmentedArm(
        forearm=fore_cloud, upperarm=upper_cloud,
        forearm_pixels=fore_px, upperarm_pixels=upper_px,
        forearm_seeds=fore_seeds, upperarm_seeds=upper_seeds)
