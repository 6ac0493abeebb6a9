"""Core geometry: rigid transforms, point clouds, PCA boxes, k-NN, normals.

Conventions: points are float64 arrays of shape (3,) or (n, 3), units are mm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateConfiguration, EmptyCloud

_ORTHO_TOL = 1e-9

# below this size a linear scan beats building a tree
_KNN_EXHAUSTIVE_LIMIT = 64


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation mapping points from one frame to another."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("non-finite transform")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self ∘ other (other applied first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass
class PointCloud3:
    """Ordered 3D point set with optional per-point unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if p.shape[1] != 3:
            raise ValueError("points must be (n, 3)")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite points")
        self.points = p
        if self.normals is not None:
            n = np.atleast_2d(np.asarray(self.normals, dtype=float))
            if n.shape != p.shape:
                raise ValueError("normals shape must match points")
            norms = np.linalg.norm(n, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length")
            self.normals = n

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, T: RigidTransform) -> "PointCloud3":
        normals = None if self.normals is None else self.normals @ T.rotation.T
        return PointCloud3(T.apply(self.points), normals)


@dataclass
class ObbScale:
    """Principal axes plus source/target extents and their per-axis ratios."""

    axes: np.ndarray            # columns are the principal directions
    extents_source: np.ndarray
    extents_target: np.ndarray
    factors: np.ndarray = field(init=False)

    def __post_init__(self):
        es = np.asarray(self.extents_source, dtype=float).reshape(3)
        et = np.asarray(self.extents_target, dtype=float).reshape(3)
        if np.any(es <= 0) or np.any(et <= 0):
            raise ValueError("extents must be strictly positive")
        self.extents_source = es
        self.extents_target = et
        self.factors = et / es


def fit_rigid(source_pts: np.ndarray, target_pts: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform from index-aligned correspondences.

    Closed-form SVD solution with determinant correction, so a reflection is
    never returned even for adversarial noise.
    """
    src = np.atleast_2d(np.asarray(source_pts, dtype=float))
    tgt = np.atleast_2d(np.asarray(target_pts, dtype=float))
    if src.shape != tgt.shape or src.shape[0] < 3:
        raise DegenerateConfiguration("need >= 3 index-aligned point pairs")
    cs = src.mean(axis=0)
    ct = tgt.mean(axis=0)
    H = (src - cs).T @ (tgt - ct)
    U, S, Vt = np.linalg.svd(H)
    # collinear sources leave the rotation about the line unconstrained
    if S[1] <= 1e-12 * max(S[0], 1.0):
        raise DegenerateConfiguration("source points are collinear")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, ct - R @ cs)


def pca_obb(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Principal axes (columns, by descending eigenvalue) and projection extents."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[0] < 4:
        raise DegenerateConfiguration("need >= 4 points")
    centered = p - p.mean(axis=0)
    cov = centered.T @ centered / p.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    axes = evecs[:, order]
    if evals[2] <= 1e-12 * max(evals[0], 1.0):
        raise DegenerateConfiguration("covariance rank < 3 (coplanar points)")
    proj = centered @ axes
    extents = proj.max(axis=0) - proj.min(axis=0)
    return axes, extents


def knn(query: np.ndarray, points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the k nearest cloud points, ascending.

    Ties are broken by lower index. Uses a k-d tree above a small size
    threshold, exhaustive scan below it.
    """
    q = np.asarray(query, dtype=float).reshape(3)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    n = p.shape[0]
    if n == 0:
        raise EmptyCloud("knn on empty cloud")
    if not (1 <= k <= n):
        raise ValueError(f"k={k} out of range for cloud of {n}")
    if n <= _KNN_EXHAUSTIVE_LIMIT:
        d = np.linalg.norm(p - q, axis=1)
        idx = np.lexsort((np.arange(n), d))[:k]
        return idx, d[idx]
    tree = cKDTree(p)
    d, idx = tree.query(q, k=k)
    d = np.atleast_1d(d)
    idx = np.atleast_1d(idx)
    # enforce the (distance, index) order for deterministic tie-breaks
    order = np.lexsort((idx, d))
    return idx[order], d[order]


def estimate_normals(cloud: PointCloud3, k: int, up_hint: np.ndarray) -> PointCloud3:
    """Per-point normals from k-NN covariance, oriented toward up_hint."""
    if k < 3:
        raise ValueError("k must be >= 3")
    p = cloud.points
    n = p.shape[0]
    if n < k:
        raise ValueError("cloud smaller than neighborhood")
    up = np.asarray(up_hint, dtype=float).reshape(3)
    up = up / np.linalg.norm(up)
    tree = cKDTree(p)
    _, nbr = tree.query(p, k=k)
    neigh = p[nbr]                       # (n, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    if np.any(evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], 1.0)):
        raise DegenerateConfiguration("rank-deficient normal neighborhood")
    normals = evecs[:, :, 0]
    flip = (normals @ up) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud3(p.copy(), normals)
