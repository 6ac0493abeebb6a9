"""Non-rigid atlas-to-scene registration with an embedded deformation graph.

Pipeline: per-segment initial alignment (joint overlay + PCA scaling), graph
construction by geodesic sampling of the aligned source, robust alternating
closest-point / Gauss-Newton minimization of the alignment + smoothness +
rigidity energy, then trajectory transfer through the optimized graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from .errors import DegenerateSegment, NonFiniteEnergy, OutOfBindingReach
from .geometry import ObbScale, PointCloud3, RigidTransform, estimate_normals, pca_obb
from .trajectory import ScanTrajectory


@dataclass
class ArmObservation:
    """A segmented arm surface with its three joint landmarks."""

    forearm: PointCloud3
    upperarm: PointCloud3
    wrist: np.ndarray
    elbow: np.ndarray
    shoulder: np.ndarray

    def union_points(self) -> np.ndarray:
        return np.vstack([self.forearm.points, self.upperarm.points])


@dataclass
class DeformationNode:
    position: np.ndarray
    affine: np.ndarray
    translation: np.ndarray
    neighbors: list[int]


@dataclass
class DeformationGraph:
    """Sparse node set with per-node affine + translation and vertex bindings.

    Bindings are fixed-width arrays: bind_idx[v] lists up to K node indices
    (-1 padding) and bind_w[v] the matching convex weights.
    """

    node_positions: np.ndarray         # (m, 3)
    affines: np.ndarray                # (m, 3, 3)
    translations: np.ndarray           # (m, 3)
    neighbors: list[list[int]]
    sampling_radius: float
    bind_idx: np.ndarray               # (n, K), int, -1 padded
    bind_w: np.ndarray                 # (n, K)
    node_vertex_indices: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def nodes(self) -> list[DeformationNode]:
        return [DeformationNode(self.node_positions[i], self.affines[i],
                                self.translations[i], list(self.neighbors[i]))
                for i in range(self.n_nodes)]

    def deform(self, points: np.ndarray, bind_idx: np.ndarray | None = None,
               bind_w: np.ndarray | None = None) -> np.ndarray:
        """Blend node transforms onto points (defaults to the stored bindings)."""
        if bind_idx is None:
            bind_idx, bind_w = self.bind_idx, self.bind_w
        p = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.where(bind_idx < 0, 0, bind_idx)
        g = self.node_positions[idx]                       # (n, K, 3)
        rel = p[:, None, :] - g
        mapped = np.einsum("nkij,nkj->nki", self.affines[idx], rel) + g + self.translations[idx]
        return np.sum(bind_w[..., None] * mapped, axis=1)

    def bind(self, points: np.ndarray, k: int = 4) -> tuple[np.ndarray, np.ndarray]:
        """Euclidean binding of arbitrary points to up to k nodes within reach."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        reach = 2.0 * self.sampling_radius
        tree = cKDTree(self.node_positions)
        k_eff = min(k + 1, self.n_nodes)
        d, idx = tree.query(p, k=k_eff)
        d = np.atleast_2d(d.reshape(len(p), k_eff))
        idx = np.atleast_2d(idx.reshape(len(p), k_eff))
        bind_idx = np.full((len(p), k), -1, dtype=int)
        bind_w = np.zeros((len(p), k))
        for i in range(len(p)):
            within = d[i] <= reach
            if not within[0]:
                raise OutOfBindingReach(f"point {i} beyond reach of every node")
            cand = idx[i][within][:k]
            cd = d[i][within][:k]
            d_max = d[i][len(cand)] if len(d[i]) > len(cand) else 1.1 * max(cd[-1], 1e-12)
            w = np.maximum(1.0 - cd / d_max, 0.0) ** 2
            if w.sum() <= 0:
                w = np.ones(len(cand))
            w = w / w.sum()
            bind_idx[i, :len(cand)] = cand
            bind_w[i, :len(cand)] = w
        return bind_idx, bind_w

    def to_dict(self) -> dict:
        return {
            "sampling_radius": self.sampling_radius,
            "positions": self.node_positions.tolist(),
            "affines": self.affines.tolist(),
            "translations": self.translations.tolist(),
            "neighbors": [list(map(int, nb)) for nb in self.neighbors],
            "bind_idx": self.bind_idx.tolist(),
            "bind_w": self.bind_w.tolist(),
        }

    @staticmethod
    def from_dict(data: dict) -> "DeformationGraph":
        return DeformationGraph(
            node_positions=np.asarray(data["positions"], dtype=float),
            affines=np.asarray(data["affines"], dtype=float),
            translations=np.asarray(data["translations"], dtype=float),
            neighbors=[list(nb) for nb in data["neighbors"]],
            sampling_radius=float(data["sampling_radius"]),
            bind_idx=np.asarray(data["bind_idx"], dtype=int),
            bind_w=np.asarray(data["bind_w"], dtype=float),
        )


@dataclass
class EnergyBreakdown:
    l_ali: float
    l_reg: float
    l_rot: float
    alpha1: float
    alpha2: float

    @property
    def total(self) -> float:
        return self.l_ali + self.alpha1 * self.l_reg + self.alpha2 * self.l_rot


@dataclass(frozen=True)
class SolveParams:
    alpha1: float = 10.0
    alpha2: float = 100.0
    welsch_c: float = 5.0          # mm, robust kernel scale
    tol: float = 1e-5              # relative energy decrease per outer iteration
    max_outer: int = 50
    max_inner: int = 4
    max_correspondences: int = 3000
    binding_k: int = 4
    levenberg: float = 1e-6


# ---------------------------------------------------------------- alignment

def _segment_transform(cloud_s: np.ndarray, a_s: np.ndarray, b_s: np.ndarray,
                       cloud_t: np.ndarray, a_t: np.ndarray, b_t: np.ndarray,
                       up: np.ndarray):
    """PCA-box scaling of the source segment, then the rigid map overlaying
    the joint pair.

    Roll about the segment axis is fixed by the world up direction (limbs
    rest on the table and the hinge axis is horizontal, so neither side is
    rolled about its own axis). The surface-centroid offset is only a
    fallback when the axis is parallel to up; the centroid of a thin
    half-shell sits too close to the axis to give a reliable roll.
    """
    if np.linalg.norm(b_s - a_s) < 1e-9 or np.linalg.norm(b_t - a_t) < 1e-9:
        raise DegenerateSegment("segment joints coincide")
    axes_s, ext_s = pca_obb(cloud_s)
    _, ext_t = pca_obb(cloud_t)
    scale = ObbScale(axes_s, ext_s, ext_t)
    centroid_s = cloud_s.mean(axis=0)

    def scale_map(p):
        rel = (np.atleast_2d(p) - centroid_s) @ axes_s
        return centroid_s + (rel * scale.factors) @ axes_s.T

    s_scaled = scale_map(cloud_s)
    a_sc = scale_map(a_s)[0]
    b_sc = scale_map(b_s)[0]

    def frame(axis_vec, fallback_off):
        axis = axis_vec / np.linalg.norm(axis_vec)
        for ref in (up, fallback_off):
            u = ref - (ref @ axis) * axis
            n = np.linalg.norm(u)
            if n > 1e-6:
                return np.stack([axis, u / n, np.cross(axis, u / n)], axis=1)
        raise DegenerateSegment("cannot fix roll about the joint axis")

    f_s = frame(b_sc - a_sc, s_scaled.mean(axis=0) - a_sc)
    f_t = frame(b_t - a_t, cloud_t.mean(axis=0) - a_t)
    rotation = f_t @ f_s.T
    mid_s = (a_sc + b_sc) / 2.0
    mid_t = (a_t + b_t) / 2.0
    rigid = RigidTransform(rotation, mid_t - rotation @ mid_s)
    return rigid.apply(s_scaled), rigid, scale, scale_map


def initial_align(source: ArmObservation, target: ArmObservation,
                  up: np.ndarray = np.array([0.0, 0.0, 1.0])):
    """Per-segment joint overlay + PCA scaling of the source onto the target.

    Returns (aligned source observation, transforms dict, scales dict,
    point_maps dict) where point_maps carry the full scale+rigid map for each
    segment so co-located geometry (trajectories) can follow its segment.
    """
    transforms: dict[str, RigidTransform] = {}
    scales: dict[str, ObbScale] = {}
    maps = {}
    aligned = {}
    spec = {
        "forearm": (source.forearm.points, source.wrist, source.elbow,
                    target.forearm.points, target.wrist, target.elbow),
        "upperarm": (source.upperarm.points, source.elbow, source.shoulder,
                     target.upperarm.points, target.elbow, target.shoulder),
    }
    up_v = np.asarray(up, dtype=float).reshape(3)
    for name, (cs, ja, jb, ct, ta, tb) in spec.items():
        pts, rigid, scale, scale_map = _segment_transform(cs, ja, jb, ct, ta, tb, up_v)
        aligned[name] = pts
        transforms[name] = rigid
        scales[name] = scale
        maps[name] = (lambda p, r=rigid, sm=scale_map: r.apply(sm(p)))

    wrist = maps["forearm"](source.wrist)[0]
    shoulder = maps["upperarm"](source.shoulder)[0]
    elbow = 0.5 * (maps["forearm"](source.elbow)[0] + maps["upperarm"](source.elbow)[0])
    obs = ArmObservation(PointCloud3(aligned["forearm"]), PointCloud3(aligned["upperarm"]),
                         wrist, elbow, shoulder)
    return obs, transforms, scales, maps


# ---------------------------------------------------------------- graph

def build_graph(points: np.ndarray, radius: float, binding_k: int = 4,
                knn_k: int = 8) -> DeformationGraph:
    """Geodesic first-fit node sampling plus vertex bindings.

    Geodesic distances run over a k-NN proximity graph; disconnected
    components are sampled and bound independently.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(p)
    if radius <= 0:
        raise ValueError("radius must be positive")
    k_eff = min(knn_k + 1, n)
    tree = cKDTree(p)
    d, idx = tree.query(p, k=k_eff)
    rows = np.repeat(np.arange(n), k_eff - 1)
    cols = idx[:, 1:].ravel()
    vals = d[:, 1:].ravel()
    graph = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    graph = graph.maximum(graph.T).tocsr()

    reach = 2.0 * radius
    min_dist = np.full(n, np.inf)
    node_vertices: list[int] = []
    node_rows: list[np.ndarray] = []
    for v in range(n):
        if min_dist[v] <= radius:
            continue
        dist = dijkstra(graph, indices=v, limit=reach)
        node_vertices.append(v)
        node_rows.append(dist)
        np.minimum(min_dist, dist, out=min_dist)

    m = len(node_vertices)
    node_pos = p[node_vertices]
    dist_to_nodes = np.vstack(node_rows)      # (m, n), inf beyond reach

    neighbors: list[list[int]] = []
    node_arr = np.asarray(node_vertices)
    for i in range(m):
        dn = dist_to_nodes[i, node_arr]
        nb = [int(j) for j in np.nonzero(np.isfinite(dn))[0] if j != i]
        neighbors.append(nb)
    # enforce symmetry (dijkstra limits can truncate one direction)
    for i in range(m):
        for j in neighbors[i]:
            if i not in neighbors[j]:
                neighbors[j].append(i)
    neighbors = [sorted(nb) for nb in neighbors]

    k = min(binding_k, m)
    bind_idx = np.full((n, k), -1, dtype=int)
    bind_w = np.zeros((n, k))
    order = np.argsort(dist_to_nodes, axis=0, kind="stable")
    sorted_d = np.take_along_axis(dist_to_nodes, order, axis=0)
    for v in range(n):
        finite = np.isfinite(sorted_d[:, v])
        cand = order[finite, v][:k]
        cd = sorted_d[finite, v][:k]
        if len(cand) == 0:
            raise OutOfBindingReach(f"vertex {v} unreachable from every node")
        n_finite = int(finite.sum())
        d_max = sorted_d[n_finite - 1, v] * 1.0 if n_finite <= len(cand) else sorted_d[len(cand), v]
        if n_finite <= len(cand):
            d_max = max(1.1 * cd[-1], 1e-12) if len(cand) > 1 else max(reach, 1e-12)
        w = np.maximum(1.0 - cd / d_max, 0.0) ** 2
        if w.sum() <= 0:
            w = np.ones(len(cand))
        w = w / w.sum()
        bind_idx[v, :len(cand)] = cand
        bind_w[v, :len(cand)] = w

    return DeformationGraph(
        node_positions=node_pos,
        affines=np.tile(np.eye(3), (m, 1, 1)),
        translations=np.zeros((m, 3)),
        neighbors=neighbors,
        sampling_radius=radius,
        bind_idx=bind_idx,
        bind_w=bind_w,
        node_vertex_indices=node_arr,
    )


# ---------------------------------------------------------------- energy

def welsch(sq_dist: np.ndarray, c: float) -> np.ndarray:
    """Robust kernel on squared distances: c^2 (1 - exp(-s / c^2))."""
    return c * c * (1.0 - np.exp(-np.asarray(sq_dist, dtype=float) / (c * c)))


def energy(graph: DeformationGraph, vertices: np.ndarray,
           corr_idx: np.ndarray, corr_targets: np.ndarray,
           alpha1: float, alpha2: float, welsch_c: float) -> EnergyBreakdown:
    """Alignment + neighbor-consistency + local-rigidity energy."""
    v = np.atleast_2d(np.asarray(vertices, dtype=float))
    deformed = graph.deform(v[corr_idx], graph.bind_idx[corr_idx], graph.bind_w[corr_idx])
    sq = np.sum((deformed - corr_targets) ** 2, axis=1)
    l_ali = float(np.sum(welsch(sq, welsch_c)))

    g = graph.node_positions
    t = graph.translations
    l_reg = 0.0
    for i, nb in enumerate(graph.neighbors):
        if not nb:
            continue
        gj = g[nb]
        pred = (gj - g[i]) @ graph.affines[i].T + g[i] + t[i]
        l_reg += float(np.sum((pred - (gj + t[nb])) ** 2))

    A = graph.affines
    ata = np.einsum("nij,nik->njk", A, A)
    ortho = np.sum((ata - np.eye(3)) ** 2, axis=(1, 2))
    det = np.linalg.det(A)
    l_rot = float(np.sum(ortho + (det - 1.0) ** 2))
    return EnergyBreakdown(l_ali, l_reg, l_rot, alpha1, alpha2)


# ---------------------------------------------------------------- solver

def _assemble(graph: DeformationGraph, verts: np.ndarray, corr_idx: np.ndarray,
              targets: np.ndarray, params: SolveParams):
    """Residual vector and sparse Jacobian at the current graph parameters.

    Alignment rows carry frozen Welsch IRLS weights, so the Gauss-Newton
    direction is a descent direction for the true robust energy.
    """
    m = graph.n_nodes
    n_par = 12 * m
    g = graph.node_positions
    A = graph.affines
    t = graph.translations
    c2 = params.welsch_c ** 2

    rows_list, cols_list, vals_list, res_list = [], [], [], []
    row0 = 0

    # --- alignment block
    bi = graph.bind_idx[corr_idx]              # (q, K)
    bw = graph.bind_w[corr_idx]
    q, K = bi.shape
    safe = np.where(bi < 0, 0, bi)
    rel = verts[corr_idx][:, None, :] - g[safe]          # (q, K, 3)
    mapped = np.einsum("qkij,qkj->qki", A[safe], rel) + g[safe] + t[safe]
    pred = np.sum(bw[..., None] * mapped, axis=1)
    r_ali = pred - targets
    sq = np.sum(r_ali ** 2, axis=1)
    sw = np.exp(-sq / c2) ** 0.5                          # sqrt IRLS weight
    res_list.append((r_ali * sw[:, None]).ravel())

    wk = bw * (bi >= 0)                                   # zero padded slots
    base_row = row0 + 3 * np.arange(q)
    # d r_a / d A[j][a, b] = w * rel_b ; d r_a / d t[j][a] = w
    for kslot in range(K):
        j = safe[:, kslot]
        w = wk[:, kslot] * sw
        for a in range(3):
            rws = base_row + a
            for b in range(3):
                rows_list.append(rws)
                cols_list.append(12 * j + 3 * a + b)
                vals_list.append(w * rel[:, kslot, b])
            rows_list.append(rws)
            cols_list.append(12 * j + 9 + a)
            vals_list.append(w)
    row0 += 3 * q

    # --- regularization block
    s1 = np.sqrt(params.alpha1)
    edges = [(i, j) for i, nb in enumerate(graph.neighbors) for j in nb]
    if edges and params.alpha1 > 0:
        ei = np.array([e[0] for e in edges])
        ej = np.array([e[1] for e in edges])
        e_vec = g[ej] - g[ei]
        pred = np.einsum("eij,ej->ei", A[ei], e_vec) + g[ei] + t[ei]
        r_reg = s1 * (pred - (g[ej] + t[ej]))
        res_list.append(r_reg.ravel())
        base_row = row0 + 3 * np.arange(len(edges))
        ones = np.full(len(edges), s1)
        for a in range(3):
            rws = base_row + a
            for b in range(3):
                rows_list.append(rws)
                cols_list.append(12 * ei + 3 * a + b)
                vals_list.append(s1 * e_vec[:, b])
            rows_list.append(rws)
            cols_list.append(12 * ei + 9 + a)
            vals_list.append(ones)
            rows_list.append(rws)
            cols_list.append(12 * ej + 9 + a)
            vals_list.append(-ones)
        row0 += 3 * len(edges)

    # --- rigidity block
    if params.alpha2 > 0:
        s2 = np.sqrt(params.alpha2)
        ata = np.einsum("nij,nik->njk", A, A)
        r_rot = s2 * (ata - np.eye(3)).reshape(m, 9)
        res_list.append(r_rot.ravel())
        node_ids = np.arange(m)
        base_row = row0 + 9 * node_ids
        # d (A^T A)_{ab} / d A_{cd} = delta_{ad} A_{cb} + delta_{bd} A_{ca}
        for a in range(3):
            for b in range(3):
                rws = base_row + 3 * a + b
                for c in range(3):
                    rows_list.append(rws)
                    cols_list.append(12 * node_ids + 3 * c + a)
                    vals_list.append(s2 * A[:, c, b])
                    rows_list.append(rws)
                    cols_list.append(12 * node_ids + 3 * c + b)
                    vals_list.append(s2 * A[:, c, a])
        row0 += 9 * m

        det = np.linalg.det(A)
        res_list.append(s2 * (det - 1.0))
        base_row = row0 + node_ids
        # d det / d A[i, :] = cross(A[i+1, :], A[i+2, :])
        for i in range(3):
            grad = np.cross(A[:, (i + 1) % 3, :], A[:, (i + 2) % 3, :])
            for jcol in range(3):
                rows_list.append(base_row)
                cols_list.append(12 * node_ids + 3 * i + jcol)
                vals_list.append(s2 * grad[:, jcol])
        row0 += m

    residual = np.concatenate(res_list)
    J = sp.coo_matrix(
        (np.concatenate(vals_list),
         (np.concatenate(rows_list), np.concatenate(cols_list))),
        shape=(row0, n_par)).tocsr()
    return residual, J


def _pack(graph: DeformationGraph) -> np.ndarray:
    return np.concatenate([np.hstack([graph.affines.reshape(-1, 9),
                                      graph.translations]).ravel()])


def _unpack(graph: DeformationGraph, x: np.ndarray) -> None:
    per = x.reshape(graph.n_nodes, 12)
    graph.affines = per[:, :9].reshape(-1, 3, 3).copy()
    graph.translations = per[:, 9:].copy()


def solve(graph: DeformationGraph, vertices: np.ndarray, target: np.ndarray,
          params: SolveParams = SolveParams()):
    """Alternate closest-point correspondences with damped Gauss-Newton steps.

    Returns (graph, history) where history is the accepted-step energy trace;
    it is monotone non-increasing because correspondence updates only shrink
    the alignment term and steps are accepted only on decrease.
    """
    verts = np.atleast_2d(np.asarray(vertices, dtype=float))
    tgt = np.atleast_2d(np.asarray(target, dtype=float))
    if not (np.all(np.isfinite(verts)) and np.all(np.isfinite(tgt))):
        raise NonFiniteEnergy("non-finite input points")

    n = len(verts)
    stride = max(1, n // params.max_correspondences)
    corr_idx = np.arange(0, n, stride)
    tree = cKDTree(tgt)

    def closest_targets():
        deformed = graph.deform(verts[corr_idx], graph.bind_idx[corr_idx],
                                graph.bind_w[corr_idx])
        _, ti = tree.query(deformed)
        return tgt[ti]

    def total_energy(targets):
        return energy(graph, verts, corr_idx, targets, params.alpha1,
                      params.alpha2, params.welsch_c).total

    history: list[float] = []
    targets = closest_targets()
    e_current = total_energy(targets)
    history.append(e_current)

    for _ in range(params.max_outer):
        e_outer_start = e_current

        targets = closest_targets()
        e_current = total_energy(targets)
        history.append(e_current)

        for _ in range(params.max_inner):
            residual, J = _assemble(graph, verts, corr_idx, targets, params)
            H = (J.T @ J).tocsc()
            scale = max(H.diagonal().max(), 1.0)
            H = H + params.levenberg * scale * sp.identity(H.shape[0], format="csc")
            grad = J.T @ residual
            try:
                delta = spsolve(H, -grad)
            except Exception:
                break
            if not np.all(np.isfinite(delta)):
                break
            x0 = _pack(graph)
            alpha = 1.0
            accepted = False
            for _ in range(30):
                _unpack(graph, x0 + alpha * delta)
                e_new = total_energy(targets)
                if e_new < e_current - 1e-15:
                    e_current = e_new
                    history.append(e_current)
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                _unpack(graph, x0)
                break

        if e_outer_start <= 0:
            break
        if (e_outer_start - e_current) / max(e_outer_start, 1e-30) < params.tol:
            break

    return graph, history


# ---------------------------------------------------------------- transfer

def transfer_trajectory(traj: ScanTrajectory, graph: DeformationGraph,
                        target: PointCloud3, up: np.ndarray,
                        normal_k: int = 20, binding_k: int = 4) -> ScanTrajectory:
    """Deform the planned trajectory through the graph and attach probe poses.

    Probe z points into the skin (opposite the local target-surface normal),
    probe x follows the scan direction, so the long probe axis (y) stays
    perpendicular to the scan direction.
    """
    bind_idx, bind_w = graph.bind(traj.surface_points, k=binding_k)
    moved = graph.deform(traj.surface_points, bind_idx, bind_w)

    if target.normals is not None:
        tgt = target
    else:
        k = min(normal_k, len(target))
        tgt = estimate_normals(target, k=max(k, 3), up_hint=up)
    tree = cKDTree(tgt.points)
    _, nearest = tree.query(moved)
    z_axes = -tgt.normals[nearest]

    n = len(moved)
    tangents = np.gradient(moved, axis=0) if n > 1 else np.array([[1.0, 0.0, 0.0]])
    poses = []
    for i in range(n):
        z = z_axes[i] / np.linalg.norm(z_axes[i])
        tan = tangents[i]
        x = tan - (tan @ z) * z
        nx = np.linalg.norm(x)
        if nx < 1e-9:
            x = np.array([1.0, 0.0, 0.0]) - z[0] * z
            nx = np.linalg.norm(x)
        x = x / nx
        y = np.cross(z, x)
        poses.append(RigidTransform(np.stack([x, y, z], axis=1), moved[i]))
    return ScanTrajectory(moved, traj.centerline_indices.copy(), poses)
