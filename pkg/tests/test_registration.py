"""Non-rigid registration: alignment, deformation graph, energy, solver."""
import numpy as np
import pytest
from scipy.spatial import cKDTree

from limbscan.errors import DegenerateSegment, OutOfBindingReach
from limbscan.geometry import PointCloud3, RigidTransform
from limbscan.registration import (ArmObservation, DeformationGraph,
                                   SolveParams, build_graph, energy,
                                   initial_align, solve, transfer_trajectory,
                                   welsch)
from limbscan.trajectory import ScanTrajectory

UP = np.array([0.0, 0.0, 1.0])


def _observation(arm) -> ArmObservation:
    cloud, axial, _ = arm.top_shell()
    fm = axial <= arm.elbow_axial
    return ArmObservation(PointCloud3(cloud.points[fm]),
                          PointCloud3(cloud.points[~fm]),
                          arm.wrist, arm.elbow, arm.shoulder)


def _identity_graph(points, radius=15.0):
    g = build_graph(points, radius)
    return g


def _line_cloud(n=400, step=0.5):
    pts = np.zeros((n, 3))
    pts[:, 0] = np.arange(n) * step
    return pts


class TestWelsch:
    def test_zero_is_zero(self):
        assert welsch(np.array([0.0]), 5.0)[0] == 0.0

    def test_saturates_at_c_squared(self):
        assert welsch(np.array([1e9]), 5.0)[0] == pytest.approx(25.0)

    def test_monotone(self, rng):
        s = np.sort(rng.uniform(0.0, 100.0, 50))
        v = welsch(s, 5.0)
        assert np.all(np.diff(v) >= 0)


class TestBuildGraph:
    def test_node_separation_on_line(self):
        pts = _line_cloud()
        g = build_graph(pts, radius=10.0)
        d = np.abs(g.node_positions[:, 0][:, None] - g.node_positions[:, 0])
        np.fill_diagonal(d, np.inf)
        assert d.min() > 10.0

    def test_every_vertex_covered(self):
        pts = _line_cloud()
        g = build_graph(pts, radius=10.0)
        dmin, _ = cKDTree(g.node_positions).query(pts)
        assert dmin.max() <= 10.0 + 1e-9

    def test_bindings_convex(self):
        g = build_graph(_line_cloud(), radius=10.0)
        sums = g.bind_w.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)
        assert np.all(g.bind_w >= 0.0)
        assert np.all((g.bind_idx >= -1) & (g.bind_idx < g.n_nodes))

    def test_neighbors_symmetric(self):
        g = build_graph(_line_cloud(), radius=10.0)
        for i, nb in enumerate(g.neighbors):
            for j in nb:
                assert i in g.neighbors[j]

    def test_neighbor_reach_is_twice_radius(self):
        g = build_graph(_line_cloud(), radius=10.0)
        x = g.node_positions[:, 0]
        for i, nb in enumerate(g.neighbors):
            for j in nb:
                assert abs(x[i] - x[j]) <= 20.0 + 1e-9

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            build_graph(_line_cloud(), radius=0.0)


class TestDeformationGraph:
    def test_identity_deform_is_noop(self, rng):
        pts = rng.uniform(-20.0, 20.0, (300, 3))
        g = build_graph(pts, radius=8.0)
        np.testing.assert_allclose(g.deform(pts), pts, atol=1e-12)

    def test_pure_translation(self, rng):
        pts = rng.uniform(-20.0, 20.0, (300, 3))
        g = build_graph(pts, radius=8.0)
        g.translations[:] = [1.0, -2.0, 3.0]
        np.testing.assert_allclose(g.deform(pts), pts + [1.0, -2.0, 3.0],
                                   atol=1e-12)

    def test_dict_roundtrip(self, rng):
        pts = rng.uniform(-20.0, 20.0, (200, 3))
        g = build_graph(pts, radius=8.0)
        g.translations[:] = rng.normal(size=g.translations.shape)
        back = DeformationGraph.from_dict(g.to_dict())
        np.testing.assert_array_equal(back.node_positions, g.node_positions)
        np.testing.assert_array_equal(back.bind_w, g.bind_w)
        np.testing.assert_allclose(back.deform(pts), g.deform(pts), atol=1e-12)

    def test_bind_out_of_reach(self, rng):
        pts = rng.uniform(-5.0, 5.0, (100, 3))
        g = build_graph(pts, radius=3.0)
        with pytest.raises(OutOfBindingReach):
            g.bind(np.array([[500.0, 0.0, 0.0]]))

    def test_bind_weights_convex(self, rng):
        pts = rng.uniform(-20.0, 20.0, (200, 3))
        g = build_graph(pts, radius=8.0)
        probes = rng.uniform(-15.0, 15.0, (20, 3))
        _, w = g.bind(probes)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_nodes_property(self, rng):
        g = build_graph(rng.uniform(-5.0, 5.0, (60, 3)), radius=4.0)
        nodes = g.nodes
        assert len(nodes) == g.n_nodes
        np.testing.assert_array_equal(nodes[0].position, g.node_positions[0])


class TestEnergy:
    def test_zero_at_identity_fixed_point(self, rng):
        pts = rng.uniform(-20.0, 20.0, (300, 3))
        g = build_graph(pts, radius=8.0)
        idx = np.arange(len(pts))
        e = energy(g, pts, idx, pts, alpha1=10.0, alpha2=100.0, welsch_c=5.0)
        assert e.l_ali == 0.0 and e.l_reg == 0.0 and e.l_rot == 0.0
        assert e.total == 0.0

    def test_rigidity_of_doubled_affine(self):
        # one isolated node with A = 2I: ||A^T A - I||_F^2 = 27, (det-1)^2 = 49
        g = DeformationGraph(
            node_positions=np.zeros((1, 3)), affines=2.0 * np.eye(3)[None],
            translations=np.zeros((1, 3)), neighbors=[[]], sampling_radius=1.0,
            bind_idx=np.zeros((1, 1), dtype=int), bind_w=np.ones((1, 1)))
        v = np.zeros((1, 3))
        e = energy(g, v, np.array([0]), g.deform(v), 10.0, 100.0, 5.0)
        assert e.l_rot == pytest.approx(76.0, rel=1e-12)
        assert e.total == pytest.approx(100.0 * 76.0, rel=1e-12)

    def test_translation_smoothness_consistent(self, rng):
        pts = _line_cloud()
        g = build_graph(pts, radius=10.0)
        g.translations[:] = [0.0, 1.0, 0.0]  # common shift keeps edges consistent
        idx = np.arange(len(pts))
        e = energy(g, pts, idx, pts + [0.0, 1.0, 0.0], 10.0, 100.0, 5.0)
        assert e.l_reg == pytest.approx(0.0, abs=1e-20)
        assert e.l_rot == pytest.approx(0.0, abs=1e-20)


class TestInitialAlign:
    def test_recovers_yaw_and_translation(self, atlas):
        src = _observation(atlas)
        theta = 0.5
        c, s = np.cos(theta), np.sin(theta)
        T = RigidTransform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
                           np.array([30.0, -12.0, 4.0]))
        tgt = ArmObservation(src.forearm.transformed(T), src.upperarm.transformed(T),
                             T.apply(src.wrist), T.apply(src.elbow),
                             T.apply(src.shoulder))
        aligned, transforms, scales, maps = initial_align(src, tgt)
        np.testing.assert_allclose(aligned.union_points(),
                                   tgt.union_points(), atol=1e-6)
        np.testing.assert_allclose(aligned.elbow, tgt.elbow, atol=1e-6)
        for name in ("forearm", "upperarm"):
            np.testing.assert_allclose(scales[name].factors, 1.0, atol=1e-6)

    def test_point_maps_match_aligned_cloud(self, atlas):
        src = _observation(atlas)
        T = RigidTransform(np.eye(3), np.array([5.0, 2.0, 0.0]))
        tgt = ArmObservation(src.forearm.transformed(T), src.upperarm.transformed(T),
                             T.apply(src.wrist), T.apply(src.elbow),
                             T.apply(src.shoulder))
        aligned, _, _, maps = initial_align(src, tgt)
        np.testing.assert_allclose(maps["forearm"](src.forearm.points),
                                   aligned.forearm.points, atol=1e-9)

    def test_degenerate_joints_rejected(self, atlas):
        src = _observation(atlas)
        bad = ArmObservation(src.forearm, src.upperarm, src.wrist, src.wrist,
                             src.shoulder)
        with pytest.raises(DegenerateSegment):
            initial_align(src, bad)


class TestSolve:
    def test_fixed_point_stays_put(self, rng):
        pts = rng.uniform(-20.0, 20.0, (400, 3))
        g = build_graph(pts, radius=8.0)
        g, history = solve(g, pts, pts, SolveParams(max_outer=2))
        assert history[-1] <= 1e-8
        np.testing.assert_allclose(g.deform(pts), pts, atol=1e-6)

    def test_recovers_small_translation(self, rng):
        pts = rng.uniform(0.0, 60.0, (600, 3)) * np.array([1.0, 0.3, 0.1])
        target = pts + np.array([0.8, -0.5, 0.3])
        g = build_graph(pts, radius=10.0)
        g, history = solve(g, pts, target, SolveParams())
        moved = g.deform(pts)
        d, _ = cKDTree(target).query(moved)
        assert np.median(d) < 0.1
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_history_monotone_under_bending(self, template, rng):
        from limbscan.scene import ArticulatedPose, articulate, hinge_points
        shell, axial, _ = template.top_shell()
        keep = (axial > 180.0) & (axial < 320.0)  # patch across the elbow
        pts = shell.points[keep]
        target = hinge_points(pts, axial[keep], template.elbow, 150.0, 30.0)
        g = build_graph(pts, radius=15.0)
        g, history = solve(g, pts, target, SolveParams(max_outer=15))
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
        d, _ = cKDTree(target).query(g.deform(pts))
        assert np.median(d) < 1.0


class TestTransferTrajectory:
    def test_identity_graph_keeps_points(self, rng):
        pts = np.zeros((12, 3))
        pts[:, 0] = np.arange(12.0)
        surf_xy = rng.uniform(-2.0, 14.0, (500, 2))
        surface = PointCloud3(
            np.column_stack([surf_xy, np.ones(500)]),
            np.tile([0.0, 0.0, 1.0], (500, 1)))
        g = build_graph(pts, radius=4.0)
        traj = ScanTrajectory(pts, np.arange(12))
        moved = transfer_trajectory(traj, g, surface, UP)
        np.testing.assert_allclose(moved.surface_points, pts, atol=1e-9)
        assert len(moved.poses) == 12

    def test_poses_orthonormal_and_pushing_down(self, rng):
        pts = np.zeros((12, 3))
        pts[:, 0] = np.arange(12.0)
        surface = PointCloud3(
            np.column_stack([rng.uniform(-2.0, 14.0, (500, 2)), np.ones(500)]),
            np.tile([0.0, 0.0, 1.0], (500, 1)))
        g = build_graph(pts, radius=4.0)
        moved = transfer_trajectory(ScanTrajectory(pts, np.arange(12)), g,
                                    surface, UP)
        for pose in moved.poses:
            R = pose.rotation
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert np.linalg.det(R) == pytest.approx(1.0)
            assert R[:, 2] @ UP < 0  # probe z into the surface
            # probe x follows the scan direction (+x here)
            assert R[0, 0] > 0.9
