"""File formats: ASCII PLY, CSV point lists, 16-bit depth PGM, 8-bit mask PGM."""
import numpy as np
import pytest

from limbscan.geometry import PointCloud3
from limbscan.pointio import (DEPTH_SCALE, read_depth_pgm, read_mask_pgm,
                              read_ply, read_points_csv, write_depth_pgm,
                              write_mask_pgm, write_ply, write_points_csv)


class TestPly:
    def test_roundtrip_points(self, tmp_path, rng):
        cloud = PointCloud3(rng.uniform(-100.0, 100.0, (50, 3)))
        path = tmp_path / "c.ply"
        write_ply(path, cloud)
        back = read_ply(path)
        np.testing.assert_array_equal(back.points, cloud.points)
        assert back.normals is None

    def test_roundtrip_with_normals(self, tmp_path, rng):
        n = rng.normal(size=(20, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        cloud = PointCloud3(rng.uniform(-5.0, 5.0, (20, 3)), n)
        path = tmp_path / "c.ply"
        write_ply(path, cloud)
        back = read_ply(path)
        np.testing.assert_array_equal(back.normals, cloud.normals)

    def test_header_is_ascii_ply(self, tmp_path):
        path = tmp_path / "c.ply"
        write_ply(path, PointCloud3(np.zeros((2, 3))))
        lines = path.read_text().splitlines()
        assert lines[0] == "ply"
        assert lines[1] == "format ascii 1.0"
        assert "element vertex 2" in lines

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("OFF\n")
        with pytest.raises(ValueError):
            read_ply(path)


class TestCsv:
    def test_roundtrip(self, tmp_path, rng):
        pts = rng.uniform(-10.0, 10.0, (30, 3))
        path = tmp_path / "p.csv"
        write_points_csv(path, pts)
        np.testing.assert_array_equal(read_points_csv(path), pts)

    def test_header_skipped(self, tmp_path):
        path = tmp_path / "p.csv"
        write_points_csv(path, np.ones((3, 3)), header="x,y,z")
        assert path.read_text().startswith("x,y,z\n")
        assert read_points_csv(path).shape == (3, 3)

    def test_no_header(self, tmp_path):
        path = tmp_path / "p.csv"
        write_points_csv(path, np.ones((3, 3)), header=None)
        assert read_points_csv(path).shape == (3, 3)

    def test_extra_columns_preserved(self, tmp_path, rng):
        rows = rng.uniform(size=(4, 5))
        path = tmp_path / "p.csv"
        write_points_csv(path, rows, header="i,j,x,y,z")
        np.testing.assert_array_equal(read_points_csv(path), rows)

    def test_bad_body_raises(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("x,y,z\n1,2,3\noops,2,3\n")
        with pytest.raises(ValueError):
            read_points_csv(path)


class TestDepthPgm:
    def test_roundtrip_quantized(self, tmp_path, rng):
        depth = rng.uniform(0.0, 900.0, (12, 17))
        path = tmp_path / "d.pgm"
        write_depth_pgm(path, depth)
        back = read_depth_pgm(path)
        assert back.shape == depth.shape
        # stored in 0.1 mm integer units
        assert np.max(np.abs(back - depth)) <= 0.5 / DEPTH_SCALE + 1e-12

    def test_exact_on_tenth_mm_grid(self, tmp_path):
        depth = np.arange(12, dtype=float).reshape(3, 4) / DEPTH_SCALE
        path = tmp_path / "d.pgm"
        write_depth_pgm(path, depth)
        np.testing.assert_array_equal(read_depth_pgm(path), depth)

    def test_binary_16bit_big_endian(self, tmp_path):
        path = tmp_path / "d.pgm"
        write_depth_pgm(path, np.array([[25.7]]))  # 257 units = 0x0101
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n1 1\n65535\n")
        assert raw[-2:] == bytes([1, 1])

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n65535\n" + bytes([0, 10, 0, 20]))
        np.testing.assert_array_equal(read_depth_pgm(path), [[1.0, 2.0]])

    def test_rejects_ascii_pgm(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P2\n1 1\n255\n7\n")
        with pytest.raises(ValueError):
            read_depth_pgm(path)


class TestMaskPgm:
    def test_roundtrip(self, tmp_path, rng):
        mask = (rng.uniform(size=(9, 13)) > 0.5).astype(np.uint8)
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, mask)
        np.testing.assert_array_equal(read_mask_pgm(path), mask)

    def test_foreground_written_as_255(self, tmp_path):
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, np.array([[0, 1]], dtype=np.uint8))
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 1\n255\n")
        assert raw[-2:] == bytes([0, 255])
