"""File I/O: ASCII PLY clouds, CSV point lists, PGM depth/mask images."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud3

# depth PGM stores 0.1 mm units in 16 bits
DEPTH_SCALE = 10.0


def write_ply(path, cloud: PointCloud3) -> None:
    p = cloud.points
    has_normals = cloud.normals is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_normals:
        lines += ["property float nx", "property float ny", "property float nz"]
    lines.append("end_header")
    data = np.hstack([p, cloud.normals]) if has_normals else p
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def read_ply(path) -> PointCloud3:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vertex = 0
    props: list[str] = []
    i = 1
    while i < len(text):
        line = text[i].strip()
        i += 1
        if line.startswith("element vertex"):
            n_vertex = int(line.split()[-1])
        elif line.startswith("property") and n_vertex:
            props.append(line.split()[-1])
        elif line == "end_header":
            break
    rows = [list(map(float, text[i + j].split())) for j in range(n_vertex)]
    data = np.asarray(rows, dtype=float)
    cols = {name: k for k, name in enumerate(props)}
    pts = data[:, [cols["x"], cols["y"], cols["z"]]]
    normals = None
    if "nx" in cols:
        normals = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
    return PointCloud3(pts, normals)


def write_points_csv(path, points: np.ndarray, header: str | None = "x,y,z") -> None:
    lines = [] if header is None else [header]
    for row in np.atleast_2d(points):
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_points_csv(path) -> np.ndarray:
    """Read an x,y,z-per-line CSV; a leading non-numeric header is skipped."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            if rows:
                raise
    return np.asarray(rows, dtype=float)


def write_depth_pgm(path, depth_mm: np.ndarray) -> None:
    """16-bit binary PGM, depth in 0.1 mm units, 0 = invalid."""
    d = np.asarray(depth_mm, dtype=float)
    scaled = np.clip(np.rint(d * DEPTH_SCALE), 0, 65535).astype(">u2")
    h, w = scaled.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(scaled.tobytes())


def read_depth_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    header, values = _parse_pgm_header(raw)
    w, h, maxval = header
    dtype = ">u2" if maxval > 255 else np.uint8
    img = np.frombuffer(values, dtype=dtype, count=w * h).reshape(h, w)
    if maxval > 255:
        return img.astype(float) / DEPTH_SCALE
    return img.astype(float)


def write_mask_pgm(path, mask: np.ndarray) -> None:
    """8-bit binary PGM, foreground 255, background 0."""
    m = (np.asarray(mask) != 0).astype(np.uint8) * 255
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(m.tobytes())


def read_mask_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    (w, h, maxval), values = _parse_pgm_header(raw)
    img = np.frombuffer(values, dtype=np.uint8, count=w * h).reshape(h, w)
    return (img > maxval // 2).astype(np.uint8)


def _parse_pgm_header(raw: bytes):
    if not raw.startswith(b"P5"):
        raise ValueError("only binary (P5) PGM is supported")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    return (fields[0], fields[1], fields[2]), raw[pos:]
