import struct

import numpy as np
import pytest

from depthtouch.geometry import PointCloud
from depthtouch.ply import load_ply, save_ply


def test_ascii_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(100, 3)).astype(np.float32).astype(np.float64)
    cloud = PointCloud(pts)
    path = tmp_path / "cloud.ply"
    save_ply(cloud, path)
    back = load_ply(path)
    assert np.array_equal(back.points, pts)
    assert back.normals is None


def test_ascii_round_trip_with_normals(tmp_path):
    rng = np.random.default_rng(1)
    normals = rng.normal(size=(50, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = PointCloud(rng.normal(size=(50, 3)), normals)
    path = tmp_path / "cloud.ply"
    save_ply(cloud, path)
    back = load_ply(path)
    assert np.abs(back.points - cloud.points).max() < 1e-6
    assert np.abs(back.normals - normals).max() < 1e-6


def test_binary_little_endian_read(tmp_path):
    pts = np.array([[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]], dtype="<f4")
    header = (b"ply\nformat binary_little_endian 1.0\n"
              b"element vertex 2\n"
              b"property float x\nproperty float y\nproperty float z\n"
              b"end_header\n")
    path = tmp_path / "bin.ply"
    path.write_bytes(header + pts.tobytes())
    back = load_ply(path)
    assert np.allclose(back.points, pts, atol=1e-7)


def test_binary_with_extra_properties(tmp_path):
    rows = [(1.0, 2.0, 3.0, 200), (4.0, 5.0, 6.0, 100)]
    header = (b"ply\nformat binary_little_endian 1.0\n"
              b"element vertex 2\n"
              b"property float x\nproperty float y\nproperty float z\n"
              b"property uchar intensity\n"
              b"end_header\n")
    body = b"".join(struct.pack("<fffB", *row) for row in rows)
    path = tmp_path / "extra.ply"
    path.write_bytes(header + body)
    back = load_ply(path)
    assert np.allclose(back.points, [[1, 2, 3], [4, 5, 6]])


def test_missing_coordinate_property_rejected(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                    "property float x\nproperty float y\nend_header\n0 0\n")
    with pytest.raises(ValueError):
        load_ply(path)


def test_not_a_ply_rejected(tmp_path):
    path = tmp_path / "nope.ply"
    path.write_text("hello world\n")
    with pytest.raises(ValueError):
        load_ply(path)
