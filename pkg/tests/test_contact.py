import numpy as np
import pytest

from depthtouch.contact import (DepthMap, GraspSample, SensorGeometry, bin_depth_map,
                                bin_index, extract_contact_volume, sample_grasp)
from depthtouch.errors import EmptyContact
from depthtouch.geometry import PointCloud, RigidTransform, transform


def identity_grasp(geom=None):
    return GraspSample(position=np.zeros(3), yaw=0.0, finger="left",
                       pose=RigidTransform.identity(), contact_depth=0.001)


class TestSensorGeometry:
    def test_defaults(self):
        g = SensorGeometry()
        assert g.y_far == pytest.approx(2 * g.z_t)
        assert g.half_x == pytest.approx(g.pad * g.x_t / 2)

    def test_validation(self):
        with pytest.raises(ValueError):
            SensorGeometry(x_t=-1)
        with pytest.raises(ValueError):
            SensorGeometry(pad=0.5)


class TestSampleGrasp:
    def cloud(self, seed=0, n=5000):
        rng = np.random.default_rng(seed)
        return PointCloud(rng.uniform([-0.04, -0.03, 0.0], [0.04, 0.03, 0.06], (n, 3)))

    def test_zero_offset_hits_centroid(self):
        cloud = self.cloud()
        left, right = sample_grasp(cloud, seed=1, offset_frac=0.0)
        assert np.allclose(left.position, cloud.points.mean(axis=0))
        assert np.allclose(right.position, left.position)

    def test_positions_inside_allowed_box(self):
        cloud = self.cloud(1)
        pts = cloud.points
        centroid = pts.mean(axis=0)
        half = (pts.max(axis=0) - pts.min(axis=0)) / 2
        lo, hi = centroid - 0.4 * half, centroid + 0.4 * half
        positions = np.array([sample_grasp(cloud, seed=s)[0].position
                              for s in range(1000)])
        assert np.all(positions >= lo - 1e-12) and np.all(positions <= hi + 1e-12)
        # Coarse uniformity sanity per axis (chi-square against 10 equal bins).
        for axis in range(3):
            counts, _ = np.histogram(positions[:, axis], bins=10, range=(lo[axis], hi[axis]))
            chi2 = ((counts - 100.0) ** 2 / 100.0).sum()
            assert chi2 < 35.0

    def test_same_seed_identical(self):
        cloud = self.cloud(2)
        a = sample_grasp(cloud, seed=7)
        b = sample_grasp(cloud, seed=7)
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.position, gb.position)
            assert ga.yaw == gb.yaw and ga.contact_depth == gb.contact_depth
            assert np.array_equal(ga.pose.rotation, gb.pose.rotation)
            assert np.array_equal(ga.pose.translation, gb.pose.translation)

    def test_fingers_face_each_other(self):
        cloud = self.cloud(3)
        left, right = sample_grasp(cloud, seed=5)
        # Sensor y axes (second rotation row maps world into sensor y).
        y_left = left.pose.rotation[1]
        y_right = right.pose.rotation[1]
        assert np.allclose(y_left, -y_right)
        for gs in (left, right):
            gs.pose.validate(1e-9)
            assert np.allclose(gs.pose.rotation[2], [0.0, 0.0, 1.0])  # z stays up

    def test_contact_depth_realized(self):
        cloud = self.cloud(4)
        geom = SensorGeometry()
        for seed in range(10):
            for gs in sample_grasp(cloud, seed=seed, geom=geom):
                local = gs.pose.apply(cloud.points)
                window = ((np.abs(local[:, 0]) <= geom.half_x)
                          & (np.abs(local[:, 2]) <= geom.half_z))
                assert window.any()
                assert local[window, 1].min() == pytest.approx(-gs.contact_depth)
                assert 0.2 * geom.z_t <= gs.contact_depth <= 0.8 * geom.z_t


class TestExtractContactVolume:
    def test_single_point_at_origin(self):
        geom = SensorGeometry()
        out = extract_contact_volume(PointCloud(np.zeros((1, 3))), identity_grasp(), geom)
        assert np.array_equal(out.points, np.zeros((1, 3)))

    def test_pad_scales_crop_bounds(self):
        geom = SensorGeometry(x_t=0.02, y_t=0.02, z_t=0.003, pad=1.2)
        inside = [geom.half_x - 1e-9, 0.0, 0.0]
        outside = [geom.half_x + 1e-9, 0.0, 0.0]
        cloud = PointCloud(np.array([inside, outside]))
        out = extract_contact_volume(cloud, identity_grasp(), geom)
        assert len(out) == 1
        assert geom.half_x == pytest.approx(1.2 * 0.02 / 2)

    def test_matches_transform_then_crop_oracle(self):
        rng = np.random.default_rng(5)
        geom = SensorGeometry()
        for trial in range(5):
            pts = rng.uniform(-0.05, 0.05, (2000, 3))
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            w, x, y, z = q
            rot = np.array([
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ])
            pose = RigidTransform(rot, rng.uniform(-0.01, 0.01, 3))
            grasp = GraspSample(position=np.zeros(3), yaw=0.0, finger="left",
                                pose=pose, contact_depth=0.001)
            local = pts @ pose.rotation.T + pose.translation
            keep = ((np.abs(local[:, 0]) <= geom.half_x)
                    & (np.abs(local[:, 2]) <= geom.half_z)
                    & (local[:, 1] >= -geom.z_t) & (local[:, 1] <= geom.y_far))
            if not keep.any():
                continue
            out = extract_contact_volume(PointCloud(pts), grasp, geom)
            assert np.array_equal(out.points, local[keep])

    def test_empty_contact_raises(self):
        geom = SensorGeometry()
        far = PointCloud(np.full((10, 3), 1.0))
        with pytest.raises(EmptyContact):
            extract_contact_volume(far, identity_grasp(), geom)

    def test_frame_composition_consistency(self):
        rng = np.random.default_rng(6)
        geom = SensorGeometry()
        pts = rng.uniform(-0.03, 0.03, (500, 3))
        a = np.radians(30)
        pre = RigidTransform(np.array([[np.cos(a), -np.sin(a), 0],
                                       [np.sin(a), np.cos(a), 0],
                                       [0, 0, 1.0]]), np.array([0.01, 0.0, 0.0]))
        world_pose = RigidTransform.identity()
        grasp_direct = GraspSample(position=np.zeros(3), yaw=0.0, finger="left",
                                   pose=world_pose.compose(pre), contact_depth=0.001)
        grasp_plain = GraspSample(position=np.zeros(3), yaw=0.0, finger="left",
                                  pose=world_pose, contact_depth=0.001)
        moved = transform(PointCloud(pts), pre)
        out_a = extract_contact_volume(PointCloud(pts), grasp_direct, geom)
        out_b = extract_contact_volume(moved, grasp_plain, geom)
        assert out_a.points.shape == out_b.points.shape
        assert np.abs(out_a.points - out_b.points).max() < 1e-9


def brute_force_grid(pts, geom, m, k):
    """Exhaustive per-bin minimum, independent grouping path."""
    grid = np.full((m, k), geom.y_far, dtype=np.float64)
    rows = bin_index(pts[:, 2], -geom.half_z, geom.half_z, m)
    cols = bin_index(pts[:, 0], -geom.half_x, geom.half_x, k)
    for i in range(m):
        for j in range(k):
            mask = (rows == i) & (cols == j)
            if mask.any():
                grid[i, j] = pts[mask, 1].min()
    return np.maximum(grid, -geom.z_t).astype(np.float32)


class TestBinDepthMap:
    def test_single_point(self):
        geom = SensorGeometry()
        dm = bin_depth_map(PointCloud(np.array([[0.0, 0.005, 0.0]])), geom, 10, 10)
        assert dm.values[5, 5] == np.float32(0.005)
        rest = np.delete(dm.values.ravel(), 55)
        assert np.all(rest == np.float32(geom.y_far))

    def test_min_rule(self):
        geom = SensorGeometry()
        pts = np.array([[0.0, 0.003, 0.0], [0.0, -0.001, 0.0]])
        dm = bin_depth_map(PointCloud(pts), geom, 10, 10)
        assert dm.values[5, 5] == np.float32(-0.001)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(7)
        geom = SensorGeometry()
        for trial in range(3):
            pts = np.column_stack([
                rng.uniform(-geom.half_x, geom.half_x, 2000),
                rng.uniform(-geom.z_t, geom.y_far, 2000),
                rng.uniform(-geom.half_z, geom.half_z, 2000)])
            dm = bin_depth_map(PointCloud(pts), geom, 20, 20)
            assert np.array_equal(dm.values, brute_force_grid(pts, geom, 20, 20))

    def test_order_and_duplication_invariant(self):
        rng = np.random.default_rng(8)
        geom = SensorGeometry()
        pts = np.column_stack([rng.uniform(-geom.half_x, geom.half_x, 500),
                               rng.uniform(-geom.z_t, geom.y_far, 500),
                               rng.uniform(-geom.half_z, geom.half_z, 500)])
        base = bin_depth_map(PointCloud(pts), geom, 25, 25)
        shuffled = bin_depth_map(PointCloud(pts[rng.permutation(500)]), geom, 25, 25)
        doubled = bin_depth_map(PointCloud(np.vstack([pts, pts])), geom, 25, 25)
        assert np.array_equal(base.values, shuffled.values)
        assert np.array_equal(base.values, doubled.values)

    def test_refinement_never_increases_parent_min(self):
        rng = np.random.default_rng(9)
        geom = SensorGeometry()
        # Keep points away from cell boundaries so parent/child assignment
        # agrees under exact arithmetic.
        m = k = 10
        cell_x = 2 * geom.half_x / (2 * k)
        pts = []
        for _ in range(400):
            i = rng.integers(0, 2 * m)
            j = rng.integers(0, 2 * k)
            x = -geom.half_x + (j + 0.5) * cell_x
            z = -geom.half_z + (i + 0.5) * (2 * geom.half_z / (2 * m))
            pts.append([x, rng.uniform(-geom.z_t, geom.y_far), z])
        pts = np.array(pts)
        coarse = bin_depth_map(PointCloud(pts), geom, m, k).values
        fine = bin_depth_map(PointCloud(pts), geom, 2 * m, 2 * k).values
        block_min = fine.reshape(m, 2, k, 2).min(axis=(1, 3))
        assert np.all(block_min <= coarse + 1e-12)

    def test_clamps_to_elastomer_depth(self):
        geom = SensorGeometry()
        deep = PointCloud(np.array([[0.0, -10 * geom.z_t, 0.0]]))
        dm = bin_depth_map(deep, geom, 5, 5)
        assert dm.values.min() == np.float32(-geom.z_t)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        geom = SensorGeometry()
        pts = np.column_stack([rng.uniform(-geom.half_x, geom.half_x, 100),
                               rng.uniform(-geom.z_t, geom.y_far, 100),
                               rng.uniform(-geom.half_z, geom.half_z, 100)])
        dm = bin_depth_map(PointCloud(pts), geom, 16, 16)
        dm.save(tmp_path / "sample")
        back = DepthMap.load(tmp_path / "sample")
        assert np.array_equal(back.values, dm.values)
        assert back.x_range == dm.x_range and back.z_range == dm.z_range
        assert back.fill_value == dm.fill_value
