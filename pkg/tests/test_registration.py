import numpy as np
import pytest

from depthtouch.errors import DegenerateCloud, NoCorrespondences
from depthtouch.geometry import PointCloud, RigidTransform, pose_error, transform
from depthtouch.registration import (IcpParams, RegistrationConfig, coarse_align,
                                     compute_fpfh, estimate_normals, icp_refine, register)


def rot_z(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0],
                     [np.sin(a), np.cos(a), 0.0],
                     [0.0, 0.0, 1.0]])


def rotation_from_axis_angle(axis, deg):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    a = np.radians(deg)
    kx, ky, kz = axis
    k = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * (k @ k)


def potato_cloud(n=4000, seed=0, scale=0.05):
    """Smooth asymmetric star-shaped surface; no rotational symmetries."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    theta = np.arctan2(d[:, 1], d[:, 0])
    phi = np.arccos(np.clip(d[:, 2], -1, 1))
    r = scale * (1.0 + 0.25 * np.sin(2 * theta) * np.sin(phi) ** 2
                 + 0.15 * np.cos(3 * phi) + 0.2 * np.sin(theta + 1.0) * np.cos(2 * phi))
    return PointCloud(d * r[:, None])


def brute_force_icp_step(model_pts, scene_pts, init, cap):
    """Independent single ICP step: exhaustive NN + least-squares fit."""
    moved = model_pts @ init.rotation.T + init.translation
    d2 = ((moved[:, None, :] - scene_pts[None, :, :]) ** 2).sum(axis=2)
    nn = d2.argmin(axis=1)
    dist = np.sqrt(d2[np.arange(len(moved)), nn])
    valid = dist <= cap
    src = model_pts[valid]
    dst = scene_pts[nn[valid]]
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    t = mu_d - r @ mu_s
    return r, t


class TestCoarseAlign:
    def test_self_alignment_near_identity(self):
        cloud = potato_cloud(3000, seed=1)
        pose = coarse_align(cloud, cloud, feature_radius=0.02, seed=0)
        t_err, r_err = pose_error(pose, RigidTransform.identity())
        assert t_err < 0.005
        assert r_err < 5.0

    def test_recovers_90_degree_rotation(self):
        cloud = potato_cloud(3000, seed=2)
        truth = RigidTransform(rot_z(90.0), np.zeros(3))
        scene = transform(cloud, truth)
        pose = coarse_align(cloud, scene, feature_radius=0.02, seed=0)
        t_err, r_err = pose_error(pose, truth)
        assert t_err < 0.02
        assert r_err < 10.0

    def test_seeds_icp_through_dropout_and_noise(self):
        rng = np.random.default_rng(3)
        cloud = potato_cloud(3000, seed=3)
        truth = RigidTransform(rot_z(60.0), np.array([0.03, -0.02, 0.05]))
        full_scene = transform(cloud, truth)
        keep = rng.random(len(cloud)) > 0.3
        noisy = full_scene.points[keep] + rng.normal(0, 0.0005, (keep.sum(), 3))
        scene = PointCloud(noisy)
        init = coarse_align(cloud, scene, feature_radius=0.02, seed=0)
        result = icp_refine(cloud, scene, init, IcpParams(max_correspondence_dist=0.02))
        t_err, r_err = pose_error(result.pose, truth)
        assert t_err < 0.003
        assert r_err < 2.0

    def test_degenerate_cloud_rejected(self):
        line = PointCloud(np.column_stack([np.linspace(0, 1, 10),
                                           np.zeros(10), np.zeros(10)]))
        blob = potato_cloud(100, seed=4)
        with pytest.raises(DegenerateCloud):
            coarse_align(line, blob, feature_radius=0.02)
        with pytest.raises(DegenerateCloud):
            coarse_align(blob, PointCloud(np.zeros((2, 3))), feature_radius=0.02)

    def test_deterministic_under_seed(self):
        cloud = potato_cloud(1500, seed=5)
        scene = transform(cloud, RigidTransform(rot_z(30), np.array([0.01, 0, 0])))
        a = coarse_align(cloud, scene, feature_radius=0.02, seed=7)
        b = coarse_align(cloud, scene, feature_radius=0.02, seed=7)
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)


class TestIcpRefine:
    def test_identity_on_same_cloud(self):
        cloud = potato_cloud(1000, seed=6)
        result = icp_refine(cloud, cloud, RigidTransform.identity())
        assert result.converged
        assert result.fitness < 1e-12
        t_err, r_err = pose_error(result.pose, RigidTransform.identity())
        assert t_err < 1e-9
        assert r_err < 1e-7

    def test_known_transform_recovery(self):
        rng = np.random.default_rng(7)
        cloud = potato_cloud(1200, seed=7)
        for trial in range(20):
            axis = rng.normal(size=3)
            truth = RigidTransform(rotation_from_axis_angle(axis, rng.uniform(-10, 10)),
                                   rng.uniform(-0.02, 0.02, 3))
            scene = transform(cloud, truth)
            result = icp_refine(cloud, scene, RigidTransform.identity())
            t_err, r_err = pose_error(result.pose, truth)
            assert t_err < 1e-3, f"trial {trial}: {t_err}"
            assert r_err < 1.0, f"trial {trial}: {r_err}"

    def test_single_step_matches_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            model = PointCloud(rng.uniform(-0.05, 0.05, (300, 3)))
            scene = PointCloud(rng.uniform(-0.05, 0.05, (400, 3)))
            init = RigidTransform(rot_z(rng.uniform(-5, 5)), rng.uniform(-0.01, 0.01, 3))
            params = IcpParams(max_iterations=1, max_correspondence_dist=0.05)
            result = icp_refine(model, scene, init, params)
            r, t = brute_force_icp_step(model.points, scene.points, init, 0.05)
            assert np.abs(result.pose.rotation - r).max() < 1e-9
            assert np.abs(result.pose.translation - t).max() < 1e-9

    def test_fitness_trace_non_increasing(self):
        cloud = potato_cloud(800, seed=9)
        truth = RigidTransform(rot_z(8.0), np.array([0.015, -0.01, 0.01]))
        scene = transform(cloud, truth)
        result = icp_refine(cloud, scene, RigidTransform.identity(),
                            IcpParams(max_correspondence_dist=0.5))
        trace = np.array(result.fitness_trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) <= 1e-15)

    def test_no_correspondences_raises(self):
        a = PointCloud(np.zeros((10, 3)))
        b = PointCloud(np.full((10, 3), 10.0))
        with pytest.raises(NoCorrespondences):
            icp_refine(a, b, RigidTransform.identity(),
                       IcpParams(max_correspondence_dist=0.05))

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            IcpParams(max_iterations=0)
        with pytest.raises(ValueError):
            IcpParams(transform_epsilon=-1)
        with pytest.raises(ValueError):
            IcpParams(max_correspondence_dist=0.0)


class TestRegister:
    def test_model_vs_itself(self):
        cloud = potato_cloud(2000, seed=10)
        result = register(cloud, cloud)
        t_err, r_err = pose_error(result.pose, RigidTransform.identity())
        assert result.fitness < 1e-8
        assert t_err < 1e-4
        assert r_err < 0.05

    def test_order_invariance(self):
        rng = np.random.default_rng(11)
        cloud = potato_cloud(1500, seed=11)
        truth = RigidTransform(rot_z(25.0), np.array([0.01, 0.02, 0.0]))
        scene = transform(cloud, truth)
        perm_model = PointCloud(cloud.points[rng.permutation(len(cloud))])
        perm_scene = PointCloud(scene.points[rng.permutation(len(scene))])
        a = register(cloud, scene)
        b = register(perm_model, perm_scene)
        assert np.abs(a.pose.rotation - b.pose.rotation).max() < 1e-9
        assert np.abs(a.pose.translation - b.pose.translation).max() < 1e-9

    def test_mismatched_model_scores_poorly(self):
        good = potato_cloud(1500, seed=12)
        other = potato_cloud(1500, seed=99, scale=0.03)
        config = RegistrationConfig(max_fitness=1e-8)
        result = register(good, other, config)
        assert result.fitness > config.max_fitness
        assert result.iterations <= config.icp.max_iterations


class TestFeatures:
    def test_normals_are_unit_and_outward(self):
        cloud = potato_cloud(1000, seed=13)
        normals = estimate_normals(cloud, radius=0.015)
        assert np.allclose(np.linalg.norm(normals, axis=1), 1.0)
        outward = np.einsum("ij,ij->i", normals, cloud.points - cloud.points.mean(axis=0))
        assert (outward > 0).mean() > 0.95

    def test_fpfh_shape_and_rotation_invariance(self):
        cloud = potato_cloud(800, seed=14)
        feats = compute_fpfh(cloud, radius=0.02)
        assert feats.shape == (800, 33)
        # Descriptors should be (near) invariant under a rigid motion.
        pose = RigidTransform(rot_z(40.0), np.array([0.1, -0.2, 0.05]))
        feats_moved = compute_fpfh(transform(cloud, pose), radius=0.02)
        medians = np.median(np.abs(feats - feats_moved), axis=0)
        assert medians.max() < 0.05
