"""Grasp sampling, sensor-frame contact extraction, and depth-map binning.

Sensor frame convention: the origin sits at the center of the tactile
pad. The pad lies in the x-z plane (x across the pad width, z along the
pad height, aligned with world up for our palm-parallel gripper); y
points from the pad into the scene. A surface point touching the pad has
y = 0, y < 0 means it indents the elastomer, y > 0 means no contact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyContact
from .geometry import PointCloud, RigidTransform

DEPTH_MAP_SCHEMA = 1


@dataclass
class SensorGeometry:
    """Tactile pad dimensions and the crop padding around it.

    x_t, y_t: pad width and height in meters; z_t: elastomer depth.
    pad: patch-enlargement factor (>= 1) applied to the x-z crop window,
    absorbing small systematic registration error. y_far bounds the
    no-contact side of the crop; defaults to 2 * z_t.
    """

    x_t: float = 0.024
    y_t: float = 0.024
    z_t: float = 0.003
    pad: float = 1.2
    y_far: float | None = None

    def __post_init__(self):
        if min(self.x_t, self.y_t, self.z_t) <= 0:
            raise ValueError("sensor dimensions must be > 0")
        if self.pad < 1.0:
            raise ValueError("pad must be >= 1")
        if self.y_far is None:
            self.y_far = 2.0 * self.z_t

    @property
    def half_x(self) -> float:
        return self.pad * self.x_t / 2.0

    @property
    def half_z(self) -> float:
        return self.pad * self.y_t / 2.0


@dataclass
class GraspSample:
    """One finger of a sampled grasp.

    ``pose`` maps world coordinates into this finger's sensor frame.
    ``contact_depth`` is how far the pad closed onto the surface (m).
    """

    position: np.ndarray
    yaw: float
    finger: str
    pose: RigidTransform
    contact_depth: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.finger not in ("left", "right"):
            raise ValueError("finger must be 'left' or 'right'")


def _finger_pose(grasp_pos: np.ndarray, inward: np.ndarray, geom: SensorGeometry,
                 points: np.ndarray, contact_depth: float) -> RigidTransform:
    """World->sensor transform for a finger closing along ``inward``.

    The sensor axes are ys = inward, zs = world up, xs = ys x zs. The
    origin starts at the grasp position and slides along ``inward`` until
    the nearest surface point inside the pad window would indent the
    elastomer by ``contact_depth``. With no points in the window the
    origin stays at the grasp position (the grasp will fail downstream).
    """
    ys = inward / np.linalg.norm(inward)
    zs = np.array([0.0, 0.0, 1.0])
    xs = np.cross(ys, zs)
    xs = xs / np.linalg.norm(xs)
    basis = np.column_stack([xs, ys, zs])      # sensor axes in world coords

    local = (points - grasp_pos) @ basis
    window = (np.abs(local[:, 0]) <= geom.half_x) & (np.abs(local[:, 2]) <= geom.half_z)
    origin = grasp_pos
    if window.any():
        y_min = local[window, 1].min()
        origin = grasp_pos + (y_min + contact_depth) * ys

    rot = basis.T
    return RigidTransform(rot, -rot @ origin)


def sample_grasp(object_cloud: PointCloud, seed, geom: SensorGeometry | None = None,
                 offset_frac: float = 0.4,
                 depth_range: tuple = (0.2, 0.8)) -> tuple[GraspSample, GraspSample]:
    """Random palm-parallel grasp on the object; returns (left, right) fingers.

    The grasp position is the cloud centroid plus a per-axis uniform
    offset within ``offset_frac`` of the bounding-box half extent. Yaw is
    uniform in [0, pi); the fingers close along +/- (cos yaw, sin yaw, 0)
    facing each other. Contact depth is drawn uniformly from
    ``depth_range`` scaled by the elastomer depth and shared by both
    fingers. Deterministic for a given seed.
    """
    if len(object_cloud) == 0:
        raise ValueError("object cloud is empty")
    geom = geom or SensorGeometry()

    rng = np.random.default_rng(seed)
    pts = object_cloud.points
    centroid = pts.mean(axis=0)
    half = (pts.max(axis=0) - pts.min(axis=0)) / 2.0
    offset = rng.uniform(-1.0, 1.0, 3) * offset_frac * half
    yaw = rng.uniform(0.0, np.pi)
    depth = rng.uniform(depth_range[0], depth_range[1]) * geom.z_t

    position = centroid + offset
    axis = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    samples = []
    for finger, inward in (("left", axis), ("right", -axis)):
        pose = _finger_pose(position, inward, geom, pts, depth)
        samples.append(GraspSample(position=position, yaw=float(yaw), finger=finger,
                                   pose=pose, contact_depth=float(depth)))
    return samples[0], samples[1]


def extract_contact_volume(model_cloud: PointCloud, grasp: GraspSample,
                           geom: SensorGeometry) -> PointCloud:
    """Sensor-frame crop of the model around one finger's contact.

    Transforms the (world-frame) model cloud into the finger's sensor
    frame and keeps x in [-pad*x_t/2, pad*x_t/2], z in
    [-pad*y_t/2, pad*y_t/2], y in [-z_t, y_far].

    Raises EmptyContact when nothing survives (the grasp missed).
    """
    local = grasp.pose.apply(model_cloud.points)
    keep = ((np.abs(local[:, 0]) <= geom.half_x)
            & (np.abs(local[:, 2]) <= geom.half_z)
            & (local[:, 1] >= -geom.z_t)
            & (local[:, 1] <= geom.y_far))
    if not keep.any():
        raise EmptyContact(f"{grasp.finger} finger: no model points in sensor volume")
    normals = None
    if model_cloud.normals is not None:
        normals = model_cloud.normals[keep] @ grasp.pose.rotation.T
    return PointCloud(local[keep], normals)


@dataclass
class DepthMap:
    """m x k grid of signed sensor-frame distances (meters), float32.

    Row i spans z bin i (from z_range[0]), column j spans x bin j. Values
    are the minimum y per bin clamped to >= -z_t; empty bins hold
    ``fill_value`` (the far crop plane).
    """

    values: np.ndarray
    x_range: tuple
    z_range: tuple
    fill_value: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D grid")
        self.x_range = (float(self.x_range[0]), float(self.x_range[1]))
        self.z_range = (float(self.z_range[0]), float(self.z_range[1]))
        self.fill_value = float(self.fill_value)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def save(self, base_path) -> None:
        """Write `<base>.f32` (row-major little-endian) plus `<base>.json`."""
        base = str(base_path)
        self.values.astype("<f4").tofile(base + ".f32")
        sidecar = {
            "schema_version": DEPTH_MAP_SCHEMA,
            "m": self.m,
            "k": self.k,
            "x_extent": [self.x_range[0], self.x_range[1]],
            "z_extent": [self.z_range[0], self.z_range[1]],
            "fill_value": self.fill_value,
            "units": "m",
        }
        with open(base + ".json", "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(base_path) -> "DepthMap":
        base = str(base_path)
        with open(base + ".json") as f:
            sidecar = json.load(f)
        values = np.fromfile(base + ".f32", dtype="<f4").reshape(sidecar["m"], sidecar["k"])
        return DepthMap(values=values,
                        x_range=tuple(sidecar["x_extent"]),
                        z_range=tuple(sidecar["z_extent"]),
                        fill_value=sidecar["fill_value"])


def bin_index(coords: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    """floor((c - lo) / cell) clipped into [0, n-1]; the top edge is closed."""
    cell = (hi - lo) / n
    idx = np.floor((coords - lo) / cell).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def bin_depth_map(patch: PointCloud, geom: SensorGeometry, m: int = 100,
                  k: int = 100) -> DepthMap:
    """Bin a sensor-frame patch into an m x k depth map.

    The padded x-z window is split into equal cells; each bin takes the
    minimum y of its points, clamped to >= -z_t. Empty bins take the far
    crop plane y_far, so the whole map stays ordered by proximity.
    """
    if m < 1 or k < 1:
        raise ValueError("m and k must be >= 1")
    x_lo, x_hi = -geom.half_x, geom.half_x
    z_lo, z_hi = -geom.half_z, geom.half_z

    grid = np.full((m, k), geom.y_far, dtype=np.float64)
    if len(patch) > 0:
        pts = patch.points
        rows = bin_index(pts[:, 2], z_lo, z_hi, m)
        cols = bin_index(pts[:, 0], x_lo, x_hi, k)
        np.minimum.at(grid, (rows, cols), pts[:, 1])
        np.maximum(grid, -geom.z_t, out=grid)
    return DepthMap(values=grid.astype(np.float32), x_range=(x_lo, x_hi),
                    z_range=(z_lo, z_hi), fill_value=geom.y_far)
