"""Synthetic stand-in for the physical capture rig.

Generates parametric objects with millimeter-scale surface features
(ridges, bumps, embossing), composes them onto a table plane, and
simulates depth-camera views with z-buffer occlusion and Gaussian depth
noise, so the data-collection loop can run entirely on a desk-scale
simulation.

Object frames: the table is the world z = 0 plane, +z up. Every object
is built with its support at z = 0 so an identity (or yaw-only) pose
rests it on the table. Feature amplitudes are in meters and must stay
within what the tactile elastomer can sense.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidParams
from .geometry import Aabb, PointCloud, RigidTransform, measure_density, transform

OBJECT_KINDS = ("ridged_box", "bumpy_cylinder", "embossed_plate")


@dataclass
class RidgedBoxParams:
    """Box with sinusoidal horizontal ridges on its four side faces.

    Each face carries its own ridge phase and the amplitude ramps up the
    height, so the shape has no exact rotational symmetry and registration
    against it is well-posed.

    size: (lx, ly, lz) in meters, each in [0.01, 0.5].
    amplitude: ridge depth in meters, [0, 0.003].
    period: ridge wavelength along z in meters, [0.002, 0.05].
    spacing: surface sampling pitch in meters, [1e-4, 0.005].
    """

    size: tuple = (0.08, 0.055, 0.065)
    amplitude: float = 0.0012
    period: float = 0.008
    spacing: float = 0.0006


@dataclass
class BumpyCylinderParams:
    """Upright cylinder with a lattice of bumps on the lateral surface."""

    radius: float = 0.03
    height: float = 0.09
    amplitude: float = 0.001
    period: float = 0.009
    spacing: float = 0.0006


@dataclass
class EmbossedPlateParams:
    """Upright plate with a sinusoidal emboss on both broad faces.

    size: (lx, ly, lz) = (width, thickness, height) in meters.
    The emboss offsets the faces along y as a function of (x, z).
    """

    size: tuple = (0.10, 0.012, 0.08)
    amplitude: float = 0.001
    period: float = 0.006
    spacing: float = 0.0006


PARAM_TYPES = {
    "ridged_box": RidgedBoxParams,
    "bumpy_cylinder": BumpyCylinderParams,
    "embossed_plate": EmbossedPlateParams,
}


def _check_range(field_name: str, value: float, lo: float, hi: float) -> None:
    if not (lo <= value <= hi):
        raise InvalidParams(field_name, f"{value} outside [{lo}, {hi}]")


@dataclass
class SyntheticObject:
    kind: str
    params: object
    seed: int
    cloud: PointCloud                      # dense surface cloud, object frame
    residual: Callable = None              # residual(points) ~ 0 on the surface
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def density(self) -> float:
        return measure_density(self.cloud)


def _grid(lo: float, hi: float, step: float, rng: np.random.Generator) -> np.ndarray:
    """Jittered cell-uniform samples over [lo, hi): one draw per step-cell."""
    n = max(1, int(math.floor((hi - lo) / step)))
    d = (hi - lo) / n
    return lo + (np.arange(n) + rng.random(n)) * d


def _unit_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _make_ridged_box(p: RidgedBoxParams, rng: np.random.Generator):
    lx, ly, lz = p.size
    a, period, s = p.amplitude, p.period, p.spacing
    k = 2.0 * np.pi / period
    phases = {(0, +1.0): 0.0, (0, -1.0): np.pi / 2,
              (1, +1.0): np.pi, (1, -1.0): 3 * np.pi / 2}

    def ridge(z, phase):
        ramp = 0.25 + 0.75 * z / lz
        return a * ramp * np.sin(k * z + phase)

    def ridge_dz(z, phase):
        ramp = 0.25 + 0.75 * z / lz
        return a * (0.75 / lz * np.sin(k * z + phase) + ramp * k * np.cos(k * z + phase))

    pts, nrm = [], []

    def side(axis: int, sign: float, half: float, lat_half: float):
        # Face whose outward normal is +/- axis, offset along it by ridge(z).
        phase = phases[(axis, sign)]
        u = _grid(-lat_half, lat_half, s, rng)
        v = _grid(0.0, lz, s, rng)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        q = np.empty((uu.size, 3))
        q[:, axis] = sign * (half + ridge(vv, phase))
        q[:, 1 - axis] = uu
        q[:, 2] = vv
        n = np.zeros((uu.size, 3))
        n[:, axis] = sign
        n[:, 2] = -ridge_dz(vv, phase)
        pts.append(q)
        nrm.append(_unit_rows(n))

    side(0, +1.0, lx / 2, ly / 2)
    side(0, -1.0, lx / 2, ly / 2)
    side(1, +1.0, ly / 2, lx / 2)
    side(1, -1.0, ly / 2, lx / 2)

    for z, nz in ((lz, 1.0), (0.0, -1.0)):
        u = _grid(-lx / 2, lx / 2, s, rng)
        v = _grid(-ly / 2, ly / 2, s, rng)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        q = np.column_stack([uu.ravel(), vv.ravel(), np.full(uu.size, z)])
        n = np.tile([0.0, 0.0, nz], (uu.size, 1))
        pts.append(q)
        nrm.append(n)

    def residual(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        x, y, z = points.T
        big = np.full(x.shape, np.inf)
        eps = 1e-9
        in_z = (z >= -eps) & (z <= lz + eps)
        out = big.copy()
        for (axis, sign), phase in phases.items():
            half = lx / 2 if axis == 0 else ly / 2
            lat = y if axis == 0 else x
            lat_half = ly / 2 if axis == 0 else lx / 2
            coord = x if axis == 0 else y
            r = np.where(in_z & (np.abs(lat) <= lat_half + eps),
                         np.abs(coord - sign * (half + ridge(z, phase))), big)
            out = np.minimum(out, r)
        in_xy = (np.abs(x) <= lx / 2 + a + eps) & (np.abs(y) <= ly / 2 + a + eps)
        rz = np.where(in_xy, np.minimum(np.abs(z), np.abs(z - lz)), big)
        return np.minimum(out, rz)

    return np.vstack(pts), np.vstack(nrm), residual


def _make_bumpy_cylinder(p: BumpyCylinderParams, rng: np.random.Generator):
    r, h, a, period, s = p.radius, p.height, p.amplitude, p.period, p.spacing
    n_theta = max(3, round(2.0 * np.pi * r / period))
    m_z = max(1, round(2.0 * h / period))
    kz = np.pi * m_z / h

    def rho(theta, z):
        return r + a * np.sin(n_theta * theta) * np.sin(kz * z)

    theta = _grid(0.0, 2.0 * np.pi, s / r, rng)
    z = _grid(0.0, h, s, rng)
    tt, zz = np.meshgrid(theta, z, indexing="ij")
    tt, zz = tt.ravel(), zz.ravel()
    rr = rho(tt, zz)
    lateral = np.column_stack([rr * np.cos(tt), rr * np.sin(tt), zz])

    drho_dtheta = a * n_theta * np.cos(n_theta * tt) * np.sin(kz * zz)
    drho_dz = a * kz * np.sin(n_theta * tt) * np.cos(kz * zz)
    rad = np.column_stack([np.cos(tt), np.sin(tt), np.zeros_like(tt)])
    tan = np.column_stack([-np.sin(tt), np.cos(tt), np.zeros_like(tt)])
    grad = rad - (drho_dtheta / rr)[:, None] * tan
    grad[:, 2] = -drho_dz
    lateral_n = _unit_rows(grad)

    pts = [lateral]
    nrm = [lateral_n]
    for zc, nz in ((h, 1.0), (0.0, -1.0)):
        u = _grid(-r, r, s, rng)
        v = _grid(-r, r, s, rng)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        keep = uu ** 2 + vv ** 2 <= r ** 2
        q = np.column_stack([uu[keep], vv[keep], np.full(keep.sum(), zc)])
        pts.append(q)
        nrm.append(np.tile([0.0, 0.0, nz], (q.shape[0], 1)))

    def residual(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        x, y, z = points.T
        big = np.full(x.shape, np.inf)
        eps = 1e-9
        theta = np.arctan2(y, x)
        rc = np.sqrt(x * x + y * y)
        r_lat = np.where((z >= -eps) & (z <= h + eps),
                         np.abs(rc - rho(theta, z)), big)
        r_cap = np.where(rc <= r + eps, np.minimum(np.abs(z), np.abs(z - h)), big)
        return np.minimum(r_lat, r_cap)

    return np.vstack(pts), np.vstack(nrm), residual


def _make_embossed_plate(p: EmbossedPlateParams, rng: np.random.Generator):
    lx, ly, lz = p.size
    a, period, s = p.amplitude, p.period, p.spacing
    k = 2.0 * np.pi / period

    def emboss(x, z):
        return a * np.sin(k * x) * np.sin(k * z)

    pts, nrm = [], []
    for sign in (+1.0, -1.0):
        u = _grid(-lx / 2, lx / 2, s, rng)
        v = _grid(0.0, lz, s, rng)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        y = sign * (ly / 2 + emboss(uu, vv))
        q = np.column_stack([uu, y, vv])
        # Gradient of y - sign*(ly/2 + emboss) = 0.
        gx = -sign * a * k * np.cos(k * uu) * np.sin(k * vv)
        gz = -sign * a * k * np.sin(k * uu) * np.cos(k * vv)
        n = np.column_stack([gx * sign, np.full(uu.size, 1.0) * sign, gz * sign])
        pts.append(q)
        nrm.append(_unit_rows(n))

    for axis, sign, half, spans in (
            (0, +1.0, lx / 2, ((-ly / 2, ly / 2), (0.0, lz))),
            (0, -1.0, lx / 2, ((-ly / 2, ly / 2), (0.0, lz))),
            (2, +1.0, lz, ((-lx / 2, lx / 2), (-ly / 2, ly / 2))),
            (2, -1.0, 0.0, ((-lx / 2, lx / 2), (-ly / 2, ly / 2)))):
        u = _grid(*spans[0], s, rng)
        v = _grid(*spans[1], s, rng)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        q = np.empty((uu.size, 3))
        if axis == 0:
            q[:, 0] = sign * half
            q[:, 1] = uu
            q[:, 2] = vv
            n = np.tile([sign, 0.0, 0.0], (uu.size, 1))
        else:
            q[:, 0] = uu
            q[:, 1] = vv
            q[:, 2] = half if sign > 0 else 0.0
            n = np.tile([0.0, 0.0, sign], (uu.size, 1))
        pts.append(q)
        nrm.append(n)

    def residual(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        x, y, z = points.T
        big = np.full(x.shape, np.inf)
        eps = 1e-9
        in_face = (np.abs(x) <= lx / 2 + eps) & (z >= -eps) & (z <= lz + eps)
        r_face = np.where(in_face, np.abs(np.abs(y) - (ly / 2 + emboss(x, z))), big)
        r_side = np.where((np.abs(y) <= ly / 2 + a + eps) & (z >= -eps) & (z <= lz + eps),
                          np.abs(np.abs(x) - lx / 2), big)
        r_cap = np.where((np.abs(x) <= lx / 2 + eps) & (np.abs(y) <= ly / 2 + a + eps),
                         np.minimum(np.abs(z), np.abs(z - lz)), big)
        return np.minimum(np.minimum(r_face, r_side), r_cap)

    return np.vstack(pts), np.vstack(nrm), residual


def make_object(kind: str, params=None, seed: int = 0) -> SyntheticObject:
    """Build a dense surface cloud (with exact analytic normals) for ``kind``.

    Deterministic for a given seed. The returned object keeps a residual
    evaluator: ``residual(points)`` is ~distance to the analytic surface
    near it and exactly zero on it, for oracle checks.
    """
    if kind not in PARAM_TYPES:
        raise InvalidParams("kind", f"unknown kind {kind!r}, expected one of {OBJECT_KINDS}")
    params = params if params is not None else PARAM_TYPES[kind]()
    if not isinstance(params, PARAM_TYPES[kind]):
        raise InvalidParams("params", f"expected {PARAM_TYPES[kind].__name__}")

    _check_range("amplitude", params.amplitude, 0.0, 0.003)
    _check_range("period", params.period, 0.002, 0.05)
    _check_range("spacing", params.spacing, 1e-4, 0.005)
    if kind == "bumpy_cylinder":
        _check_range("radius", params.radius, 0.01, 0.25)
        _check_range("height", params.height, 0.02, 0.5)
    else:
        for i, name in enumerate(("size[0]", "size[1]", "size[2]")):
            _check_range(name, params.size[i], 0.01, 0.5)

    rng = np.random.default_rng(seed)
    maker = {"ridged_box": _make_ridged_box,
             "bumpy_cylinder": _make_bumpy_cylinder,
             "embossed_plate": _make_embossed_plate}[kind]
    pts, nrm, residual = maker(params, rng)
    cloud = PointCloud(pts, nrm)
    return SyntheticObject(kind=kind, params=params, seed=seed, cloud=cloud,
                           residual=residual)


@dataclass
class DepthCamera:
    """Pinhole depth sensor; ``pose`` maps camera frame to world.

    Camera frame: +z forward (viewing direction), +x image right,
    +y image down. ``noise_sigma`` is the 1-sigma Gaussian depth error in
    meters applied along each viewing ray.
    """

    pose: RigidTransform
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 256.0
    cy: float = 212.0
    width: int = 512
    height: int = 424
    noise_sigma: float = 0.0015

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be > 0")

    @staticmethod
    def look_at(position, target, up=(0.0, 0.0, 1.0), **kwargs) -> "DepthCamera":
        position = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - position
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        x = np.cross(fwd, up)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        x = x / np.linalg.norm(x)
        y = np.cross(fwd, x)
        rot = np.column_stack([x, y, fwd])
        return DepthCamera(pose=RigidTransform(rot, position), **kwargs)


@dataclass
class Scene:
    """A posed object on the table plane plus the ground-truth pose."""

    obj: SyntheticObject
    object_pose: RigidTransform
    object_cloud_world: PointCloud
    table_cloud: PointCloud
    table_extent: float

    def all_points(self) -> tuple[np.ndarray, np.ndarray]:
        """(merged Nx3 world points, labels) with label 1 = object, 0 = table."""
        pts = np.vstack([self.table_cloud.points, self.object_cloud_world.points])
        labels = np.concatenate([np.zeros(len(self.table_cloud), dtype=np.int64),
                                 np.ones(len(self.object_cloud_world), dtype=np.int64)])
        return pts, labels


def compose_scene(obj: SyntheticObject, table_extent: float = 0.5,
                  pose: RigidTransform | None = None,
                  table_spacing: float = 0.0015, seed: int = 0) -> Scene:
    """Bundle a table-plane cloud with the posed object cloud.

    ``pose`` must keep the object above z = 0 (it is rigidly attached to
    the table during collection, so yaw-plus-translation poses are the
    expected case).
    """
    pose = pose if pose is not None else RigidTransform.identity()
    world_cloud = transform(obj.cloud, pose)
    if world_cloud.points[:, 2].min() < -1e-9:
        raise ValueError("object must rest above the table plane (z >= 0)")

    rng = np.random.default_rng(seed)
    half = table_extent / 2
    u = _grid(-half, half, table_spacing, rng)
    v = _grid(-half, half, table_spacing, rng)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    table_pts = np.column_stack([uu.ravel(), vv.ravel(), np.zeros(uu.size)])
    table = PointCloud(table_pts, np.tile([0.0, 0.0, 1.0], (uu.size, 1)))

    obj.pose = pose
    return Scene(obj=obj, object_pose=pose, object_cloud_world=world_cloud,
                 table_cloud=table, table_extent=table_extent)


def default_cameras(count: int = 2, distance: float = 0.7, elevation_deg: float = 35.0,
                    azimuths_deg=(45.0, -45.0), target=(0.0, 0.0, 0.04),
                    noise_sigma: float = 0.0015) -> list[DepthCamera]:
    """Ring of depth cameras looking at the workspace center."""
    cams = []
    el = math.radians(elevation_deg)
    for az_deg in list(azimuths_deg)[:count]:
        az = math.radians(az_deg)
        pos = np.array([distance * math.cos(el) * math.cos(az),
                        distance * math.cos(el) * math.sin(az),
                        target[2] + distance * math.sin(el)])
        cams.append(DepthCamera.look_at(pos, target, noise_sigma=noise_sigma))
    return cams


def render_depth_view(scene: Scene, camera: DepthCamera, seed: int = 0,
                      return_labels: bool = False):
    """Z-buffer depth view of the scene, back-projected to world frame.

    Projects every scene point through the pinhole model, keeps the
    nearest point per pixel, then perturbs the surviving points along
    their own viewing rays by Gaussian noise of ``camera.noise_sigma``.
    A fully occluded (or empty) view yields an empty cloud.
    """
    pts, labels = scene.all_points()
    cam_from_world = camera.pose.inverse()
    pc = cam_from_world.apply(pts)

    z = pc[:, 2]
    front = z > 0.01
    pc, labels = pc[front], labels[front]
    z = pc[:, 2]
    if pc.shape[0] == 0:
        empty = PointCloud(np.empty((0, 3)))
        return (empty, np.empty(0, dtype=np.int64)) if return_labels else empty

    u = camera.fx * pc[:, 0] / z + camera.cx
    v = camera.fy * pc[:, 1] / z + camera.cy
    j = np.floor(u).astype(np.int64)
    i = np.floor(v).astype(np.int64)
    inside = (j >= 0) & (j < camera.width) & (i >= 0) & (i < camera.height)
    pc, labels, z, i, j = pc[inside], labels[inside], z[inside], i[inside], j[inside]
    if pc.shape[0] == 0:
        empty = PointCloud(np.empty((0, 3)))
        return (empty, np.empty(0, dtype=np.int64)) if return_labels else empty

    pix = i * camera.width + j
    order = np.lexsort((z, pix))
    pix_sorted = pix[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = order[first]

    kept = pc[winners]
    kept_z = z[winners]
    if camera.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        eps = rng.normal(0.0, camera.noise_sigma, winners.size)
        kept = kept * ((kept_z + eps) / kept_z)[:, None]

    world = camera.pose.apply(kept)
    cloud = PointCloud(world)
    if return_labels:
        return cloud, labels[winners]
    return cloud


def object_sidecar(obj: SyntheticObject) -> dict:
    """JSON-serializable description persisted next to an object's PLY."""
    params = {k: (list(v) if isinstance(v, tuple) else v)
              for k, v in vars(obj.params).items()}
    return {
        "kind": obj.kind,
        "params": params,
        "seed": obj.seed,
        "pose": obj.pose.to_json_dict(),
    }
