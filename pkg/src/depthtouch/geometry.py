"""Point-cloud container and segmentation-stage primitives.

Coordinates are meters throughout. A cloud is an (N, 3) float64 array of
points plus optional per-point unit normals. All operations are pure
functions: they never mutate their inputs and are safe to call
concurrently on shared clouds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PointCloud:
    """(N, 3) points in meters with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape[0] != self.points.shape[0]:
                raise ValueError("normals must match point count")
            lengths = np.linalg.norm(self.normals, axis=1)
            if not np.all(np.abs(lengths - 1.0) <= 1e-6):
                raise ValueError("normals must have unit length within 1e-6")

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def select(self, mask_or_indices) -> "PointCloud":
        """New cloud holding the selected points (normals carried along)."""
        pts = self.points[mask_or_indices]
        nrm = None if self.normals is None else self.normals[mask_or_indices]
        return PointCloud(pts, nrm)


@dataclass
class RigidTransform:
    """Rotation + translation; maps points as R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def validate(self, tol: float = 1e-9) -> None:
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        det = np.linalg.det(self.rotation)
        if err > tol or abs(det - 1.0) > tol:
            raise ValueError(f"rotation not orthonormal (orth err {err:.2e}, det {det:.12f})")

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def to_json_dict(self) -> dict:
        return {
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.array(d["rotation"]), np.array(d["translation"]))


def rotation_angle_deg(r: np.ndarray) -> float:
    """Magnitude of a rotation matrix in degrees."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_error(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(translation error in m, rotation error in degrees) between two poses."""
    t_err = float(np.linalg.norm(a.translation - b.translation))
    r_err = rotation_angle_deg(a.rotation @ b.rotation.T)
    return t_err, r_err


@dataclass
class Aabb:
    """Axis-aligned box, closed on all faces."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        self.min_corner = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        self.max_corner = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if np.any(self.min_corner > self.max_corner):
            raise ValueError("min corner must be <= max corner componentwise")

    @staticmethod
    def of_cloud(cloud: PointCloud) -> "Aabb":
        return Aabb(cloud.points.min(axis=0), cloud.points.max(axis=0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        return np.all((points >= self.min_corner) & (points <= self.max_corner), axis=1)


def crop_aabb(cloud: PointCloud, box: Aabb) -> PointCloud:
    """Keep exactly the points inside ``box`` (closed bounds), order preserved."""
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)))
    return cloud.select(box.contains(cloud.points))


def transform(cloud: PointCloud, pose: RigidTransform) -> PointCloud:
    """Map every point to R @ p + t; normals are rotated only."""
    pts = cloud.points @ pose.rotation.T + pose.translation
    nrm = None if cloud.normals is None else cloud.normals @ pose.rotation.T
    return PointCloud(pts, nrm)


def _fit_plane_ransac(points: np.ndarray, dist_thresh: float, iterations: int,
                      rng: np.random.Generator) -> np.ndarray | None:
    """Largest-consensus plane; returns the inlier mask or None if degenerate.

    Samples 3 points per iteration, keeps the plane with the most points
    within ``dist_thresh`` of it.
    """
    n = points.shape[0]
    if n < 3:
        return None
    best_mask = None
    best_count = 0
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = points[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        dist = np.abs((points - p0) @ normal)
        mask = dist <= dist_thresh
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    return best_mask


def remove_planes(cloud: PointCloud, dist_thresh: float, min_inlier_frac: float,
                  seed: int = 0, iterations: int = 200) -> PointCloud:
    """Strip dominant planar surfaces by repeated random sample consensus.

    Fits the largest plane over the remaining points (``iterations``
    RANSAC draws per plane, 3-point hypotheses, inliers within
    ``dist_thresh``) and removes its inliers while that plane holds at
    least ``min_inlier_frac`` of the *input* cloud. Measuring against the
    input keeps dominant structures (a table) removable without eating
    every flat face of the remaining object. Deterministic for a given
    ``seed``.
    """
    if dist_thresh <= 0:
        raise ValueError("dist_thresh must be > 0")
    if not 0 < min_inlier_frac < 1:
        raise ValueError("min_inlier_frac must be in (0, 1)")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)))

    rng = np.random.default_rng(seed)
    total = len(cloud)
    kept = cloud
    while len(kept) >= 3:
        mask = _fit_plane_ransac(kept.points, dist_thresh, iterations, rng)
        if mask is None:
            break
        frac = mask.sum() / total
        if frac < min_inlier_frac:
            break
        kept = kept.select(~mask)
    return kept


class _HashGrid:
    """Uniform grid over points with cell edge ``cell``; buckets hold point indices."""

    def __init__(self, points: np.ndarray, cell: float):
        self.points = points
        self.cell = cell
        origin = points.min(axis=0) if len(points) else np.zeros(3)
        self.ids = np.floor((points - origin) / cell).astype(np.int64)
        self.buckets: dict[tuple, np.ndarray] = {}
        order = np.lexsort(self.ids.T)
        sorted_ids = self.ids[order]
        if len(points):
            change = np.any(np.diff(sorted_ids, axis=0) != 0, axis=1)
            starts = np.concatenate(([0], np.nonzero(change)[0] + 1, [len(points)]))
            for a, b in zip(starts[:-1], starts[1:]):
                key = tuple(sorted_ids[a])
                self.buckets[key] = order[a:b]

    def neighborhood(self, cell_id: np.ndarray) -> np.ndarray:
        """Indices of all points in the 27 cells around ``cell_id``."""
        chunks = []
        cx, cy, cz = cell_id
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    bucket = self.buckets.get((cx + dx, cy + dy, cz + dz))
                    if bucket is not None:
                        chunks.append(bucket)
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)


def euclidean_cluster(cloud: PointCloud, tol: float, min_size: int = 1,
                      max_size: int = 10**9) -> list[PointCloud]:
    """Connected components of the <= tol adjacency graph, largest first.

    Components with fewer than ``min_size`` or more than ``max_size``
    points are dropped. Neighbor queries run over a uniform hash grid of
    cell size ``tol`` so only the 27 surrounding cells are scanned.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if min_size > max_size:
        raise ValueError("min_size must be <= max_size")
    n = len(cloud)
    if n == 0:
        return []

    pts = cloud.points
    grid = _HashGrid(pts, tol)
    tol2 = tol * tol
    labels = np.full(n, -1, dtype=np.int64)
    components: list[np.ndarray] = []

    for start in range(n):
        if labels[start] >= 0:
            continue
        comp_id = len(components)
        labels[start] = comp_id
        frontier = [start]
        members = [start]
        while frontier:
            batch = np.asarray(frontier, dtype=np.int64)
            frontier = []
            # Candidates from the 27-cell neighborhoods of the whole batch.
            cand = np.unique(np.concatenate([grid.neighborhood(grid.ids[i]) for i in batch]))
            cand = cand[labels[cand] < 0]
            if cand.size == 0:
                continue
            # Distance test in chunks to bound the pairwise matrix.
            bp = pts[batch]
            for lo in range(0, cand.size, 4096):
                sub = cand[lo:lo + 4096]
                d2 = ((pts[sub][:, None, :] - bp[None, :, :]) ** 2).sum(axis=2)
                hit = sub[(d2 <= tol2).any(axis=1)]
                hit = hit[labels[hit] < 0]
                labels[hit] = comp_id
                members.extend(hit.tolist())
                frontier.extend(hit.tolist())
        components.append(np.asarray(sorted(members), dtype=np.int64))

    admissible = [c for c in components if min_size <= c.size <= max_size]
    admissible.sort(key=lambda c: (-c.size, c[0] if c.size else 0))
    return [cloud.select(c) for c in admissible]


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """One point per occupied voxel of edge ``leaf``: the voxel centroid.

    Voxel ids are floor((p - cloud_min) / leaf) per axis, so the cloud
    minimum always maps to voxel (0, 0, 0). Output is ordered by voxel id
    and carries no normals.
    """
    if leaf <= 0:
        raise ValueError("leaf must be > 0")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)))
    pts = cloud.points
    ids = np.floor((pts - pts.min(axis=0)) / leaf).astype(np.int64)
    _, inverse, counts = np.unique(ids, axis=0, return_inverse=True, return_counts=True)
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inverse, pts)
    return PointCloud(sums / counts[:, None])


def measure_density(cloud: PointCloud, cell: float = 0.01) -> float:
    """Points per cm^3 over the occupied cells of a counting grid.

    Counts occupied cells of edge ``cell`` (default 1 cm) and divides the
    point count by their total volume in cm^3. This is the recount used to
    verify downsampling targets.
    """
    if len(cloud) == 0:
        return 0.0
    pts = cloud.points
    ids = np.floor((pts - pts.min(axis=0)) / cell).astype(np.int64)
    occupied = np.unique(ids, axis=0).shape[0]
    cell_cm3 = (cell * 100.0) ** 3
    return len(cloud) / (occupied * cell_cm3)


def leaf_for_density(cloud: PointCloud, target_density: float, cell: float = 0.01,
                     rel_tol: float = 0.05, max_iter: int = 48) -> float:
    """Voxel edge that downsamples ``cloud`` to ``target_density`` pts/cm^3.

    Bisects on the leaf size, measuring the achieved density with
    ``measure_density``; the achieved value is monotone non-increasing in
    the leaf. Raises ValueError when the target exceeds the native density.
    """
    if target_density <= 0:
        raise ValueError("target_density must be > 0")
    native = measure_density(cloud, cell)
    if target_density > native:
        raise ValueError(f"target density {target_density} exceeds native {native:.1f}")

    lo, hi = 1e-5, 0.1
    best = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        achieved = measure_density(voxel_downsample(cloud, mid), cell)
        if abs(achieved - target_density) / target_density <= rel_tol:
            return mid
        if achieved > target_density:
            lo = mid
        else:
            hi = mid
        best = mid
    return best
