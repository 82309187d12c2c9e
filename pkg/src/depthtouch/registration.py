"""Model-to-scene rigid alignment.

Coarse stage: sample-consensus alignment over fast point feature
histograms (FPFH). Hypotheses are rigid fits to 3 sampled feature
correspondences, scored by how many model points land within an inlier
radius of the scene. Refinement: point-to-point ICP with a closed-form
(SVD) pose update.

Both stages are deterministic for a given seed, and internally work on
canonically ordered (voxel-downsampled) copies of the inputs so results
do not depend on input point order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloud, NoCorrespondences
from .geometry import PointCloud, RigidTransform, voxel_downsample

log = logging.getLogger(__name__)


@dataclass
class IcpParams:
    max_iterations: int = 50
    transform_epsilon: float = 1e-6
    max_correspondence_dist: float = 0.05

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be > 0")
        if self.transform_epsilon <= 0:
            raise ValueError("transform_epsilon must be > 0")
        if self.max_correspondence_dist <= 0:
            raise ValueError("max_correspondence_dist must be > 0")


@dataclass
class RegistrationResult:
    """Pose maps model frame -> scene frame; fitness is mean squared distance (m^2).

    ``matched_frac`` is the share of source points with a correspondence
    within the cap at the final iteration.
    """

    pose: RigidTransform
    fitness: float
    iterations: int
    converged: bool
    fitness_trace: list = field(default_factory=list)
    matched_frac: float = 1.0


@dataclass
class RegistrationConfig:
    feature_radius: float = 0.015
    coarse_voxel: float | None = None      # None: feature_radius / 2.5
    hypotheses: int = 800
    inlier_radius: float = 0.01
    score_samples: int = 300
    seed: int = 0
    refine_candidates: int = 8             # coarse poses carried into ICP refinement
    early_accept_fitness: float = 5e-8     # stop refining once a candidate fits this well
    icp: IcpParams = field(default_factory=IcpParams)
    icp_points: int = 4000                 # random scene subsample fed to ICP
    max_fitness: float = 1e-4              # acceptance threshold on fitness (m^2)


def _check_nondegenerate(points: np.ndarray, what: str) -> None:
    if points.shape[0] < 3:
        raise DegenerateCloud(f"{what}: fewer than 3 points")
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] < 1e-12:
        raise DegenerateCloud(f"{what}: points are collinear")


def _fit_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form least-squares rigid fit src -> dst (Kabsch/Umeyama, no scale)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_d - r @ mu_s
    return RigidTransform(r, t)


def estimate_normals(cloud: PointCloud, radius: float, min_neighbors: int = 5) -> np.ndarray:
    """Per-point normals from PCA over the neighbors within ``radius``.

    Normals are oriented away from the cloud centroid (adequate for the
    convex-ish object models this pipeline registers).
    """
    pts = cloud.points
    tree = cKDTree(pts)
    neighbors = tree.query_ball_point(pts, radius)
    # Fallback to k nearest when the radius ball is too sparse.
    _, knn = tree.query(pts, k=min(min_neighbors + 1, len(pts)))
    normals = np.zeros_like(pts)
    centroid = pts.mean(axis=0)
    for i, idx in enumerate(neighbors):
        if len(idx) < min_neighbors:
            idx = np.atleast_1d(knn[i]).tolist()
        local = pts[idx] - pts[idx].mean(axis=0)
        _, _, vt = np.linalg.svd(local, full_matrices=False)
        n = vt[-1]
        if n @ (pts[i] - centroid) < 0:
            n = -n
        normals[i] = n
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    return normals / lengths


def _spfh(pts: np.ndarray, normals: np.ndarray, pairs_i: np.ndarray,
          pairs_j: np.ndarray, bins: int = 11) -> np.ndarray:
    """Simplified point feature histograms, accumulated over directed pairs.

    For each directed pair (source i, target j) the three standard angular
    features are binned independently (bins x 3 concatenated per point).
    """
    n = pts.shape[0]
    hist = np.zeros((n, 3 * bins))
    if pairs_i.size == 0:
        return hist
    d = pts[pairs_j] - pts[pairs_i]
    dist = np.linalg.norm(d, axis=1)
    ok = dist > 1e-12
    pairs_i, pairs_j, d, dist = pairs_i[ok], pairs_j[ok], d[ok], dist[ok]
    du = d / dist[:, None]

    u = normals[pairs_i]
    v = np.cross(du, u)
    vn = np.linalg.norm(v, axis=1, keepdims=True)
    vn[vn == 0] = 1.0
    v = v / vn
    w = np.cross(u, v)
    nt = normals[pairs_j]

    alpha = np.einsum("ij,ij->i", v, nt)                     # [-1, 1]
    phi = np.einsum("ij,ij->i", u, du)                       # [-1, 1]
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt),
                       np.einsum("ij,ij->i", u, nt))         # [-pi, pi]

    def binned(x, lo, hi):
        b = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
        return np.clip(b, 0, bins - 1)

    np.add.at(hist, (pairs_i, binned(alpha, -1.0, 1.0)), 1.0)
    np.add.at(hist, (pairs_i, bins + binned(phi, -1.0, 1.0)), 1.0)
    np.add.at(hist, (pairs_i, 2 * bins + binned(theta, -np.pi, np.pi)), 1.0)
    return hist


def compute_fpfh(cloud: PointCloud, radius: float, bins: int = 11) -> np.ndarray:
    """FPFH descriptors: own SPFH plus the distance-weighted neighbor SPFHs."""
    pts = cloud.points
    normals = cloud.normals if cloud.normals is not None else estimate_normals(cloud, radius)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return np.zeros((len(cloud), 3 * bins))
    pi = np.concatenate([pairs[:, 0], pairs[:, 1]])
    pj = np.concatenate([pairs[:, 1], pairs[:, 0]])
    spfh = _spfh(pts, normals, pi, pj, bins)

    dist = np.linalg.norm(pts[pi] - pts[pj], axis=1)
    weights = 1.0 / np.maximum(dist, 1e-9)
    counts = np.bincount(pi, minlength=len(cloud)).astype(np.float64)
    fpfh = spfh.copy()
    weighted = spfh[pj] * weights[:, None]
    acc = np.zeros_like(spfh)
    np.add.at(acc, pi, weighted)
    nonzero = counts > 0
    fpfh[nonzero] += acc[nonzero] / counts[nonzero, None]

    norms = np.linalg.norm(fpfh, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return fpfh / norms


def _canonical(cloud: PointCloud, voxel: float) -> PointCloud:
    """Voxel-downsampled copy in voxel-id order: independent of input order."""
    return voxel_downsample(cloud, voxel)


def coarse_candidates(model: PointCloud, scene: PointCloud, feature_radius: float,
                      seed: int = 0, hypotheses: int = 400, inlier_radius: float = 0.01,
                      score_samples: int = 300, voxel: float | None = None,
                      keep: int = 5) -> list:
    """Top ``keep`` coarse poses, best score first.

    Each hypothesis picks 3 well-separated model points, matches them to
    the scene by nearest FPFH descriptor, and fits a rigid transform to
    the 3 correspondences. Hypotheses are scored by how many (sampled)
    scene points the transformed model explains within ``inlier_radius``;
    scoring in the scene->model direction keeps partial views honest,
    since every observed point must lie on the complete model.

    Raises DegenerateCloud when either input has < 3 non-collinear points.
    """
    if len(model) == 0 or len(scene) == 0:
        raise DegenerateCloud("empty input cloud")
    _check_nondegenerate(model.points, "model")
    _check_nondegenerate(scene.points, "scene")
    if feature_radius <= 0:
        raise ValueError("feature_radius must be > 0")

    voxel = voxel if voxel is not None else feature_radius / 2.5
    m = _canonical(model, voxel)
    s = _canonical(scene, voxel)
    if len(m) < 3 or len(s) < 3:
        m, s = model, scene

    fm = compute_fpfh(m, feature_radius)
    fs = compute_fpfh(s, feature_radius)
    feat_tree = cKDTree(fm)
    model_tree = cKDTree(m.points)

    rng = np.random.default_rng(seed)
    n_score = min(score_samples, len(s))
    score_idx = rng.choice(len(s), size=n_score, replace=False)
    score_pts = s.points[score_idx]

    # Top-L feature matches per scene point; hypotheses pick one at random
    # to escape ambiguous matches on repetitive geometry.
    top_l = min(5, len(m))
    _, match_pool = feat_tree.query(fs, k=top_l)
    match_pool = np.atleast_2d(match_pool)

    min_sep = 2.0 * voxel
    consistency = 1.5 * voxel
    scored: list[tuple[int, int, RigidTransform]] = []
    for h in range(hypotheses):
        idx = rng.choice(len(s), size=3, replace=False)
        q = s.points[idx]
        if (np.linalg.norm(q[0] - q[1]) < min_sep or np.linalg.norm(q[0] - q[2]) < min_sep
                or np.linalg.norm(q[1] - q[2]) < min_sep):
            continue
        picks = match_pool[idx, rng.integers(0, top_l, 3)]
        p = m.points[picks]
        # Rigidity pre-check: pairwise distances must survive the match.
        ok = True
        for a, b in ((0, 1), (0, 2), (1, 2)):
            if abs(np.linalg.norm(q[a] - q[b]) - np.linalg.norm(p[a] - p[b])) > consistency:
                ok = False
                break
        if not ok:
            continue
        pose = _fit_rigid(p, q)
        d, _ = model_tree.query(pose.inverse().apply(score_pts),
                                distance_upper_bound=inlier_radius)
        score = int(np.isfinite(d).sum())
        scored.append((score, h, pose))
    if not scored:
        return [RigidTransform.identity()]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [pose for _, _, pose in scored[:keep]]


def coarse_align(model: PointCloud, scene: PointCloud, feature_radius: float,
                 seed: int = 0, hypotheses: int = 400, inlier_radius: float = 0.01,
                 score_samples: int = 300, voxel: float | None = None) -> RigidTransform:
    """Best-scoring rigid pose among sampled feature-correspondence hypotheses."""
    return coarse_candidates(model, scene, feature_radius, seed=seed,
                             hypotheses=hypotheses, inlier_radius=inlier_radius,
                             score_samples=score_samples, voxel=voxel, keep=1)[0]


def icp_refine(model: PointCloud, scene: PointCloud, init: RigidTransform,
               params: IcpParams | None = None) -> RegistrationResult:
    """Point-to-point ICP from ``init``.

    Alternates nearest-neighbor correspondences (capped at
    ``max_correspondence_dist``) with a closed-form least-squares pose fit
    of the original model points onto their scene matches. Stops when the
    pose update falls below ``transform_epsilon`` (rotation angle in
    radians plus translation in meters) or at ``max_iterations``. Fitness
    is the final mean squared correspondence distance; the per-iteration
    trace is kept on the result.

    Raises NoCorrespondences when no pair is within the cap at ``init``.
    """
    params = params or IcpParams()
    src = model.points
    tree = cKDTree(scene.points)

    pose = init
    trace: list[float] = []
    converged = False
    iterations = 0
    matched_frac = 0.0
    for it in range(params.max_iterations):
        moved = pose.apply(src)
        dist, idx = tree.query(moved, distance_upper_bound=params.max_correspondence_dist)
        valid = np.isfinite(dist)
        if not valid.any():
            if it == 0:
                raise NoCorrespondences(
                    f"no correspondences within {params.max_correspondence_dist} m at init")
            break
        matched = scene.points[idx[valid]]
        matched_frac = valid.mean()
        new_pose = _fit_rigid(src[valid], matched)

        residual = new_pose.apply(src[valid]) - matched
        trace.append(float((residual ** 2).sum(axis=1).mean()))

        delta_r = new_pose.rotation @ pose.rotation.T
        angle = np.arccos(np.clip((np.trace(delta_r) - 1.0) / 2.0, -1.0, 1.0))
        shift = np.linalg.norm(new_pose.translation - pose.translation)
        pose = new_pose
        iterations = it + 1
        if angle + shift < params.transform_epsilon:
            converged = True
            break

    fitness = trace[-1] if trace else float("inf")
    return RegistrationResult(pose=pose, fitness=fitness, iterations=iterations,
                              converged=converged, fitness_trace=trace,
                              matched_frac=float(matched_frac))


def _canonical_subsample(cloud: PointCloud, n_max: int, seed) -> PointCloud:
    """Random subsample drawn after a lexicographic sort.

    Sorting first makes the draw independent of input point order; a
    random (rather than voxel-grid) subsample avoids lattice-locked ICP
    fixed points.
    """
    order = np.lexsort(cloud.points.T)
    pts = cloud.points[order]
    if pts.shape[0] <= n_max:
        return PointCloud(pts)
    idx = np.random.default_rng(seed).choice(pts.shape[0], size=n_max, replace=False)
    return PointCloud(pts[np.sort(idx)])


def register(model: PointCloud, scene: PointCloud,
             config: RegistrationConfig | None = None) -> RegistrationResult:
    """Coarse feature alignment followed by ICP; pose maps model into the scene.

    The top coarse candidates are each refined and the lowest-fitness
    result wins, which disambiguates near-symmetric poses that only
    differ at the surface-feature scale. Refinement runs scene->model
    (every observed point has a true counterpart on the complete model)
    and the pose is inverted back.
    """
    config = config or RegistrationConfig()
    if len(model) == 0 or len(scene) == 0:
        raise DegenerateCloud("empty input cloud")
    candidates = [RigidTransform.identity()]
    candidates += coarse_candidates(model, scene, config.feature_radius, seed=config.seed,
                                    hypotheses=config.hypotheses,
                                    inlier_radius=config.inlier_radius,
                                    score_samples=config.score_samples,
                                    voxel=config.coarse_voxel,
                                    keep=config.refine_candidates)
    icp_model = model
    icp_scene = _canonical_subsample(scene, config.icp_points, config.seed)

    # A pose that explains only a subset of the scene can reach a tiny
    # fitness over its few matches, so candidates compete on coverage
    # first and mean squared distance second.
    refined_all: list[RegistrationResult] = []
    for init in candidates:
        try:
            refined = icp_refine(icp_scene, icp_model, init.inverse(), config.icp)
        except NoCorrespondences:
            continue
        refined_all.append(refined)
        if refined.matched_frac >= 0.999 and refined.fitness <= config.early_accept_fitness:
            break
    if not refined_all:
        raise NoCorrespondences("no coarse candidate produced correspondences")

    max_frac = max(r.matched_frac for r in refined_all)
    covered = [r for r in refined_all if r.matched_frac >= max_frac - 0.02]
    best = min(covered, key=lambda r: r.fitness)

    result = RegistrationResult(pose=best.pose.inverse(), fitness=best.fitness,
                                iterations=best.iterations, converged=best.converged,
                                fitness_trace=best.fitness_trace,
                                matched_frac=best.matched_frac)
    if result.fitness > config.max_fitness:
        log.warning("registration fitness %.3e above acceptance threshold %.3e",
                    result.fitness, config.max_fitness)
    return result
