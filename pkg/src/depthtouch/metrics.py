"""Evaluation suite: SSIM, random-image baseline, template matching,
aggregate reports, and the point-cloud-density study.

SSIM follows the standard windowed luminance/contrast/structure form
with an 11x11 Gaussian window (sigma 1.5) and stability constants
K1 = 0.01, K2 = 0.03 over a dynamic range of 255. RGB inputs are
converted to BT.601 luma before scoring. Raw scores are reported
unclamped (the metric's true range is [-1, 1]).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate2d, fftconvolve

from .contact import SensorGeometry, bin_depth_map, extract_contact_volume, sample_grasp
from .errors import (DimensionMismatch, EmptyContact, MissingEstimate, PoolTooSmall,
                     TemplateTooLarge, ZeroVariance)
from .geometry import PointCloud, leaf_for_density, measure_density, voxel_downsample
from .tactile import ElastomerModel, load_image, render

BT601 = np.array([0.299, 0.587, 0.114])


@dataclass
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("stability constants must be > 0")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window size must be odd and >= 1")

    def window(self) -> np.ndarray:
        half = self.window_size // 2
        ax = np.arange(-half, half + 1, dtype=np.float64)
        g = np.exp(-0.5 * (ax / self.sigma) ** 2)
        w = np.outer(g, g)
        return w / w.sum()


def to_luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma for RGB input; grayscale passes through as float64."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image @ BT601
    return image


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    """Mean of the per-window SSIM map between two images.

    Windows are Gaussian-weighted and fully contained in the images
    (valid placements only). Symmetric in its arguments.
    """
    params = params or SsimParams()
    a = to_luma(a)
    b = to_luma(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < params.window_size:
        raise DimensionMismatch(
            f"images must be at least {params.window_size} pixels per side")

    w = params.window()
    mu_a = fftconvolve(a, w, mode="valid")
    mu_b = fftconvolve(b, w, mode="valid")
    e_aa = fftconvolve(a * a, w, mode="valid")
    e_bb = fftconvolve(b * b, w, mode="valid")
    e_ab = fftconvolve(a * b, w, mode="valid")
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b

    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
           ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(smap.mean())


def baseline_ssim(estimate: np.ndarray, pool: list, n: int = 15, seed=0,
                  exclude_index: int | None = None,
                  params: SsimParams | None = None) -> float:
    """Mean SSIM of ``estimate`` against ``n`` distinct pool images.

    Sampling is without replacement and excludes ``exclude_index`` (the
    estimate's own ground truth) when given. Deterministic per seed.
    """
    candidates = [i for i in range(len(pool)) if i != exclude_index]
    if len(candidates) < n:
        raise PoolTooSmall(f"pool has {len(candidates)} usable images, need {n}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=n, replace=False)
    scores = [ssim(estimate, pool[candidates[i]], params) for i in chosen]
    return float(np.mean(scores))


def ncc_map(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-mean normalized cross-correlation map over valid placements.

    Windows with (numerically) zero variance score 0. Raises
    TemplateTooLarge / ZeroVariance per the obvious preconditions.
    """
    image = to_luma(image)
    template = to_luma(template)
    if template.shape[0] > image.shape[0] or template.shape[1] > image.shape[1]:
        raise TemplateTooLarge(
            f"template {template.shape} larger than image {image.shape}")

    t0 = template - template.mean()
    st2 = float((t0 ** 2).sum())
    if st2 <= 1e-12:
        raise ZeroVariance("template has zero variance")

    ones = np.ones_like(template)
    num = correlate2d(image, t0, mode="valid")
    win_sum = correlate2d(image, ones, mode="valid")
    win_sq = correlate2d(image * image, ones, mode="valid")
    n_pix = template.size
    win_var = np.maximum(win_sq - win_sum ** 2 / n_pix, 0.0)

    denom = np.sqrt(win_var * st2)
    out = np.zeros_like(num)
    good = denom > 1e-12 * n_pix
    out[good] = num[good] / denom[good]
    return out


def match_template(image: np.ndarray, template: np.ndarray) -> tuple:
    """Best placement of ``template`` inside ``image``.

    Returns ((row, col) of the top-left corner, correlation score).
    """
    corr = ncc_map(image, template)
    flat = int(np.argmax(corr))
    loc = np.unravel_index(flat, corr.shape)
    return (int(loc[0]), int(loc[1])), float(corr[loc])


@dataclass
class EvalReport:
    record_ids: list
    scores: list
    baseline_scores: list
    mean: float
    stderr: float
    baseline_mean: float
    baseline_stderr: float
    n: int

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_ssim": self.mean,
            "stderr": self.stderr,
            "baseline_mean_ssim": self.baseline_mean,
            "baseline_stderr": self.baseline_stderr,
            "per_record": [
                {"id": rid, "ssim": s, "baseline_ssim": b}
                for rid, s, b in zip(self.record_ids, self.scores, self.baseline_scores)
            ],
        }


def _mean_stderr(values: list) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, stderr


def evaluate(manifest, estimates_dir, seed: int = 0, baseline_n: int = 15,
             pool_split: str = "test", params: SsimParams | None = None) -> EvalReport:
    """Score every test-split estimate against its ground truth.

    Estimates are read from ``<estimates_dir>/<record id>.png``. Each
    record also gets a random-image baseline: the mean SSIM against
    ``baseline_n`` ground-truth images sampled (without replacement,
    excluding its own) from the ``pool_split`` records.
    """
    test_records = sorted(manifest.by_split("test"), key=lambda r: r.id)
    if not test_records:
        raise ValueError("manifest has no test records")

    missing = [r.id for r in test_records
               if not os.path.exists(os.path.join(estimates_dir, r.id + ".png"))]
    if missing:
        raise MissingEstimate(missing)

    pool_records = sorted(manifest.by_split(pool_split), key=lambda r: r.id)
    pool_images = [load_image(manifest.resolve(r.tactile_path)) for r in pool_records]
    pool_index = {r.id: i for i, r in enumerate(pool_records)}

    ids, scores, baselines = [], [], []
    for i, rec in enumerate(test_records):
        est = load_image(os.path.join(estimates_dir, rec.id + ".png"))
        gt = load_image(manifest.resolve(rec.tactile_path))
        scores.append(ssim(est, gt, params))
        baselines.append(baseline_ssim(est, pool_images, n=baseline_n, seed=(seed, i),
                                       exclude_index=pool_index.get(rec.id), params=params))
        ids.append(rec.id)

    mean, stderr = _mean_stderr(scores)
    b_mean, b_stderr = _mean_stderr(baselines)
    return EvalReport(record_ids=ids, scores=scores, baseline_scores=baselines,
                      mean=mean, stderr=stderr, baseline_mean=b_mean,
                      baseline_stderr=b_stderr, n=len(ids))


def save_report(report: EvalReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def plot_report(report: EvalReport, path) -> None:
    """Two-bar summary (baseline vs estimates) with stderr error bars."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(3.2, 4.0))
    ax.bar([0, 1], [report.baseline_mean, report.mean],
           yerr=[report.baseline_stderr, report.stderr],
           color=["#999999", "#4477aa"], capsize=6, width=0.6)
    ax.set_xticks([0, 1])
    ax.set_xticklabels(["random\nbaseline", "estimates"])
    ax.set_ylabel("mean SSIM")
    ax.set_ylim(0, 1.0)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


@dataclass
class DensityRow:
    density: float
    achieved_density: float
    ssim_mean: float
    ssim_stderr: float


@dataclass
class DensityStudyConfig:
    # Bins are coarser than the training maps (and the membrane smoothing
    # wider) so the render path stays insensitive to cloud density until
    # it actually starves of points.
    grasps: int = 12
    bins: tuple = (20, 20)
    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    elastomer: ElastomerModel = field(
        default_factory=lambda: ElastomerModel(smoothing_radius=3.0))
    offset_frac: float = 0.4
    depth_range: tuple = (0.2, 0.8)


def density_study(model, densities: list, config: DensityStudyConfig | None = None,
                  seed: int = 0, params: SsimParams | None = None) -> list:
    """Tactile-render quality as a function of cloud density.

    Freezes a grasp set on the full-density model cloud, renders its
    ground-truth images, then for each target density downsamples the
    cloud, regenerates the depth maps for the same grasp poses, renders
    them, and scores against the full-density renders. Returns one
    DensityRow per density (same order as given).
    """
    config = config or DensityStudyConfig()
    cloud = model.cloud
    native = measure_density(cloud)
    for d in densities:
        if d <= 0:
            raise ValueError("densities must be positive")
        if d > native:
            raise ValueError(f"density {d} exceeds native cloud density {native:.1f}")

    geom = config.sensor
    m, k = config.bins
    grasp_set = []
    gt_images = []
    for g in range(config.grasps):
        fingers = sample_grasp(cloud, seed=(seed, g), geom=geom,
                               offset_frac=config.offset_frac,
                               depth_range=config.depth_range)
        for gs in fingers:
            try:
                patch = extract_contact_volume(cloud, gs, geom)
            except EmptyContact:
                continue
            gt_images.append(render(bin_depth_map(patch, geom, m, k), config.elastomer))
            grasp_set.append(gs)
    if not grasp_set:
        raise ValueError("no grasp produced contact on the full-density cloud")

    rows = []
    for d in densities:
        if d >= native:
            down = cloud          # self-comparison at native density
            achieved = native
        else:
            leaf = leaf_for_density(cloud, d)
            down = voxel_downsample(cloud, leaf)
            achieved = measure_density(down)
        scores = []
        for gs, gt in zip(grasp_set, gt_images):
            try:
                patch = extract_contact_volume(down, gs, geom)
                img = render(bin_depth_map(patch, geom, m, k), config.elastomer)
            except EmptyContact:
                img = render(bin_depth_map(PointCloud(np.empty((0, 3))), geom, m, k),
                             config.elastomer)
            scores.append(ssim(img, gt, params))
        mean, stderr = _mean_stderr(scores)
        rows.append(DensityRow(density=float(d), achieved_density=float(achieved),
                               ssim_mean=mean, ssim_stderr=stderr))
    return rows


def save_density_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cloud_density_pts_per_cm3", "ssim_mean", "ssim_stderr"])
        for row in rows:
            writer.writerow([f"{row.density:g}", f"{row.ssim_mean:.6f}",
                             f"{row.ssim_stderr:.6f}"])


def plot_density(rows: list, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    xs = np.arange(len(rows))
    ax.bar(xs, [r.ssim_mean for r in rows], yerr=[r.ssim_stderr for r in rows],
           color="#4477aa", capsize=4, width=0.6)
    ax.set_xticks(xs)
    ax.set_xticklabels([f"{r.density:g}" for r in rows])
    ax.set_xlabel("cloud density (points/cm^3)")
    ax.set_ylabel("mean SSIM")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
