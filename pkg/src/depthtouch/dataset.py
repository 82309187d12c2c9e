"""Pair persistence and the end-to-end data-collection loop.

A dataset directory holds ``depth/<id>.f32`` (+ ``.json`` sidecar) and
``tactile/<id>.png`` with a ``manifest.json`` binding them together.
Record paths are stored relative to the manifest so a dataset tree is
relocatable and byte-identical across runs with the same seed.

External (real-sensor) datasets can be ingested from the same layout:
a ``records.json`` listing ``{id, depth_path, tactile_path, object_id}``
entries next to the ``depth/`` and ``tactile/`` directories.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .contact import DepthMap, SensorGeometry, bin_depth_map, extract_contact_volume, sample_grasp
from .errors import CollectError, EmptyContact, MissingFile, SchemaMismatch
from .geometry import Aabb, PointCloud, crop_aabb, euclidean_cluster, remove_planes, transform, voxel_downsample
from .registration import RegistrationConfig, register
from .synth import Scene, SyntheticObject, default_cameras, render_depth_view
from .tactile import ElastomerModel, render, save_image

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = 1
SPLITS = ("train", "val", "test", "unassigned")


@dataclass
class PairRecord:
    id: str
    depth_path: str
    tactile_path: str
    object_id: str
    grasp: dict
    finger: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class PairManifest:
    records: list = field(default_factory=list)
    split_ratios: tuple = (0.70, 0.15, 0.15)
    split_seed: int | None = None
    schema_version: int = MANIFEST_SCHEMA
    base_dir: str | None = None            # set on load; not serialized

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict:
        out = {s: 0 for s in SPLITS}
        for r in self.records:
            out[r.split] += 1
        return out

    def resolve(self, rel_path: str) -> str:
        if self.base_dir is None:
            return rel_path
        return os.path.join(self.base_dir, rel_path)


def save_manifest(manifest: PairManifest, path) -> None:
    doc = {
        "schema_version": manifest.schema_version,
        "split_ratios": list(manifest.split_ratios),
        "split_seed": manifest.split_seed,
        "records": [
            {
                "id": r.id,
                "depth_path": r.depth_path,
                "tactile_path": r.tactile_path,
                "object_id": r.object_id,
                "grasp": r.grasp,
                "finger": r.finger,
                "split": r.split,
            }
            for r in manifest.records
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path, check_files: bool = True) -> PairManifest:
    """Read a manifest, verifying schema version and referenced files."""
    with open(path) as f:
        doc = json.load(f)
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA:
        raise SchemaMismatch(f"manifest schema {version!r}, expected {MANIFEST_SCHEMA}")
    base_dir = os.path.dirname(os.path.abspath(str(path)))
    records = [PairRecord(**r) for r in doc["records"]]
    manifest = PairManifest(records=records,
                            split_ratios=tuple(doc["split_ratios"]),
                            split_seed=doc["split_seed"],
                            schema_version=version,
                            base_dir=base_dir)
    if check_files:
        for r in records:
            for rel in (r.depth_path, r.tactile_path):
                full = manifest.resolve(rel)
                if not os.path.exists(full):
                    raise MissingFile(r.id, rel)
    return manifest


def _id_rank(seed, record_id: str) -> str:
    digest = hashlib.sha256(f"{seed}:{record_id}".encode()).hexdigest()
    return digest


def split(manifest: PairManifest, ratios: tuple = (0.70, 0.15, 0.15),
          seed: int = 0) -> PairManifest:
    """Assign train/val/test splits, deterministic for a given seed.

    Records are ordered by a seeded hash of their id; val and test take
    floor(ratio * n) records each and train gets the remainder. Because
    the order is keyed to (seed, id), adding records later disturbs at
    most a boundary handful of earlier assignments.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")

    n = len(manifest.records)
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_val - n_test

    order = sorted(manifest.records, key=lambda r: (_id_rank(seed, r.id), r.id))
    assignment = {}
    for i, rec in enumerate(order):
        if i < n_train:
            assignment[rec.id] = "train"
        elif i < n_train + n_val:
            assignment[rec.id] = "val"
        else:
            assignment[rec.id] = "test"

    new_records = [replace(r, split=assignment[r.id]) for r in manifest.records]
    return PairManifest(records=new_records, split_ratios=tuple(ratios), split_seed=seed,
                        schema_version=manifest.schema_version, base_dir=manifest.base_dir)


def merge_manifests(manifests: list) -> PairManifest:
    records = []
    seen = set()
    for m in manifests:
        for r in m.records:
            if r.id in seen:
                raise ValueError(f"duplicate record id {r.id}")
            seen.add(r.id)
            records.append(r)
    base = manifests[0] if manifests else PairManifest()
    return PairManifest(records=records, split_ratios=base.split_ratios,
                        split_seed=base.split_seed, base_dir=base.base_dir)


@dataclass
class SegmentationConfig:
    """Workspace crop, plane removal, and clustering settings."""

    workspace: Aabb | None = None          # None: crop skipped
    plane_dist_thresh: float = 0.005
    plane_min_frac: float = 0.2
    cluster_tol: float = 0.02
    cluster_min: int = 500
    cluster_max: int = 1_000_000
    voxel: float | None = 0.004            # downsample before clustering; None keeps all


def segment_object(cloud: PointCloud, config: SegmentationConfig | None = None,
                   seed: int = 0) -> PointCloud:
    """Crop -> remove planes -> Euclidean clustering; returns the largest cluster."""
    config = config or SegmentationConfig()
    work = cloud
    if config.workspace is not None:
        work = crop_aabb(work, config.workspace)
    work = remove_planes(work, config.plane_dist_thresh, config.plane_min_frac, seed=seed)
    if config.voxel is not None and len(work) > 0:
        work = voxel_downsample(work, config.voxel)
    clusters = euclidean_cluster(work, config.cluster_tol, config.cluster_min,
                                 config.cluster_max)
    if not clusters:
        return PointCloud(np.empty((0, 3)))
    return clusters[0]


@dataclass
class CollectConfig:
    """Everything the data-collection loop needs besides scene and model."""

    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    bins: tuple = (100, 100)
    elastomer: ElastomerModel = field(default_factory=ElastomerModel)
    offset_frac: float = 0.4
    depth_range: tuple = (0.2, 0.8)
    cameras: list | None = None            # None: default two-camera rig
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    min_success_frac: float = 0.5
    jobs: int = 1


def collect(scene: Scene, model: SyntheticObject, n_grasps: int,
            config: CollectConfig | None = None, seed: int = 0,
            out_dir: str = "dataset", object_id: str | None = None) -> PairManifest:
    """Run the data-collection loop on one scene and return its manifest.

    Renders the camera views, segments the object, registers the model
    into the scene, then samples ``n_grasps`` grasps. Each successful
    grasp yields two records (left and right finger): the depth map comes
    from the registered model (the robot's belief) while the ground-truth
    tactile image is rendered from the true object surface, mirroring a
    physical contact.

    Grasps whose fingers miss the object are skipped and logged; fewer
    than ``min_success_frac`` successes raise CollectError. Deterministic
    for a given seed: rerunning writes byte-identical files.
    """
    config = config or CollectConfig()
    object_id = object_id or f"{model.kind}-0"
    geom = config.sensor
    m, k = config.bins

    os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "tactile"), exist_ok=True)

    cameras = config.cameras if config.cameras is not None else default_cameras()
    views = [render_depth_view(scene, cam, seed=(seed, 1000 + i))
             for i, cam in enumerate(cameras)]
    merged = PointCloud(np.vstack([v.points for v in views if len(v)]))
    segmented = segment_object(merged, config.segmentation, seed=seed)
    if len(segmented) == 0:
        raise CollectError(f"{object_id}: segmentation found no object cluster")

    reg = register(model.cloud, segmented, config.registration)
    log.info("%s: registered model, fitness %.3e after %d iterations",
             object_id, reg.fitness, reg.iterations)
    model_belief = transform(model.cloud, reg.pose)
    model_true = scene.object_cloud_world

    def run_grasp(g: int):
        fingers = sample_grasp(model_true, seed=(seed, g), geom=geom,
                               offset_frac=config.offset_frac,
                               depth_range=config.depth_range)
        out = []
        for gs in fingers:
            patch_belief = extract_contact_volume(model_belief, gs, geom)
            patch_true = extract_contact_volume(model_true, gs, geom)
            out.append((gs, patch_belief, patch_true))
        return out

    results = {}
    failed = []
    indices = list(range(n_grasps))

    def task(g):
        try:
            return g, run_grasp(g)
        except EmptyContact as exc:
            return g, exc

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(task, indices))
    else:
        outcomes = [task(g) for g in indices]

    records = []
    for g, outcome in outcomes:
        if isinstance(outcome, EmptyContact):
            failed.append(g)
            log.info("%s: grasp %d skipped (%s)", object_id, g, outcome)
            continue
        for gs, patch_belief, patch_true in outcome:
            rec_id = f"{object_id}-g{g:04d}-{gs.finger}"
            dmap = bin_depth_map(patch_belief, geom, m, k)
            gt_map = bin_depth_map(patch_true, geom, m, k)
            image = render(gt_map, config.elastomer)

            depth_rel = os.path.join("depth", rec_id)
            tactile_rel = os.path.join("tactile", rec_id + ".png")
            dmap.save(os.path.join(out_dir, depth_rel))
            save_image(image, os.path.join(out_dir, tactile_rel))

            records.append(PairRecord(
                id=rec_id,
                depth_path=depth_rel + ".f32",
                tactile_path=tactile_rel,
                object_id=object_id,
                grasp={
                    "position": [float(v) for v in gs.position],
                    "yaw": float(gs.yaw),
                    "contact_depth": float(gs.contact_depth),
                },
                finger=gs.finger,
            ))

    successes = n_grasps - len(failed)
    if n_grasps > 0 and successes / n_grasps < config.min_success_frac:
        raise CollectError(
            f"{object_id}: only {successes}/{n_grasps} grasps succeeded "
            f"(< {config.min_success_frac:.0%})")

    manifest = PairManifest(records=records, base_dir=os.path.abspath(out_dir))
    return manifest


def ingest_directory(root) -> PairManifest:
    """Build a manifest from an external dataset directory.

    Expects ``records.json`` next to ``depth/`` and ``tactile/``::

        {"records": [{"id": ..., "depth_path": "depth/<id>.f32",
                      "tactile_path": "tactile/<id>.png",
                      "object_id": ...}, ...]}

    Files are verified to exist; splits start unassigned.
    """
    root = str(root)
    with open(os.path.join(root, "records.json")) as f:
        doc = json.load(f)
    records = []
    for r in doc["records"]:
        rec = PairRecord(id=r["id"], depth_path=r["depth_path"],
                         tactile_path=r["tactile_path"],
                         object_id=r.get("object_id", "unknown"),
                         grasp=r.get("grasp", {}), finger=r.get("finger", "left"))
        for rel in (rec.depth_path, rec.tactile_path):
            if not os.path.exists(os.path.join(root, rel)):
                raise MissingFile(rec.id, rel)
        records.append(rec)
    return PairManifest(records=records, base_dir=os.path.abspath(root))
