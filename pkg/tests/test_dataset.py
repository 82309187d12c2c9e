import json
import os

import numpy as np
import pytest

from depthtouch.contact import DepthMap
from depthtouch.dataset import (CollectConfig, PairManifest, PairRecord,
                                SegmentationConfig, collect, ingest_directory,
                                load_manifest, merge_manifests, save_manifest, split)
from depthtouch.errors import MissingFile, SchemaMismatch
from depthtouch.geometry import Aabb, RigidTransform
from depthtouch.synth import compose_scene, make_object
from depthtouch.tactile import load_image


def dummy_manifest(n, prefix="rec"):
    records = [PairRecord(id=f"{prefix}-{i:04d}", depth_path=f"depth/{i}.f32",
                          tactile_path=f"tactile/{i}.png", object_id="obj",
                          grasp={}, finger="left") for i in range(n)]
    return PairManifest(records=records)


def rot_z(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0],
                     [np.sin(a), np.cos(a), 0.0],
                     [0.0, 0.0, 1.0]])


def collect_config():
    return CollectConfig(
        segmentation=SegmentationConfig(
            workspace=Aabb([-0.2, -0.2, -0.01], [0.2, 0.2, 0.5])))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    obj = make_object("ridged_box", seed=0)
    scene = compose_scene(obj, table_extent=0.4,
                          pose=RigidTransform(rot_z(15.0), np.array([0.01, 0.0, 0.0])),
                          seed=0)
    manifest = collect(scene, obj, n_grasps=4, config=collect_config(), seed=3,
                       out_dir=str(out), object_id="ridged_box-0")
    return out, manifest


class TestCollect:
    def test_two_records_per_grasp(self, small_run):
        _, manifest = small_run
        assert len(manifest.records) == 8
        fingers = {r.finger for r in manifest.records}
        assert fingers == {"left", "right"}

    def test_files_exist_and_dimensions_match(self, small_run):
        out, manifest = small_run
        for rec in manifest.records:
            dmap = DepthMap.load(os.path.join(out, rec.depth_path[:-4]))
            assert (dmap.m, dmap.k) == (100, 100)
            img = load_image(os.path.join(out, rec.tactile_path))
            assert img.shape == (dmap.m, dmap.k, 3)

    def test_grasp_params_recorded(self, small_run):
        _, manifest = small_run
        for rec in manifest.records:
            assert set(rec.grasp) == {"position", "yaw", "contact_depth"}
            assert rec.object_id == "ridged_box-0"
            assert rec.split == "unassigned"

    def test_deterministic_bytes(self, tmp_path):
        obj = make_object("bumpy_cylinder", seed=1)
        scene = compose_scene(obj, table_extent=0.4, seed=0)
        trees = []
        for run in ("a", "b"):
            out = tmp_path / run
            manifest = collect(scene, obj, n_grasps=2, config=collect_config(),
                               seed=11, out_dir=str(out), object_id="bumpy_cylinder-0")
            save_manifest(manifest, out / "manifest.json")
            tree = {}
            for root, _, files in os.walk(out):
                for f in files:
                    p = os.path.join(root, f)
                    tree[os.path.relpath(p, out)] = open(p, "rb").read()
            trees.append(tree)
        assert trees[0].keys() == trees[1].keys()
        for key in trees[0]:
            assert trees[0][key] == trees[1][key], key


class TestSplit:
    def test_floor_allocation_578(self):
        manifest = split(dummy_manifest(578), seed=0)
        counts = manifest.counts()
        assert counts["train"] == 406 and counts["val"] == 86 and counts["test"] == 86

    def test_floor_allocation_10(self):
        manifest = split(dummy_manifest(10), seed=0)
        counts = manifest.counts()
        assert counts["train"] == 8 and counts["val"] == 1 and counts["test"] == 1

    def test_same_seed_identical(self):
        base = dummy_manifest(97)
        a = split(base, seed=5)
        b = split(base, seed=5)
        assert [r.split for r in a.records] == [r.split for r in b.records]
        c = split(base, seed=6)
        assert [r.split for r in a.records] != [r.split for r in c.records]

    def test_partition_and_ratio_validation(self):
        manifest = split(dummy_manifest(100), seed=1)
        assert sum(manifest.counts()[s] for s in ("train", "val", "test")) == 100
        with pytest.raises(ValueError):
            split(dummy_manifest(10), ratios=(0.5, 0.2, 0.2), seed=0)

    def test_adding_records_moves_only_boundary_few(self):
        base = split(dummy_manifest(200), seed=9)
        before = {r.id: r.split for r in base.records}
        grown_records = base.records + dummy_manifest(20, prefix="new").records
        grown = split(PairManifest(records=grown_records), seed=9)
        moved = sum(1 for r in grown.records if r.id in before and before[r.id] != r.split)
        assert moved <= 20


class TestManifestIo:
    def test_round_trip(self, small_run):
        out, manifest = small_run
        manifest = split(manifest, seed=2)
        path = out / "manifest.json"
        save_manifest(manifest, path)
        back = load_manifest(path)
        assert back.split_seed == 2
        assert back.split_ratios == (0.70, 0.15, 0.15)
        assert [vars(r) for r in back.records] == [vars(r) for r in manifest.records]

    def test_missing_file_detected(self, small_run, tmp_path):
        out, manifest = small_run
        path = tmp_path / "manifest.json"
        save_manifest(manifest, path)
        with pytest.raises(MissingFile) as exc:
            load_manifest(path)
        assert exc.value.record_id == manifest.records[0].id

    def test_schema_mismatch(self, tmp_path):
        doc = {"schema_version": 99, "split_ratios": [0.7, 0.15, 0.15],
               "split_seed": None, "records": []}
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaMismatch):
            load_manifest(path)

    def test_merge_rejects_duplicates(self):
        a = dummy_manifest(5)
        with pytest.raises(ValueError):
            merge_manifests([a, a])
        b = dummy_manifest(5, prefix="other")
        merged = merge_manifests([a, b])
        assert len(merged.records) == 10


class TestIngest:
    def test_ingest_directory(self, small_run, tmp_path):
        out, manifest = small_run
        records = [{"id": r.id, "depth_path": r.depth_path,
                    "tactile_path": r.tactile_path, "object_id": r.object_id}
                   for r in manifest.records[:4]]
        (out / "records.json").write_text(json.dumps({"records": records}))
        ingested = ingest_directory(out)
        assert len(ingested.records) == 4
        assert all(r.split == "unassigned" for r in ingested.records)

    def test_ingest_missing_file(self, tmp_path):
        (tmp_path / "records.json").write_text(json.dumps({"records": [
            {"id": "x", "depth_path": "depth/x.f32", "tactile_path": "tactile/x.png"}]}))
        with pytest.raises(MissingFile):
            ingest_directory(tmp_path)
