"""Command-line entry point: the pipeline as reproducible subcommands.

Every artifact-producing subcommand writes a ``run.json`` with the
resolved configuration and seeds, sufficient to reproduce the run
byte for byte. Pipeline failures exit 1 with a JSON error report on
stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dataset as ds
from . import metrics as mx
from .config import RunConfig, config_to_dict, derive_seed, load_config
from .contact import DepthMap
from .errors import PipelineError
from .geometry import PointCloud, RigidTransform
from .ply import load_ply, save_ply
from .registration import register
from .synth import (OBJECT_KINDS, compose_scene, default_cameras, make_object,
                    object_sidecar)
from .tactile import render, save_image

log = logging.getLogger("depthtouch")


def _write_run_record(out_dir: str, command: str, config: RunConfig, extra: dict | None = None) -> None:
    record = {"command": command, "config": config_to_dict(config)}
    if extra:
        record.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _build_objects(config: RunConfig):
    """Objects (kinds cycled) and their table scenes for this run."""
    objects = []
    for i in range(config.objects):
        kind = OBJECT_KINDS[i % len(OBJECT_KINDS)]
        obj = make_object(kind, seed=derive_seed(config.seed, 1, i))
        rng = np.random.default_rng(derive_seed(config.seed, 2, i))
        yaw = rng.uniform(0.0, 2 * np.pi)
        shift = rng.uniform(-0.1, 0.1, 2) * config.table_extent / 2
        pose = RigidTransform(_rot_z(yaw), np.array([shift[0], shift[1], 0.0]))
        scene = compose_scene(obj, table_extent=config.table_extent, pose=pose,
                              seed=derive_seed(config.seed, 3, i))
        objects.append((f"{kind}-{i}", obj, scene))
    return objects


def _collect_config(config: RunConfig) -> ds.CollectConfig:
    cameras = default_cameras(noise_sigma=config.camera_noise)
    return ds.CollectConfig(sensor=config.sensor, bins=tuple(config.bins),
                            elastomer=config.elastomer, offset_frac=config.offset_frac,
                            depth_range=config.depth_range, cameras=cameras,
                            segmentation=config.segmentation,
                            registration=config.registration, jobs=config.jobs)


def _distribute(total: int, parts: int) -> list:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _run_collect(config: RunConfig, out_dir: str) -> ds.PairManifest:
    data_dir = os.path.join(out_dir, "dataset")
    collect_cfg = _collect_config(config)
    manifests = []
    for (object_id, obj, scene), n in zip(_build_objects(config),
                                          _distribute(config.grasps, config.objects)):
        if n == 0:
            continue
        log.info("collecting %d grasps on %s", n, object_id)
        manifests.append(ds.collect(scene, obj, n, collect_cfg,
                                    seed=derive_seed(config.seed, 4, len(manifests)),
                                    out_dir=data_dir, object_id=object_id))
    manifest = ds.merge_manifests(manifests)
    manifest.base_dir = os.path.abspath(data_dir)
    return manifest


def _render_estimates(manifest: ds.PairManifest, config: RunConfig, est_dir: str,
                      split_name: str = "test") -> None:
    os.makedirs(est_dir, exist_ok=True)
    for rec in manifest.by_split(split_name):
        dmap = DepthMap.load(manifest.resolve(rec.depth_path)[:-4])
        save_image(render(dmap, config.elastomer), os.path.join(est_dir, rec.id + ".png"))


def cmd_synth(config: RunConfig, args) -> int:
    obj_dir = os.path.join(args.out, "objects")
    scene_dir = os.path.join(args.out, "scenes")
    os.makedirs(obj_dir, exist_ok=True)
    os.makedirs(scene_dir, exist_ok=True)
    for object_id, obj, scene in _build_objects(config):
        save_ply(obj.cloud, os.path.join(obj_dir, object_id + ".ply"))
        with open(os.path.join(obj_dir, object_id + ".json"), "w") as f:
            json.dump(object_sidecar(obj), f, indent=2, sort_keys=True)
            f.write("\n")
        pts, _ = scene.all_points()
        save_ply(PointCloud(pts), os.path.join(scene_dir, object_id + ".ply"))
    _write_run_record(args.out, "synth", config)
    return 0


def cmd_segment(config: RunConfig, args) -> int:
    cloud = load_ply(args.input)
    segmented = ds.segment_object(cloud, config.segmentation, seed=config.seed)
    os.makedirs(args.out, exist_ok=True)
    save_ply(segmented, os.path.join(args.out, "segmented.ply"))
    _write_run_record(args.out, "segment", config)
    log.info("segmented %d -> %d points", len(cloud), len(segmented))
    return 0


def cmd_register(config: RunConfig, args) -> int:
    model = load_ply(args.model)
    scene = load_ply(args.scene)
    result = register(model, scene, config.registration)
    os.makedirs(args.out, exist_ok=True)
    doc = result.pose.to_json_dict()
    doc.update({"fitness": result.fitness, "iterations": result.iterations,
                "converged": result.converged, "matched_frac": result.matched_frac})
    with open(os.path.join(args.out, "pose.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_run_record(args.out, "register", config)
    return 0


def cmd_collect(config: RunConfig, args) -> int:
    manifest = _run_collect(config, args.out)
    ds.save_manifest(manifest, os.path.join(args.out, "dataset", "manifest.json"))
    _write_run_record(args.out, "collect", config,
                      {"records": len(manifest.records)})
    log.info("collected %d records", len(manifest.records))
    return 0


def cmd_split(config: RunConfig, args) -> int:
    manifest = ds.load_manifest(args.manifest)
    manifest = ds.split(manifest, ratios=config.split_ratios, seed=config.seed)
    ds.save_manifest(manifest, args.manifest)
    counts = manifest.counts()
    log.info("split: %s", counts)
    return 0


def cmd_render(config: RunConfig, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    inputs = []
    if os.path.isdir(args.input):
        for name in sorted(os.listdir(args.input)):
            if name.endswith(".f32"):
                inputs.append(os.path.join(args.input, name[:-4]))
    else:
        base = args.input[:-4] if args.input.endswith(".f32") else args.input
        inputs.append(base)
    for base in inputs:
        dmap = DepthMap.load(base)
        out_path = os.path.join(args.out, os.path.basename(base) + ".png")
        save_image(render(dmap, config.elastomer), out_path)
    _write_run_record(args.out, "render", config, {"rendered": len(inputs)})
    return 0


def cmd_evaluate(config: RunConfig, args) -> int:
    manifest = ds.load_manifest(args.manifest)
    report = mx.evaluate(manifest, args.estimates, seed=config.seed,
                         baseline_n=config.baseline_n, pool_split=config.pool_split,
                         params=config.ssim)
    os.makedirs(args.out, exist_ok=True)
    mx.save_report(report, os.path.join(args.out, "report.json"))
    mx.plot_report(report, os.path.join(args.out, "report.png"))
    _write_run_record(args.out, "evaluate", config)
    log.info("mean SSIM %.4f +- %.4f vs baseline %.4f +- %.4f (n=%d)",
             report.mean, report.stderr, report.baseline_mean,
             report.baseline_stderr, report.n)
    return 0


def cmd_density_study(config: RunConfig, args) -> int:
    obj = make_object(args.kind, seed=derive_seed(config.seed, 1, 0))
    rows = mx.density_study(obj, list(config.densities), config.study_config(),
                            seed=config.seed, params=config.ssim)
    os.makedirs(args.out, exist_ok=True)
    mx.save_density_csv(rows, os.path.join(args.out, "density.csv"))
    mx.plot_density(rows, os.path.join(args.out, "density.png"))
    _write_run_record(args.out, "density-study", config, {"kind": args.kind})
    for row in rows:
        log.info("density %6.1f pts/cm^3: SSIM %.4f +- %.4f",
                 row.density, row.ssim_mean, row.ssim_stderr)
    return 0


def cmd_demo(config: RunConfig, args) -> int:
    manifest = _run_collect(config, args.out)
    manifest = ds.split(manifest, ratios=config.split_ratios,
                        seed=derive_seed(config.seed, 5))
    manifest_path = os.path.join(args.out, "dataset", "manifest.json")
    ds.save_manifest(manifest, manifest_path)

    est_dir = os.path.join(args.out, "estimates", "test")
    _render_estimates(manifest, config, est_dir)

    manifest = ds.load_manifest(manifest_path)
    # Small demo datasets can have fewer pool images than the configured
    # baseline sample; shrink the sample rather than fail the run.
    pool_size = len(manifest.by_split(config.pool_split))
    baseline_n = min(config.baseline_n, pool_size - 1)
    if baseline_n < config.baseline_n:
        log.warning("baseline sample reduced to %d (pool of %d images)",
                    baseline_n, pool_size)
    report = mx.evaluate(manifest, est_dir, seed=derive_seed(config.seed, 6),
                         baseline_n=baseline_n, pool_split=config.pool_split,
                         params=config.ssim)
    eval_dir = os.path.join(args.out, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    mx.save_report(report, os.path.join(eval_dir, "report.json"))
    mx.plot_report(report, os.path.join(eval_dir, "report.png"))

    _write_run_record(args.out, "demo", config, {"records": len(manifest.records)})
    log.info("demo: %d records, mean SSIM %.4f vs baseline %.4f",
             len(manifest.records), report.mean, report.baseline_mean)
    return 0


def _parse_densities(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON/TOML config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--bins", type=int, nargs=2, metavar=("M", "K"), default=None)
    common.add_argument("--grasps", type=int, default=None)
    common.add_argument("--objects", type=int, default=None)
    common.add_argument("--densities", type=_parse_densities, default=None,
                        metavar="D1,D2,...")
    common.add_argument("--jobs", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="depthtouch",
        description="Synthetic depth-to-tactile dataset pipeline and evaluation suite")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate objects and scenes")

    p = sub.add_parser("segment", parents=[common], help="segment an object cloud")
    p.add_argument("--input", required=True, help="scene PLY")

    p = sub.add_parser("register", parents=[common], help="align a model to a scene")
    p.add_argument("--model", required=True, help="model PLY")
    p.add_argument("--scene", required=True, help="scene PLY")

    sub.add_parser("collect", parents=[common],
                   help="run the data-collection loop end to end")

    p = sub.add_parser("split", parents=[common], help="assign dataset splits")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("render", parents=[common], help="render depth maps to tactile images")
    p.add_argument("--input", required=True, help=".f32 depth map or directory")

    p = sub.add_parser("evaluate", parents=[common], help="score estimates against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--estimates", required=True)

    p = sub.add_parser("density-study", parents=[common],
                       help="tactile quality versus cloud density")
    p.add_argument("--kind", choices=OBJECT_KINDS, default="ridged_box")

    sub.add_parser("demo", parents=[common],
                   help="collect, split, and evaluate with renders as estimates")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "register": cmd_register,
    "collect": cmd_collect,
    "split": cmd_split,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
    "density-study": cmd_density_study,
    "demo": cmd_demo,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "bins": tuple(args.bins) if args.bins else None,
                 "grasps": args.grasps, "objects": args.objects,
                 "densities": args.densities, "jobs": args.jobs}
    try:
        config = load_config(args.config, overrides)
        return _COMMANDS[args.command](config, args)
    except PipelineError as exc:
        json.dump(exc.report(), sys.stderr)
        sys.stderr.write("\n")
        return 1
    except (ValueError, OSError) as exc:
        json.dump({"error": "pipeline_error", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
