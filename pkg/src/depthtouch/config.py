"""Run configuration: one file holding every module's knobs.

A config file (JSON always, TOML when the interpreter ships ``tomllib``)
maps section names to the fields below; flags override file values.
Validation happens at load time by constructing the module dataclasses,
so a bad field fails before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .contact import SensorGeometry
from .dataset import SegmentationConfig
from .geometry import Aabb
from .metrics import DensityStudyConfig, SsimParams
from .registration import IcpParams, RegistrationConfig
from .tactile import ElastomerModel


def derive_seed(seed: int, *key) -> int:
    """Stable child seed for (seed, key...) via numpy's SeedSequence."""
    entropy = [int(seed)] + [int(k) for k in key]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    bins: tuple = (100, 100)
    objects: int = 3
    grasps: int = 25
    densities: tuple = (1.0, 10.0, 20.0, 40.0, 80.0)
    table_extent: float = 0.5
    camera_noise: float = 0.0015
    offset_frac: float = 0.4
    depth_range: tuple = (0.2, 0.8)
    split_ratios: tuple = (0.70, 0.15, 0.15)
    baseline_n: int = 15
    pool_split: str = "test"
    study_grasps: int = 12
    study_bins: tuple = (20, 20)
    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    elastomer: ElastomerModel = field(default_factory=ElastomerModel)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    ssim: SsimParams = field(default_factory=SsimParams)

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.grasps < 0 or self.objects < 1:
            raise ValueError("grasps must be >= 0 and objects >= 1")
        if len(self.bins) != 2 or min(self.bins) < 1:
            raise ValueError("bins must be two integers >= 1")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if any(d <= 0 for d in self.densities):
            raise ValueError("densities must be positive")
        if not 0.0 <= self.offset_frac <= 1.0:
            raise ValueError("offset_frac must be in [0, 1]")
        if self.segmentation.workspace is None:
            half = self.table_extent / 2
            self.segmentation.workspace = Aabb([-half, -half, -0.01],
                                               [half, half, 0.5])

    def study_config(self) -> DensityStudyConfig:
        return DensityStudyConfig(grasps=self.study_grasps, bins=tuple(self.study_bins),
                                  sensor=self.sensor, offset_frac=self.offset_frac,
                                  depth_range=self.depth_range)


_SECTION_TYPES = {
    "sensor": SensorGeometry,
    "elastomer": ElastomerModel,
    "segmentation": SegmentationConfig,
    "registration": RegistrationConfig,
    "ssim": SsimParams,
}


def _build_section(cls, data: dict):
    if cls is RegistrationConfig and "icp" in data:
        data = dict(data)
        data["icp"] = IcpParams(**data["icp"])
    if cls is SegmentationConfig and data.get("workspace") is not None:
        data = dict(data)
        box = data["workspace"]
        data["workspace"] = Aabb(box["min"], box["max"])
    return cls(**data)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus flag overrides."""
    doc: dict = {}
    if path is not None:
        text_path = str(path)
        if text_path.endswith(".toml"):
            try:
                import tomllib
            except ImportError as exc:
                raise ValueError("TOML configs need Python >= 3.11; use JSON") from exc
            with open(text_path, "rb") as f:
                doc = tomllib.load(f)
        else:
            with open(text_path) as f:
                doc = json.load(f)

    kwargs: dict = {}
    for key, value in doc.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value)
        else:
            kwargs[key] = tuple(value) if isinstance(value, list) else value
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                kwargs[key] = value
    return RunConfig(**kwargs)


def config_to_dict(obj) -> object:
    """JSON-ready view of a (nested) config dataclass."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: config_to_dict(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (list, tuple)):
        return [config_to_dict(v) for v in obj]
    if callable(obj):
        return None
    return obj
