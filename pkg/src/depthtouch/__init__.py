"""Depth-to-tactile estimation pipeline at desk scale.

Builds (depth-map, tactile-image) correspondence datasets from synthetic
scenes -- segmentation, registration, contact sampling, binning, and an
analytic tactile renderer -- and evaluates tactile estimates with SSIM,
template matching, a random-image baseline, and a density study.
"""

from .contact import DepthMap, GraspSample, SensorGeometry, bin_depth_map, extract_contact_volume, sample_grasp
from .dataset import (CollectConfig, PairManifest, PairRecord, SegmentationConfig,
                      collect, ingest_directory, load_manifest, merge_manifests,
                      save_manifest, segment_object, split)
from .geometry import (Aabb, PointCloud, RigidTransform, crop_aabb, euclidean_cluster,
                       leaf_for_density, measure_density, remove_planes, transform,
                       voxel_downsample)
from .metrics import (DensityStudyConfig, EvalReport, SsimParams, baseline_ssim,
                      density_study, evaluate, match_template, ncc_map, ssim)
from .ply import load_ply, save_ply
from .registration import (IcpParams, RegistrationConfig, RegistrationResult,
                           coarse_align, icp_refine, register)
from .synth import (BumpyCylinderParams, DepthCamera, EmbossedPlateParams,
                    RidgedBoxParams, Scene, SyntheticObject, compose_scene,
                    default_cameras, make_object, render_depth_view)
from .tactile import ElastomerModel, indent, load_image, render, save_image, shade

__version__ = "0.1.0"
