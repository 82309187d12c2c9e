"""Analytic tactile-image renderer.

Turns a depth map into the RGB image an elastomer-plus-camera tactile
pad would record: the membrane takes the shape of whatever indents it
(with a smoothing radius standing in for elastomer stiffness) and three
colored directional lights shade the resulting height field. Rendering
is deterministic, so it doubles as the ground-truth generator for
synthetic datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from .contact import DepthMap


def _default_lights() -> np.ndarray:
    # Three lights 120 degrees apart in azimuth, 45 degrees elevation,
    # pointing from the surface toward each light.
    dirs = []
    for az_deg in (0.0, 120.0, 240.0):
        az = math.radians(az_deg)
        el = math.radians(45.0)
        dirs.append([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return np.array(dirs)


def _default_colors() -> np.ndarray:
    return np.array([[170.0, 40.0, 40.0],
                     [40.0, 170.0, 40.0],
                     [40.0, 40.0, 170.0]])


@dataclass
class ElastomerModel:
    """Membrane stiffness and illumination for the tactile renderer.

    smoothing_radius: Gaussian sigma in bins (the membrane cannot crease
    sharper than this). light_dirs: unit vectors toward each light in the
    (x = columns, y = rows, z = out of pad) shading frame. height_gain
    converts meters of indentation into grid units before normals are
    computed.
    """

    smoothing_radius: float = 2.0
    light_dirs: np.ndarray = field(default_factory=_default_lights)
    light_colors: np.ndarray = field(default_factory=_default_colors)
    background: np.ndarray = field(default_factory=lambda: np.array([80.0, 80.0, 90.0]))
    height_gain: float = 1500.0

    def __post_init__(self):
        self.light_dirs = np.asarray(self.light_dirs, dtype=np.float64).reshape(-1, 3)
        lengths = np.linalg.norm(self.light_dirs, axis=1)
        if not np.all(np.abs(lengths - 1.0) <= 1e-6):
            raise ValueError("light directions must be unit length")
        self.light_colors = np.asarray(self.light_colors, dtype=np.float64).reshape(-1, 3)
        if self.light_colors.shape[0] != self.light_dirs.shape[0]:
            raise ValueError("one color per light required")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if self.smoothing_radius < 0:
            raise ValueError("smoothing radius must be >= 0")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian, truncated at 3 sigma."""
    half = max(1, int(math.ceil(3.0 * sigma)))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-0.5 * (ax / sigma) ** 2)
    kernel = np.outer(g1, g1)
    return kernel / kernel.sum()


def indent(dmap: DepthMap, model: ElastomerModel) -> np.ndarray:
    """Membrane height field (meters) from a depth map.

    h = max(0, -value) per bin, then Gaussian smoothing with the
    stiffness radius (zero-padded borders). Bins with value >= 0 do not
    contribute.
    """
    h = np.maximum(0.0, -dmap.values.astype(np.float64))
    if model.smoothing_radius > 0:
        h = convolve2d(h, gaussian_kernel(model.smoothing_radius),
                       mode="same", boundary="fill")
    return h


def shade(height: np.ndarray, model: ElastomerModel) -> np.ndarray:
    """Lambertian shading of a height field under the colored light rig.

    Surface normals come from central-difference gradients of the
    gain-scaled height. Each light contributes relative to its response
    on the flat membrane, so a zero height field renders exactly as the
    background color. Returns an (m, k, 3) uint8 image.
    """
    s = np.asarray(height, dtype=np.float64) * model.height_gain
    gy, gx = np.gradient(s)                # gy: along rows, gx: along columns
    norm = np.sqrt(gx ** 2 + gy ** 2 + 1.0)
    nx, ny, nz = -gx / norm, -gy / norm, 1.0 / norm

    img = np.tile(model.background, (*s.shape, 1))
    for direction, color in zip(model.light_dirs, model.light_colors):
        lam = np.maximum(0.0, nx * direction[0] + ny * direction[1] + nz * direction[2])
        flat = max(0.0, direction[2])
        img += (lam - flat)[..., None] * color
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render(dmap: DepthMap, model: ElastomerModel | None = None) -> np.ndarray:
    """Depth map -> tactile image (indent then shade)."""
    model = model or ElastomerModel()
    return shade(indent(dmap, model), model)


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(image, mode="RGB").save(str(path), format="PNG")


def load_image(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im.convert("RGB"))
