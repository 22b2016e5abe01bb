"""Patch-set features: sRGB -> CIELAB conversion and 3x3 patch decomposition.

A tracked region is represented as a set of small patch vectors; the color
pipeline crops a region, converts it to CIELAB, and splits it into
non-overlapped ``patch_size x patch_size`` patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TargetState, crop_normalize_batch, state_to_box

__all__ = [
    "PatchSet",
    "rgb_to_lab",
    "decompose_patches",
    "recompose_region",
    "ColorPatchProvider",
    "DeepFeatureProvider",
]

# sRGB (D65, 2 degree observer) linear RGB -> XYZ.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB values (shape ``(..., 3)``, range [0, 255]) to CIELAB.

    Standard sRGB gamma, D65 white point; L lies in [0, 100].  Floating
    inputs keep their precision; everything else computes in float64.
    """
    rgb = np.asarray(rgb)
    work = rgb.dtype if np.issubdtype(rgb.dtype, np.floating) else np.float64
    c = rgb.astype(work, copy=False) / np.asarray(255.0, dtype=work)
    if c.shape[-1] != 3:
        raise ValueError("last axis must hold 3 RGB channels")
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T.astype(work)
    ratio = xyz / _D65_WHITE.astype(work)
    f = np.where(
        ratio > _LAB_DELTA**3,
        np.cbrt(ratio),
        ratio / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0,
    )
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclass(frozen=True)
class PatchSet:
    """A region decomposed into fixed-size feature vectors, one per patch.

    ``vectors`` has shape ``(count, dim)``; all components are finite.
    """

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2:
            raise ValueError("patch vectors must form a 2-D (count, dim) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("patch vectors must be finite")
        object.__setattr__(self, "vectors", v)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def flatten(self) -> np.ndarray:
        """Concatenate all patch vectors into one feature vector."""
        return self.vectors.reshape(-1)

    @classmethod
    def from_flat(cls, feature: np.ndarray, dim: int) -> "PatchSet":
        """Rebuild a patch set from a flat feature vector (inverse of flatten)."""
        feature = np.asarray(feature, dtype=float)
        if feature.size % dim != 0:
            raise ValueError(f"feature length {feature.size} not divisible by dim {dim}")
        return cls(feature.reshape(-1, dim))


def decompose_patches(region: np.ndarray, patch_size: int = 3) -> PatchSet:
    """Split an ``(H, W, C)`` raster into non-overlapped square patches.

    Patches are ordered row-major over the grid; within a patch, pixels are
    row-major with channels interleaved, giving ``patch_size**2 * C``-dim
    vectors.  The decomposition is lossless (see :func:`recompose_region`).
    """
    region = np.asarray(region, dtype=float)
    if region.ndim == 2:
        region = region[..., None]
    h, w, c = region.shape
    if h % patch_size or w % patch_size:
        raise ValueError(
            f"region size {h}x{w} not divisible by patch size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    tiles = region.reshape(gh, patch_size, gw, patch_size, c)
    tiles = tiles.transpose(0, 2, 1, 3, 4)
    return PatchSet(tiles.reshape(gh * gw, patch_size * patch_size * c))


def recompose_region(patches: PatchSet, height: int, width: int, channels: int = 3,
                     patch_size: int = 3) -> np.ndarray:
    """Reassemble a region from its patch set (exact inverse of decompose)."""
    gh, gw = height // patch_size, width // patch_size
    if patches.count != gh * gw:
        raise ValueError("patch count does not match the target region size")
    tiles = patches.vectors.reshape(gh, gw, patch_size, patch_size, channels)
    return tiles.transpose(0, 2, 1, 3, 4).reshape(height, width, channels)


class ColorPatchProvider:
    """Color feature provider: crop -> CIELAB -> patch decomposition.

    ``extract`` is a pure function of (image bytes, states); states whose box
    misses the image raise, so callers should pre-filter with
    :func:`buddytrack.geometry.box_intersects_image`.
    """

    def __init__(self, base_w: float, base_h: float, region_size: int = 36,
                 patch_size: int = 3, dtype=np.float32):
        if region_size % patch_size:
            raise ValueError("region_size must be divisible by patch_size")
        self.base_w = float(base_w)
        self.base_h = float(base_h)
        self.region_size = region_size
        self.patch_size = patch_size
        self.dtype = dtype   # crop/Lab working precision; patch sets are float64
        self.dim = patch_size * patch_size * 3

    @property
    def patch_count(self) -> int:
        return (self.region_size // self.patch_size) ** 2

    def extract(self, image: np.ndarray, states: list[TargetState]) -> list[PatchSet]:
        if not states:
            return []
        boxes = np.array(
            [state_to_box(s, self.base_w, self.base_h).as_tuple() for s in states]
        )
        crops = crop_normalize_batch(image, boxes, self.region_size, dtype=self.dtype)
        labs = rgb_to_lab(crops)
        return [decompose_patches(labs[k], self.patch_size) for k in range(len(states))]


class DeepFeatureProvider:
    """Placeholder for a region-based deep feature extractor (4096-dim).

    Declared so pipelines can be configured for deep features; extraction
    requires an external network and is not shipped.
    """

    dim = 4096

    def extract(self, image, states):
        raise NotImplementedError(
            "deep feature extraction requires an external region-feature network"
        )
