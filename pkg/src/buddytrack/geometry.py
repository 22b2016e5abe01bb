"""Bounding boxes, overlap ratios, candidate sampling, and region cropping.

All operations here are pure functions of their inputs; randomness enters
only through an explicit seed, so everything is safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoundingBox",
    "TargetState",
    "SamplingParams",
    "vor",
    "center_error",
    "state_to_box",
    "box_intersects_image",
    "geometry_distance",
    "geometry_distance_batch",
    "sample_candidates",
    "crop_normalize",
    "crop_normalize_batch",
    "bilinear_resize",
]

# Per-frame scale samples are clipped to this band around the previous scale
# to keep crops non-degenerate.
SCALE_CLAMP = (0.5, 2.0)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner ``(x, y)``, positive width/height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class TargetState:
    """Tracker estimate: box center, scale multiplier, and frame index.

    ``scale`` multiplies the initial target size, so ``scale == 1`` means
    the original box dimensions.
    """

    cx: float
    cy: float
    scale: float = 1.0
    frame_index: int = 0

    def __post_init__(self):
        if not (self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValueError("state center must be finite")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


@dataclass(frozen=True)
class SamplingParams:
    """Diagonal Gaussian used to draw translation/scale candidates."""

    sigma_x: float
    sigma_y: float
    sigma_s: float
    n_samples: int

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_s) < 0:
            raise ValueError("sampling sigmas must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def vor(a: BoundingBox, b: BoundingBox) -> float:
    """Overlap ratio: intersection area over union area, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between the box centers, in pixels."""
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def state_to_box(state: TargetState, base_w: float, base_h: float) -> BoundingBox:
    """Box spanned by a state: center +/- scale * base size / 2."""
    w = state.scale * base_w
    h = state.scale * base_h
    return BoundingBox(state.cx - w / 2.0, state.cy - h / 2.0, w, h)


def box_intersects_image(box: BoundingBox, height: int, width: int) -> bool:
    return box.x < width and box.x + box.w > 0 and box.y < height and box.y + box.h > 0


def geometry_distance(
    cand: TargetState,
    ref: TargetState,
    ref_box_w: float,
    ref_box_h: float,
    tau: float = 5.0,
) -> float:
    """Translation-plus-scale distance used to prune target proposals.

    2-norm of ``[(cx_ref-cx_cand)/(w(s_ref+s_cand)),
    (cy_ref-cy_cand)/(h(s_ref+s_cand)), tau(s_ref-s_cand)/(s_ref+s_cand)]``
    where ``w, h`` are the reference box dimensions.  ``tau`` weights the
    influence of scale.  Zero iff same center and scale.
    """
    if ref_box_w <= 0 or ref_box_h <= 0:
        raise ValueError("reference box dimensions must be positive")
    ssum = ref.scale + cand.scale
    if ssum <= 0:
        raise ValueError("scale sum must be positive")
    tx = (ref.cx - cand.cx) / (ref_box_w * ssum)
    ty = (ref.cy - cand.cy) / (ref_box_h * ssum)
    ts = tau * (ref.scale - cand.scale) / ssum
    return math.sqrt(tx * tx + ty * ty + ts * ts)


def geometry_distance_batch(
    cxs: np.ndarray,
    cys: np.ndarray,
    scales: np.ndarray,
    ref: TargetState,
    ref_box_w: float,
    ref_box_h: float,
    tau: float = 5.0,
) -> np.ndarray:
    """Vectorized :func:`geometry_distance` over candidate arrays."""
    if ref_box_w <= 0 or ref_box_h <= 0:
        raise ValueError("reference box dimensions must be positive")
    ssum = ref.scale + np.asarray(scales, dtype=float)
    if np.any(ssum <= 0):
        raise ValueError("scale sum must be positive")
    tx = (ref.cx - np.asarray(cxs, dtype=float)) / (ref_box_w * ssum)
    ty = (ref.cy - np.asarray(cys, dtype=float)) / (ref_box_h * ssum)
    ts = tau * (ref.scale - scales) / ssum
    return np.sqrt(tx * tx + ty * ty + ts * ts)


def sample_candidates(prev: TargetState, params: SamplingParams, rng_seed) -> list[TargetState]:
    """Draw candidate states from a diagonal Gaussian centered at ``prev``.

    Scale draws are clamped to ``[0.5, 2] * prev.scale`` so crops stay
    non-degenerate.  Deterministic given the seed; with all sigmas zero the
    result is ``n_samples`` copies of ``prev``.
    """
    rng = np.random.default_rng(rng_seed)
    n = params.n_samples
    cx = prev.cx + rng.normal(0.0, params.sigma_x, n)
    cy = prev.cy + rng.normal(0.0, params.sigma_y, n)
    s = prev.scale + rng.normal(0.0, params.sigma_s, n)
    s = np.clip(s, SCALE_CLAMP[0] * prev.scale, SCALE_CLAMP[1] * prev.scale)
    return [
        TargetState(float(cx[k]), float(cy[k]), float(s[k]), prev.frame_index)
        for k in range(n)
    ]


def _sample_axis(starts: np.ndarray, extents: np.ndarray, out_size: int, limit: int):
    """Source coordinates, floor indices and blend weights for one axis."""
    u = (np.arange(out_size, dtype=float) + 0.5) / out_size
    src = starts[:, None] + u[None, :] * extents[:, None] - 0.5
    src = np.clip(src, 0.0, limit - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i0 = np.minimum(i0, limit - 1)
    i1 = np.minimum(i0 + 1, limit - 1)
    t = src - i0
    return i0, i1, t


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a whole ``(H, W[, C])`` raster."""
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    y0, y1, ty = _sample_axis(np.zeros(1), np.array([float(h)]), out_h, h)
    x0, x1, tx = _sample_axis(np.zeros(1), np.array([float(w)]), out_w, w)
    out = _gather_blend(img, y0, y1, ty, x0, x1, tx)[0]
    return out[..., 0] if squeeze else out


def _gather_blend(img, y0, y1, ty, x0, x1, tx):
    # img: (H, W, C); index arrays: (K, out) each; returns (K, out, out, C).
    # flat gathers are markedly faster than broadcast multi-axis indexing
    h, w, c = img.shape
    flat = img.reshape(-1, c)
    row0 = y0[:, :, None] * w
    row1 = y1[:, :, None] * w
    col0 = x0[:, None, :]
    col1 = x1[:, None, :]
    v00 = flat.take(row0 + col0, axis=0)
    v01 = flat.take(row0 + col1, axis=0)
    v10 = flat.take(row1 + col0, axis=0)
    v11 = flat.take(row1 + col1, axis=0)
    tx_ = tx.astype(img.dtype)[:, None, :, None]
    ty_ = ty.astype(img.dtype)[:, :, None, None]
    top = v00 * (1.0 - tx_) + v01 * tx_
    bot = v10 * (1.0 - tx_) + v11 * tx_
    return top * (1.0 - ty_) + bot * ty_


def crop_normalize_batch(
    image: np.ndarray,
    boxes: np.ndarray,
    out_size: int = 36,
    dtype=np.float64,
) -> np.ndarray:
    """Crop ``(x, y, w, h)`` boxes and resample each to a fixed square.

    Out-of-frame samples replicate the nearest border pixel.  Raises
    ``ValueError`` if any box has no intersection with the image.  ``dtype``
    selects the working precision of the resample.
    """
    img = np.asarray(image, dtype=dtype)
    if img.ndim == 2:
        img = img[..., None]
    h, w = img.shape[:2]
    boxes = np.atleast_2d(np.asarray(boxes, dtype=float))
    x, y, bw, bh = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    outside = (x >= w) | (x + bw <= 0) | (y >= h) | (y + bh <= 0)
    if np.any(outside):
        raise ValueError(
            f"box {int(np.nonzero(outside)[0][0])} has no intersection with the image"
        )
    y0, y1, ty = _sample_axis(y, bh, out_size, h)
    x0, x1, tx = _sample_axis(x, bw, out_size, w)
    return _gather_blend(img, y0, y1, ty, x0, x1, tx)


def crop_normalize(
    image: np.ndarray,
    state: TargetState,
    base_w: float,
    base_h: float,
    out_size: int = 36,
) -> np.ndarray:
    """Crop the state's box and resample to ``out_size x out_size``."""
    box = state_to_box(state, base_w, base_h)
    out = crop_normalize_batch(image, np.array([box.as_tuple()]), out_size)[0]
    return out
