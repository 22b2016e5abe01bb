"""Sequence I/O in the OTB directory layout plus a synthetic generator.

A sequence directory holds ``img/`` with numbered PNG/JPEG frames and
``groundtruth_rect.txt`` with one ``x,y,w,h`` line per frame (1-based pixel
coordinates, comma/tab/space separated).  Boxes are converted to 0-based
coordinates on load.  The synthetic generator renders a textured target over
a cluttered background with exact groundtruth for desk-scale evaluation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, bilinear_resize

__all__ = [
    "SequenceBundle",
    "SequenceFormatError",
    "load_sequence",
    "write_sequence",
    "SynthSpec",
    "synth_sequence",
]

_IMG_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class SequenceFormatError(ValueError):
    """Malformed sequence directory or groundtruth file."""


@dataclass
class SequenceBundle:
    """Ordered frames with per-frame groundtruth boxes."""

    name: str
    groundtruth: list[BoundingBox]
    frame_paths: list[Path] | None = None
    images: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.groundtruth) < 2:
            raise SequenceFormatError("a sequence needs at least 2 frames")
        n_frames = len(self.frame_paths) if self.frame_paths is not None else len(self.images)
        if n_frames != len(self.groundtruth):
            raise SequenceFormatError(
                f"{n_frames} frames but {len(self.groundtruth)} groundtruth boxes"
            )

    def __len__(self) -> int:
        return len(self.groundtruth)

    def frame(self, index: int) -> np.ndarray:
        """Decode (or fetch) frame ``index`` as an (H, W, 3) uint8 array."""
        if self.images is not None:
            return self.images[index]
        from PIL import Image

        with Image.open(self.frame_paths[index]) as img:
            return np.asarray(img.convert("RGB"))

    def iter_frames(self):
        for k in range(len(self)):
            yield self.frame(k)


def _parse_groundtruth(path: Path) -> list[BoundingBox]:
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = re.split(r"[,\t ]+", line.strip())
        if len(parts) != 4:
            raise SequenceFormatError(
                f"{path}: line {lineno}: expected 4 fields, got {len(parts)}"
            )
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError as exc:
            raise SequenceFormatError(f"{path}: line {lineno}: {exc}") from None
        try:
            boxes.append(BoundingBox(x - 1.0, y - 1.0, w, h))
        except ValueError as exc:
            raise SequenceFormatError(f"{path}: line {lineno}: {exc}") from None
    return boxes


def load_sequence(seq_dir) -> SequenceBundle:
    """Read an OTB-layout sequence directory.

    Frames are the numerically sorted images under ``img/``; their count
    must match the groundtruth line count.
    """
    seq_dir = Path(seq_dir)
    img_dir = seq_dir / "img"
    gt_path = seq_dir / "groundtruth_rect.txt"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing image directory: {img_dir}")
    if not gt_path.is_file():
        raise FileNotFoundError(f"missing groundtruth file: {gt_path}")

    def frame_key(p: Path):
        digits = re.findall(r"\d+", p.stem)
        return (int(digits[-1]) if digits else 0, p.name)

    frames = sorted(
        (p for p in img_dir.iterdir() if p.suffix.lower() in _IMG_SUFFIXES),
        key=frame_key,
    )
    boxes = _parse_groundtruth(gt_path)
    if len(frames) != len(boxes):
        raise SequenceFormatError(
            f"{seq_dir}: {len(frames)} frames but {len(boxes)} groundtruth lines"
        )
    return SequenceBundle(name=seq_dir.name, groundtruth=boxes, frame_paths=frames)


def write_sequence(bundle: SequenceBundle, out_dir) -> Path:
    """Write a bundle to disk in the OTB layout (PNG frames, 1-based boxes)."""
    from PIL import Image

    out_dir = Path(out_dir)
    img_dir = out_dir / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for k in range(len(bundle)):
        Image.fromarray(bundle.frame(k)).save(img_dir / f"{k + 1:04d}.png")
    lines = [
        f"{box.x + 1:.2f},{box.y + 1:.2f},{box.w:.2f},{box.h:.2f}"
        for box in bundle.groundtruth
    ]
    (out_dir / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return out_dir


@dataclass
class SynthSpec:
    """Parameters of a rendered test sequence with exact groundtruth."""

    width: int = 320
    height: int = 240
    n_frames: int = 60
    target_w: int = 40
    target_h: int = 40
    start_x: int = 60
    start_y: int = 60
    velocity_x: float = 2.0
    velocity_y: float = 0.0
    scale_amplitude: float = 0.0
    scale_period: float = 40.0
    deformation_amplitude: float = 0.0
    occlusion_windows: list[tuple[int, int, float]] = field(default_factory=list)
    illumination_amplitude: float = 0.0
    illumination_period: float = 50.0
    clutter: float = 0.5
    noise: float = 4.0
    n_distractors: int = 0
    distractor_noise: float = 30.0
    seed: int = 0
    name: str = "synthetic"


def _smooth_noise(rng, h, w, cells, lo, hi):
    coarse = rng.uniform(lo, hi, size=(cells, cells, 3))
    return bilinear_resize(coarse, h, w)


def _make_texture(rng, h, w):
    # saturated color cells plus fine detail, wrapped in a contrasting border
    # band that gives the object a silhouette; without one, interior crops
    # are statistically identical to the whole target and scale is
    # unobservable
    cells = rng.uniform(0, 255, size=(max(h // 4, 2), max(w // 4, 2), 3))
    tex = bilinear_resize(cells, h, w)
    tex += rng.uniform(-25, 25, size=tex.shape)
    border = max(min(h, w) // 10, 2)
    ring = rng.uniform(180, 255, size=3)
    tex[:border, :] = ring
    tex[-border:, :] = ring
    tex[:, :border] = ring
    tex[:, -border:] = ring
    return np.clip(tex, 0, 255)


def synth_sequence(spec: SynthSpec) -> SequenceBundle:
    """Render a moving textured rectangle over clutter, with exact truth.

    Motion bounces off the frame borders so the target never leaves the
    image; occlusion windows paste an occluder sprite covering the requested
    fraction of the target area; illumination drift scales global
    brightness.  Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    background = _smooth_noise(rng, h, w, 12, 40, 215) * spec.clutter + 127.0 * (
        1.0 - spec.clutter
    )
    texture = _make_texture(rng, spec.target_h, spec.target_w)
    occ_texture = _smooth_noise(rng, spec.target_h, spec.target_w, 3, 90, 130)

    # static look-alikes painted into the background: perturbed copies of the
    # target texture, kept away from the target's start so the first frame is
    # unambiguous
    for _ in range(spec.n_distractors):
        for _attempt in range(50):
            dx = int(rng.integers(0, max(w - spec.target_w, 1)))
            dy = int(rng.integers(0, max(h - spec.target_h, 1)))
            if abs(dx - spec.start_x) > 2 * spec.target_w or abs(
                dy - spec.start_y
            ) > 2 * spec.target_h:
                break
        fake = np.clip(
            texture + rng.normal(0, spec.distractor_noise, texture.shape), 0, 255
        )
        background[dy : dy + spec.target_h, dx : dx + spec.target_w] = fake

    images: list[np.ndarray] = []
    boxes: list[BoundingBox] = []
    x, y = float(spec.start_x), float(spec.start_y)
    vx, vy = spec.velocity_x, spec.velocity_y

    for t in range(spec.n_frames):
        scale = 1.0 + spec.scale_amplitude * math.sin(2 * math.pi * t / spec.scale_period)
        tw = max(int(round(spec.target_w * scale)), 4)
        th = max(int(round(spec.target_h * scale)), 4)

        # bounce to keep the full target inside the frame
        if x < 0 or x + tw > w:
            vx = -vx
            x = min(max(x, 0.0), float(w - tw))
        if y < 0 or y + th > h:
            vy = -vy
            y = min(max(y, 0.0), float(h - th))
        xi, yi = int(round(x)), int(round(y))
        xi = min(max(xi, 0), w - tw)
        yi = min(max(yi, 0), h - th)

        frame = background.copy()
        tex = texture
        if spec.deformation_amplitude > 0:
            tex = np.clip(
                texture + rng.normal(0, spec.deformation_amplitude, texture.shape),
                0,
                255,
            )
        frame[yi : yi + th, xi : xi + tw] = bilinear_resize(tex, th, tw)

        for start, end, coverage in spec.occlusion_windows:
            if start <= t < end:
                ow = tw
                oh = max(int(math.ceil(coverage * th)), 1)
                occ = bilinear_resize(occ_texture, oh, ow)
                frame[yi : yi + oh, xi : xi + ow] = occ

        if spec.illumination_amplitude > 0:
            gain = 1.0 + spec.illumination_amplitude * math.sin(
                2 * math.pi * t / spec.illumination_period
            )
            frame = frame * gain
        if spec.noise > 0:
            frame = frame + rng.normal(0, spec.noise, frame.shape)

        images.append(np.clip(frame, 0, 255).astype(np.uint8))
        boxes.append(BoundingBox(float(xi), float(yi), float(tw), float(th)))
        x += vx
        y += vy

    return SequenceBundle(name=spec.name, groundtruth=boxes, images=images)
