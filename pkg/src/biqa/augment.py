"""Fixed-count subimage generation.

Authentic-distortion images yield a few large square crops (left/center/
right, optionally mirrored) resampled to a common side; synthetic-
distortion images yield many small tiles ranked by high-frequency energy.
Every subimage inherits the source image's MOS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .dataset import Scenario, YuvImage
from .errors import ImageTooSmall
from . import features


@dataclass
class AugmentConfig:
    scenario: Scenario
    patch_size: int = 96        # synthetic tile side
    patch_count: int = 25       # synthetic tiles kept per image
    crop_count: int = 3         # authentic base crops per image
    use_flips: bool = True      # authentic: add the horizontal mirror of each crop
    target_side: int = 384      # authentic crops are resampled to this side

    def __post_init__(self):
        # Sides must be divisible by 8 (block DCT) and by 24 so the DC map
        # partitions into whole 3x3 blocks in the second hop.
        if self.patch_size <= 0 or self.patch_size % 24 != 0:
            raise ValueError(f"patch_size must be a positive multiple of 24, got {self.patch_size}")
        if self.target_side <= 0 or self.target_side % 24 != 0:
            raise ValueError(f"target_side must be a positive multiple of 24, got {self.target_side}")
        if self.patch_count < 1 or self.crop_count < 1:
            raise ValueError("patch_count and crop_count must be >= 1")

    @property
    def subimage_side(self) -> int:
        return self.patch_size if self.scenario is Scenario.SYNTHETIC else self.target_side

    @property
    def subimages_per_image(self) -> int:
        if self.scenario is Scenario.SYNTHETIC:
            return self.patch_count
        return self.crop_count * (2 if self.use_flips else 1)


@dataclass
class Subimage:
    pixels: YuvImage
    source_index: int = 0
    mos: float = 0.0
    flip: bool = False


def _resize_plane(plane: np.ndarray, side: int) -> np.ndarray:
    if plane.shape == (side, side):
        return plane.copy()
    im = Image.fromarray(plane.astype(np.float32), mode="F")
    out = im.resize((side, side), Image.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def _resize(img: YuvImage, side: int) -> YuvImage:
    return YuvImage(*(_resize_plane(p, side) for p in img.planes()))


def _mirror(img: YuvImage) -> YuvImage:
    return YuvImage(*(np.fliplr(p).copy() for p in img.planes()))


def crop_authentic(img: YuvImage, cfg: AugmentConfig,
                   source_index: int = 0, mos: float = 0.0) -> list[Subimage]:
    """Square crops along the long axis, resampled to ``cfg.target_side``.

    Landscape images are cropped at the left edge, center, and right edge
    (uniformly spaced anchors for other crop counts); portrait images use
    the symmetric top/center/bottom rule. With ``use_flips`` each crop also
    yields its horizontal mirror, appended after the base crops.
    """
    h, w = img.height, img.width
    side = min(h, w)
    if side < 8:
        raise ImageTooSmall(f"image {w}x{h} is too small to crop")
    span = max(h, w) - side
    k = cfg.crop_count
    if k == 1:
        offsets = [span // 2]
    else:
        offsets = [(i * span) // (k - 1) for i in range(k)]

    base = []
    for off in offsets:
        if h <= w:
            crop = YuvImage(*(p[:, off:off + side].copy() for p in img.planes()))
        else:
            crop = YuvImage(*(p[off:off + side, :].copy() for p in img.planes()))
        base.append(crop)

    subs = [Subimage(_resize(c, cfg.target_side), source_index, mos, flip=False)
            for c in base]
    if cfg.use_flips:
        # mirror the raw crop, then resample, so a flipped subimage is exactly
        # the resample of the column-reversed source crop
        subs.extend(
            Subimage(_resize(_mirror(c), cfg.target_side), source_index, mos, flip=True)
            for c in base)
    return subs


def crop_synthetic(img: YuvImage, cfg: AugmentConfig,
                   source_index: int = 0, mos: float = 0.0) -> list[Subimage]:
    """Non-overlapping tiles ranked by luma AC energy, highest first.

    The image is tiled into ``patch_size`` squares (right/bottom remainders
    dropped); each tile is scored by the summed absolute AC coefficients of
    its 8x8 DCT blocks on the Y channel, and the top ``patch_count`` tiles
    are kept. Ties keep raster order.
    """
    p = cfg.patch_size
    h, w = img.height, img.width
    if h < p or w < p:
        raise ImageTooSmall(f"image {w}x{h} is smaller than patch size {p}")
    rows, cols = h // p, w // p
    tiles = []
    scores = np.empty(rows * cols)
    for r in range(rows):
        for c in range(cols):
            ys = slice(r * p, (r + 1) * p)
            xs = slice(c * p, (c + 1) * p)
            tile = YuvImage(*(pl[ys, xs].copy() for pl in img.planes()))
            scores[len(tiles)] = features.ac_energy(tile.y_plane)
            tiles.append(tile)
    keep = min(cfg.patch_count, len(tiles))
    order = np.argsort(-scores, kind="stable")[:keep]
    return [Subimage(tiles[i], source_index, mos, flip=False) for i in order]


def augment_image(img: YuvImage, cfg: AugmentConfig,
                  source_index: int = 0, mos: float = 0.0) -> list[Subimage]:
    if cfg.scenario is Scenario.SYNTHETIC:
        return crop_synthetic(img, cfg, source_index, mos)
    return crop_authentic(img, cfg, source_index, mos)
