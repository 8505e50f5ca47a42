"""Procedural toy dataset: distorted renders with known quality ordering.

Base images mix gradients, sinusoidal plaids, and smoothed noise so every
96x96 tile has usable AC energy. Each base image is written pristine
(MOS 5.0) plus once per (distortion, level) with MOS falling linearly in
level, which gives a clean monotone target for end-to-end checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .dataset import DatasetManifest, ManifestEntry, Scenario, save_manifest
from .errors import IoError
from .features import BLOCK, DCT8

DISTORTIONS = ("gaussian_blur", "white_noise", "jpeg_quantization", "contrast_shift")

# Standard JPEG luminance quantization table (quality 50 baseline).
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass
class ToyDatasetSpec:
    n_references: int = 10
    distortion_types: tuple = DISTORTIONS
    levels: int = 5
    image_side: int = 288
    seed: int = 0

    def __post_init__(self):
        if self.n_references < 1:
            raise ValueError("n_references must be >= 1")
        if self.levels < 2:
            raise ValueError("levels must be >= 2 for a usable MOS spread")
        unknown = set(self.distortion_types) - set(DISTORTIONS)
        if unknown:
            raise ValueError(f"unknown distortion types: {sorted(unknown)}")
        if self.image_side < BLOCK:
            raise ValueError(f"image_side must be >= {BLOCK}")

    @property
    def images_per_reference(self) -> int:
        return 1 + len(self.distortion_types) * self.levels

    @property
    def total_images(self) -> int:
        return self.n_references * self.images_per_reference


def mos_for_level(level: int, levels: int) -> float:
    """Linear severity-to-score map: level 1 -> 5.0, level `levels` -> 1.0."""
    return 5.0 - 4.0 * (level - 1) / (levels - 1)


def render_reference(index: int, side: int, seed: int) -> np.ndarray:
    """One base image as (side, side, 3) float RGB in [0, 255]."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    theta = rng.uniform(0, 2 * np.pi)
    img = 0.5 + 0.35 * (np.cos(theta) * xx + np.sin(theta) * yy - 0.5)
    for _ in range(3):
        freq = rng.uniform(4.0, 24.0)
        phi = rng.uniform(0, 2 * np.pi)
        ang = rng.uniform(0, np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phi)
        img = img + rng.uniform(0.06, 0.16) * wave
    noise = rng.standard_normal((side, side))
    sm = ndimage.gaussian_filter(noise, sigma=1.5, mode="reflect")
    img = img + 0.10 * sm / max(sm.std(), 1e-12)
    img = (img - img.min()) / max(img.max() - img.min(), 1e-12)
    tint = rng.uniform(0.75, 1.0, size=3)
    offset = rng.uniform(0.0, 0.12, size=3)
    rgb = img[:, :, None] * tint[None, None, :] + offset[None, None, :]
    return np.clip(rgb, 0.0, 1.0) * 255.0


def apply_gaussian_blur(rgb: np.ndarray, level: int, levels: int) -> np.ndarray:
    sigma = 0.8 * level
    out = np.empty_like(rgb)
    for c in range(3):
        out[:, :, c] = ndimage.gaussian_filter(rgb[:, :, c], sigma, mode="reflect")
    return out


def apply_white_noise(rgb: np.ndarray, level: int, levels: int,
                      rng: np.random.Generator) -> np.ndarray:
    sigma = 6.0 * level
    return np.clip(rgb + rng.standard_normal(rgb.shape) * sigma, 0.0, 255.0)


def apply_jpeg_quantization(rgb: np.ndarray, level: int, levels: int) -> np.ndarray:
    """Quantize 8x8 DCT coefficients with the luma table scaled by level."""
    h, w = rgb.shape[:2]
    hc, wc = (h // BLOCK) * BLOCK, (w // BLOCK) * BLOCK
    out = rgb.copy()
    table = JPEG_LUMA_TABLE * level
    for c in range(3):
        plane = rgb[:hc, :wc, c] - 128.0
        blocks = plane.reshape(hc // BLOCK, BLOCK, wc // BLOCK, BLOCK)
        blocks = blocks.transpose(0, 2, 1, 3)
        coeffs = np.einsum("ij,rcjk,lk->rcil", DCT8, blocks, DCT8, optimize=True)
        # the orthonormal DCT is 1/8 of the JPEG integer transform scale
        quant = np.round(coeffs * 8.0 / table) * table / 8.0
        rec = np.einsum("ji,rcjk,kl->rcil", DCT8, quant, DCT8, optimize=True)
        out[:hc, :wc, c] = rec.transpose(0, 2, 1, 3).reshape(hc, wc) + 128.0
    return np.clip(out, 0.0, 255.0)


def apply_contrast_shift(rgb: np.ndarray, level: int, levels: int) -> np.ndarray:
    factor = 0.82 ** level
    mean = rgb.mean(axis=(0, 1), keepdims=True)
    return np.clip(mean + (rgb - mean) * factor, 0.0, 255.0)


def distort(rgb: np.ndarray, name: str, level: int, levels: int,
            rng: np.random.Generator) -> np.ndarray:
    if name == "gaussian_blur":
        return apply_gaussian_blur(rgb, level, levels)
    if name == "white_noise":
        return apply_white_noise(rgb, level, levels, rng)
    if name == "jpeg_quantization":
        return apply_jpeg_quantization(rgb, level, levels)
    if name == "contrast_shift":
        return apply_contrast_shift(rgb, level, levels)
    raise ValueError(f"unknown distortion {name!r}")


def _write_png(rgb: np.ndarray, path: Path) -> None:
    arr = np.clip(np.round(rgb), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def gen_toy(spec: ToyDatasetSpec, out_dir) -> DatasetManifest:
    """Render the dataset under out_dir/images plus out_dir/manifest.csv.

    Image paths in the manifest are relative to out_dir.
    """
    out = Path(out_dir)
    img_dir = out / "images"
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {img_dir}: {exc}") from exc
    entries = []
    for r in range(spec.n_references):
        ref_id = f"ref{r:03d}"
        base = render_reference(r, spec.image_side, spec.seed)
        name = f"{ref_id}_pristine.png"
        _write_png(base, img_dir / name)
        entries.append(ManifestEntry(f"images/{name}", 5.0, ref_id,
                                     distortion="pristine"))
        for dist in spec.distortion_types:
            for level in range(1, spec.levels + 1):
                rng = np.random.default_rng(
                    np.random.SeedSequence([spec.seed, r, DISTORTIONS.index(dist), level]))
                degraded = distort(base, dist, level, spec.levels, rng)
                name = f"{ref_id}_{dist}_l{level}.png"
                _write_png(degraded, img_dir / name)
                entries.append(ManifestEntry(
                    f"images/{name}", mos_for_level(level, spec.levels),
                    ref_id, distortion=dist))
    manifest = DatasetManifest(entries, Scenario.SYNTHETIC, (1.0, 5.0))
    manifest.validate()
    try:
        save_manifest(manifest, out / "manifest.csv")
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return manifest
