"""Dataset manifests, content-disjoint splits, and image loading.

A manifest is a small CSV (see `load_manifest`) listing image paths and
their mean opinion scores. Images are decoded to planar YUV (BT.601
full-range, 4:4:4) so every later stage can treat the three channels
uniformly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadFractions,
    DecodeFailure,
    DegenerateSplit,
    DuplicatePath,
    MalformedRow,
    MissingFile,
    MosOutOfDeclaredRange,
    UnsupportedBitDepth,
)


class Scenario(str, Enum):
    SYNTHETIC = "Synthetic"
    AUTHENTIC = "Authentic"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    UNASSIGNED = "unassigned"


# BT.601 full-range RGB -> YUV. Chroma rows are scaled so U = 0.5(B-Y)/0.886
# and V = 0.5(R-Y)/0.701; neutral chroma sits at 0 (no +128 offset).
YUV_FROM_RGB = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.5 * 0.299 / 0.886, -0.5 * 0.587 / 0.886, 0.5],
        [0.5, -0.5 * 0.587 / 0.701, -0.5 * 0.114 / 0.701],
    ],
    dtype=np.float64,
)

RGB_FROM_YUV = np.linalg.inv(YUV_FROM_RGB)


@dataclass
class YuvImage:
    """Planar luma/chroma raster; all three planes share one shape."""

    y_plane: np.ndarray
    u_plane: np.ndarray
    v_plane: np.ndarray

    @property
    def height(self) -> int:
        return self.y_plane.shape[0]

    @property
    def width(self) -> int:
        return self.y_plane.shape[1]

    def planes(self):
        return (self.y_plane, self.u_plane, self.v_plane)

    def validate(self):
        shape = self.y_plane.shape
        if self.u_plane.shape != shape or self.v_plane.shape != shape:
            raise ValueError("YUV planes must share one shape")
        for p in self.planes():
            if not np.all(np.isfinite(p)):
                raise ValueError("YUV plane contains non-finite samples")


@dataclass
class ManifestEntry:
    image_path: str
    mos: float
    reference_id: str = ""
    split: Split = Split.UNASSIGNED
    # Not part of the CSV format; populated by generators (e.g. the toy
    # dataset) so evaluation can break results down by distortion family.
    distortion: str = ""


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    scenario: Scenario
    mos_range: tuple[float, float]

    def validate(self):
        seen = set()
        lo, hi = self.mos_range
        for e in self.entries:
            if e.image_path in seen:
                raise DuplicatePath(f"duplicate image path: {e.image_path}")
            seen.add(e.image_path)
            if not math.isfinite(e.mos):
                raise MosOutOfDeclaredRange(f"non-finite MOS for {e.image_path}")
            if not (lo <= e.mos <= hi):
                raise MosOutOfDeclaredRange(
                    f"MOS {e.mos} outside [{lo}, {hi}] for {e.image_path}"
                )
            if self.scenario is Scenario.SYNTHETIC and not e.reference_id:
                raise MalformedRow(0, f"missing reference_id for {e.image_path}")

    def subset(self, split: Split) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split is split]

    def __len__(self) -> int:
        return len(self.entries)


HEADER = "image_path,mos,reference_id"


def _format_float(x: float) -> str:
    return repr(float(x))


def load_manifest(path) -> DatasetManifest:
    """Read a manifest CSV.

    Format: UTF-8; comment lines starting with ``#`` declare
    ``scenario=<Synthetic|Authentic>`` and ``mos_range=<lo>,<hi>``; then a
    header row exactly ``image_path,mos,reference_id`` (optionally with an
    added ``split`` column) followed by one row per image.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"manifest not found: {p}")
    scenario = None
    mos_range = None
    rows = []
    header_seen = False
    has_split_col = False
    with p.open("r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("scenario="):
                    value = body[len("scenario="):].strip()
                    try:
                        scenario = Scenario(value.capitalize())
                    except ValueError:
                        raise MalformedRow(lineno, f"unknown scenario {value!r}")
                elif body.startswith("mos_range="):
                    value = body[len("mos_range="):]
                    parts = value.split(",")
                    if len(parts) != 2:
                        raise MalformedRow(lineno, f"bad mos_range {value!r}")
                    try:
                        mos_range = (float(parts[0]), float(parts[1]))
                    except ValueError:
                        raise MalformedRow(lineno, f"bad mos_range {value!r}")
                continue
            fields = next(csv.reader(io.StringIO(line)))
            if not header_seen:
                if fields[:3] != HEADER.split(","):
                    raise MalformedRow(lineno, f"expected header {HEADER!r}")
                if len(fields) == 4 and fields[3] == "split":
                    has_split_col = True
                elif len(fields) != 3:
                    raise MalformedRow(lineno, "unexpected extra header columns")
                header_seen = True
                continue
            expected = 4 if has_split_col else 3
            if len(fields) != expected:
                raise MalformedRow(lineno, f"expected {expected} fields, got {len(fields)}")
            image_path, mos_text, reference_id = fields[0], fields[1], fields[2]
            if not image_path:
                raise MalformedRow(lineno, "empty image_path")
            try:
                mos = float(mos_text)
            except ValueError:
                raise MalformedRow(lineno, f"bad MOS {mos_text!r}")
            if not math.isfinite(mos):
                raise MalformedRow(lineno, f"non-finite MOS {mos_text!r}")
            split = Split.UNASSIGNED
            if has_split_col and fields[3]:
                try:
                    split = Split(fields[3])
                except ValueError:
                    raise MalformedRow(lineno, f"unknown split {fields[3]!r}")
            if scenario is Scenario.SYNTHETIC and not reference_id:
                raise MalformedRow(lineno, f"missing reference_id for {image_path}")
            rows.append(ManifestEntry(image_path, mos, reference_id, split))
    if scenario is None:
        raise MalformedRow(0, "missing '# scenario=' declaration")
    if mos_range is None:
        raise MalformedRow(0, "missing '# mos_range=' declaration")
    if not header_seen:
        raise MalformedRow(0, f"missing header row {HEADER!r}")
    manifest = DatasetManifest(rows, scenario, mos_range)
    manifest.validate()
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest in the canonical form that `load_manifest` reads back."""
    manifest.validate()
    lo, hi = manifest.mos_range
    with_split = any(e.split is not Split.UNASSIGNED for e in manifest.entries)
    out = io.StringIO()
    out.write(f"# scenario={manifest.scenario.value}\n")
    out.write(f"# mos_range={_format_float(lo)},{_format_float(hi)}\n")
    writer = csv.writer(out, lineterminator="\n")
    header = HEADER.split(",") + (["split"] if with_split else [])
    writer.writerow(header)
    for e in manifest.entries:
        row = [e.image_path, _format_float(e.mos), e.reference_id]
        if with_split:
            row.append("" if e.split is Split.UNASSIGNED else e.split.value)
        writer.writerow(row)
    Path(path).write_text(out.getvalue(), encoding="utf-8")


def _allot_counts(n_units: int, fractions) -> list[int]:
    """Largest-remainder apportionment of n_units over the three fractions."""
    ideal = [f * n_units for f in fractions]
    counts = [int(math.floor(x)) for x in ideal]
    remainders = [x - c for x, c in zip(ideal, counts)]
    leftover = n_units - sum(counts)
    for _ in range(leftover):
        best = max(range(3), key=lambda i: (remainders[i], -i))
        counts[best] += 1
        remainders[best] = -1.0
    return counts


def split_manifest(manifest: DatasetManifest, seed: int, fractions) -> DatasetManifest:
    """Assign train/val/test splits.

    For synthetic scenarios whole reference groups move together so no
    content appears in two splits. Assignment is a pure function of
    (seed, manifest contents).
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise BadFractions(f"fractions must be three non-negative reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must sum to 1, got sum {sum(fractions)}")

    if manifest.scenario is Scenario.SYNTHETIC:
        units: list[str] = []
        seen = set()
        for e in manifest.entries:
            if e.reference_id not in seen:
                seen.add(e.reference_id)
                units.append(e.reference_id)
    else:
        units = list(range(len(manifest.entries)))

    counts = _allot_counts(len(units), fractions)
    for frac, count, name in zip(fractions, counts, ("train", "val", "test")):
        if frac > 0 and count == 0:
            raise DegenerateSplit(f"{name} split would be empty ({len(units)} units)")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    unit_split = {}
    cursor = 0
    for count, split in zip(counts, (Split.TRAIN, Split.VAL, Split.TEST)):
        for k in order[cursor:cursor + count]:
            unit_split[units[k]] = split
        cursor += count

    entries = []
    for i, e in enumerate(manifest.entries):
        key = e.reference_id if manifest.scenario is Scenario.SYNTHETIC else i
        entries.append(replace(e, split=unit_split[key]))
    return DatasetManifest(entries, manifest.scenario, manifest.mos_range)


def rgb_to_yuv(rgb: np.ndarray) -> YuvImage:
    """Convert an (h, w, 3) real RGB array to planar YUV."""
    planes = np.tensordot(rgb.astype(np.float64), YUV_FROM_RGB, axes=([2], [1]))
    return YuvImage(
        np.ascontiguousarray(planes[:, :, 0]),
        np.ascontiguousarray(planes[:, :, 1]),
        np.ascontiguousarray(planes[:, :, 2]),
    )


def yuv_to_rgb(img: YuvImage) -> np.ndarray:
    """Invert `rgb_to_yuv` in real arithmetic (no quantization)."""
    stacked = np.stack(img.planes(), axis=-1)
    return np.tensordot(stacked, RGB_FROM_YUV, axes=([2], [1]))


_HIGH_DEPTH_MODES = {"I", "I;16", "I;16B", "I;16L", "I;16N", "F", "RGB;16"}


def load_image(path) -> YuvImage:
    """Decode an 8-bit raster image (PNG/BMP/JPEG) to planar YUV.

    Grayscale maps to the Y plane with zeroed chroma.
    """
    p = Path(path)
    try:
        with Image.open(p) as im:
            if im.mode in _HIGH_DEPTH_MODES:
                raise UnsupportedBitDepth(f"{p}: mode {im.mode} is not 8-bit")
            if im.mode == "L":
                gray = np.asarray(im, dtype=np.float64)
                zero = np.zeros_like(gray)
                return YuvImage(gray, zero, zero.copy())
            if im.mode != "RGB":
                im = im.convert("RGB")
            rgb = np.asarray(im, dtype=np.float64)
    except UnsupportedBitDepth:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode {p}: {exc}") from exc
    return rgb_to_yuv(rgb)
