"""End-to-end orchestration and model serialization.

`train` wires the stages together: augment the training images, fit the
unsupervised transforms on training subimages only, extract features, rank
and select columns against subimage MOS, then boost trees with early
stopping on the validation split. The sealed model carries everything
needed to score a new image.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import features as features_mod
from . import gbdt as gbdt_mod
from . import rft as rft_mod
from .dataset import DatasetManifest, Scenario, Split, YuvImage, load_image
from .errors import CorruptModel, InsufficientData, IoError, VersionMismatch
from .timing import null_timer

FORMAT_VERSION = 1
MAGIC = b"GBIQ"

# Default selected-feature budgets. The authentic budget is a single total
# over all channels; the synthetic budget is per channel. Both clamp to the
# number of available columns.
AUTHENTIC_TOTAL = 2500
SYNTHETIC_PER_CHANNEL = 600

DEFAULT_FRACTIONS = (0.72, 0.08, 0.20)


@dataclass
class TrainConfig:
    scenario: Scenario
    augment_cfg: augment_mod.AugmentConfig | None = None
    rft_bins: int = rft_mod.DEFAULT_BINS
    select_total: int | None = None
    select_per_channel: dict | None = None
    select_elbow: bool = False
    gbdt: gbdt_mod.GbdtConfig = field(default_factory=gbdt_mod.GbdtConfig)
    pooling_window: int = 2
    spectral_region: int = 2

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        if self.augment_cfg is None:
            self.augment_cfg = augment_mod.AugmentConfig(self.scenario)
        if (self.select_total is None and self.select_per_channel is None
                and not self.select_elbow):
            if self.scenario is Scenario.AUTHENTIC:
                self.select_total = AUTHENTIC_TOTAL
            else:
                self.select_per_channel = {
                    ch: SYNTHETIC_PER_CHANNEL for ch in features_mod.CHANNELS}


@dataclass
class Provenance:
    seed: int = 0
    manifest_digest: bytes = b"\x00" * 32
    timestamp: float = 0.0  # fixed by default so same-seed builds are byte-equal


@dataclass
class QualityModel:
    augment_cfg: augment_mod.AugmentConfig
    feature_params: features_mod.FeaturePipelineParams
    ranking: rft_mod.RftRanking
    gbdt: gbdt_mod.GbdtModel
    provenance: Provenance = field(default_factory=Provenance)
    format_version: int = FORMAT_VERSION

    @property
    def selected(self) -> np.ndarray:
        return self.ranking.selected


def manifest_digest(manifest: DatasetManifest) -> bytes:
    """Digest of the rows a training run can see (train and val only)."""
    h = hashlib.sha256()
    h.update(manifest.scenario.value.encode())
    h.update(repr(manifest.mos_range).encode())
    for e in manifest.entries:
        if e.split in (Split.TRAIN, Split.VAL):
            h.update(f"{e.image_path}\x1f{e.mos!r}\x1f{e.reference_id}"
                     f"\x1f{e.split.value}\x1e".encode())
    return h.digest()


def _iter_subimages(entries, cfg: TrainConfig, root: Path, timer=None):
    t = timer or null_timer
    for idx, entry in enumerate(entries):
        with t.stage("decode"):
            img = load_image(root / entry.image_path)
        with t.stage("augment"):
            subs = augment_mod.augment_image(
                img, cfg.augment_cfg, source_index=idx, mos=entry.mos)
        yield from subs


def _feature_table(entries, cfg: TrainConfig, root: Path,
                   params: features_mod.FeaturePipelineParams, timer=None):
    """Per-subimage feature rows, targets, and owning image index."""
    rows, targets, owners = [], [], []
    for idx, entry in enumerate(entries):
        subs = list(_iter_subimages([entry], cfg, root, timer))
        fm = features_mod.extract_features(subs, params, timer)
        rows.append(fm.values)
        targets.extend(s.mos for s in subs)
        owners.extend([idx] * len(subs))
    values = np.concatenate(rows, axis=0) if rows else np.zeros((0, params.n_columns))
    return values, np.asarray(targets), np.asarray(owners, dtype=np.int64)


def train(manifest: DatasetManifest, cfg: TrainConfig | None = None,
          seed: int = 0, root=".") -> QualityModel:
    """Fit the full model on a split-assigned manifest."""
    cfg = cfg or TrainConfig(manifest.scenario)
    root = Path(root)
    train_entries = manifest.subset(Split.TRAIN)
    val_entries = manifest.subset(Split.VAL)
    if not train_entries:
        raise InsufficientData("no rows assigned to the train split")
    if not val_entries:
        raise InsufficientData("no rows assigned to the val split")

    params = features_mod.fit_feature_params(
        lambda: _iter_subimages(train_entries, cfg, root),
        cfg.pooling_window, cfg.spectral_region)

    x_train, y_train, _ = _feature_table(train_entries, cfg, root, params)
    x_val, y_val, _ = _feature_table(val_entries, cfg, root, params)

    ranking = rft_mod.rank_features(x_train, y_train, cfg.rft_bins,
                                    params.column_meta())
    selected = rft_mod.select_features(
        ranking, total=cfg.select_total,
        per_channel=cfg.select_per_channel, elbow=cfg.select_elbow)
    if len(selected) == 0:
        raise InsufficientData("feature selection kept zero columns")
    ranking = replace(ranking, selected=selected)
    ranking.validate()

    model_gbdt = gbdt_mod.fit(x_train[:, selected], y_train,
                              x_val[:, selected], y_val, cfg.gbdt, seed)
    prov = Provenance(seed, manifest_digest(manifest))
    return QualityModel(cfg.augment_cfg, params, ranking, model_gbdt, prov)


def predict_image(model: QualityModel, img: YuvImage, timer=None) -> float:
    """Mean of the per-subimage predictions."""
    t = timer or null_timer
    with t.stage("augment"):
        subs = augment_mod.augment_image(img, model.augment_cfg)
    fm = features_mod.extract_features(subs, model.feature_params, t)
    with t.stage("regression"):
        scores = gbdt_mod.predict(model.gbdt, fm.values[:, model.selected])
    return float(scores.mean())


def predict_path(model: QualityModel, path, timer=None) -> float:
    t = timer or null_timer
    with t.stage("decode"):
        img = load_image(path)
    return predict_image(model, img, timer)


# -- binary container ----------------------------------------------------------
#
# Layout: MAGIC, u32 format_version, five u64-length-prefixed sections
# (augment, features, rft, gbdt, provenance), u32 CRC-32 of every preceding
# byte. All integers little-endian; all reals 64-bit IEEE-754 little-endian.


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def i64(self, v):
        self.parts.append(struct.pack("<q", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", float(v)))

    def raw(self, b: bytes):
        self.parts.append(b)

    def f64_array(self, arr):
        a = np.ascontiguousarray(arr, dtype="<f8")
        self.u64(a.size)
        self.parts.append(a.tobytes())

    def i64_array(self, arr):
        a = np.ascontiguousarray(arr, dtype="<i8")
        self.u64(a.size)
        self.parts.append(a.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptModel("unexpected end of model data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self):
        return struct.unpack("<q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def f64_array(self):
        n = self.u64()
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def i64_array(self):
        n = self.u64()
        return np.frombuffer(self.take(8 * n), dtype="<i8").astype(np.int64)

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _write_augment(w: _Writer, cfg: augment_mod.AugmentConfig):
    w.u8(0 if cfg.scenario is Scenario.SYNTHETIC else 1)
    w.u32(cfg.patch_size)
    w.u32(cfg.patch_count)
    w.u32(cfg.crop_count)
    w.u8(1 if cfg.use_flips else 0)
    w.u32(cfg.target_side)


def _read_augment(r: _Reader) -> augment_mod.AugmentConfig:
    scenario = Scenario.SYNTHETIC if r.u8() == 0 else Scenario.AUTHENTIC
    patch_size = r.u32()
    patch_count = r.u32()
    crop_count = r.u32()
    use_flips = bool(r.u8())
    target_side = r.u32()
    return augment_mod.AugmentConfig(scenario, patch_size, patch_count,
                                     crop_count, use_flips, target_side)


def _write_kernel(w: _Writer, k: features_mod.SaabKernel):
    w.u32(k.dim)
    w.f64_array(k.training_mean)
    w.f64_array(k.basis.reshape(-1))
    w.f64_array(k.eigenvalues)


def _read_kernel(r: _Reader) -> features_mod.SaabKernel:
    dim = r.u32()
    mean = r.f64_array()
    basis = r.f64_array().reshape(dim - 1, dim)
    evals = r.f64_array()
    return features_mod.SaabKernel(mean, basis, evals)


def _write_features(w: _Writer, p: features_mod.FeaturePipelineParams):
    w.u32(p.pooling_window)
    w.u32(p.spectral_region)
    for ch in features_mod.CHANNELS:
        _write_kernel(w, p.hop2[ch])
    for ch in features_mod.CHANNELS:
        bank = p.spectral[ch]
        w.u32(bank.n_maps)
        w.u32(bank.dim)
        w.f64_array(bank.mean.reshape(-1))
        w.f64_array(bank.basis.reshape(-1))
        w.f64_array(bank.eigenvalues.reshape(-1))


def _read_features(r: _Reader) -> features_mod.FeaturePipelineParams:
    pooling_window = r.u32()
    spectral_region = r.u32()
    hop2 = {ch: _read_kernel(r) for ch in features_mod.CHANNELS}
    spectral = {}
    for ch in features_mod.CHANNELS:
        n_maps = r.u32()
        dim = r.u32()
        mean = r.f64_array().reshape(n_maps, dim)
        basis = r.f64_array().reshape(n_maps, dim - 1, dim)
        evals = r.f64_array().reshape(n_maps, dim - 1)
        spectral[ch] = features_mod.SpectralBank(mean, basis, evals)
    return features_mod.FeaturePipelineParams(hop2, spectral,
                                              pooling_window, spectral_region)


def _write_rft(w: _Writer, ranking: rft_mod.RftRanking):
    w.u32(ranking.bins)
    w.f64_array(ranking.costs)
    w.i64_array(ranking.order)
    w.i64_array(ranking.selected)


def _read_rft(r: _Reader, column_meta) -> rft_mod.RftRanking:
    bins = r.u32()
    costs = r.f64_array()
    order = r.i64_array()
    selected = r.i64_array()
    return rft_mod.RftRanking(costs, order, bins, column_meta, selected)


def _write_gbdt(w: _Writer, m: gbdt_mod.GbdtModel):
    w.f64(m.base_score)
    w.f64(m.learning_rate)
    w.u64(m.n_columns)
    w.u64(len(m.trees))
    for t in m.trees:
        w.i64_array(t.feature)
        w.f64_array(t.threshold)
        w.i64_array(t.left)
        w.i64_array(t.right)
        w.f64_array(t.value)


def _read_gbdt(r: _Reader) -> gbdt_mod.GbdtModel:
    base = r.f64()
    lr = r.f64()
    n_columns = r.u64()
    n_trees = r.u64()
    trees = []
    for _ in range(n_trees):
        feature = r.i64_array()
        threshold = r.f64_array()
        left = r.i64_array()
        right = r.i64_array()
        value = r.f64_array()
        trees.append(gbdt_mod.RegressionTree(feature, threshold, left, right, value))
    return gbdt_mod.GbdtModel(base, lr, trees, n_columns=n_columns)


def _write_provenance(w: _Writer, p: Provenance):
    w.i64(p.seed)
    w.u64(len(p.manifest_digest))
    w.raw(p.manifest_digest)
    w.f64(p.timestamp)


def _read_provenance(r: _Reader) -> Provenance:
    seed = r.i64()
    n = r.u64()
    digest = r.take(n)
    ts = r.f64()
    return Provenance(seed, digest, ts)


def serialize_model(model: QualityModel) -> bytes:
    head = _Writer()
    head.raw(MAGIC)
    head.u32(model.format_version)
    sections = []
    for writer_fn, payload in (
        (_write_augment, model.augment_cfg),
        (_write_features, model.feature_params),
        (_write_rft, model.ranking),
        (_write_gbdt, model.gbdt),
        (_write_provenance, model.provenance),
    ):
        w = _Writer()
        writer_fn(w, payload)
        sections.append(w.getvalue())
    for s in sections:
        head.u64(len(s))
        head.raw(s)
    body = head.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def deserialize_model(blob: bytes) -> QualityModel:
    if len(blob) < len(MAGIC) + 8 or blob[:4] != MAGIC:
        raise CorruptModel("not a quality-model file (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"model format {version} not supported (expected {FORMAT_VERSION})")
    body, trailer = blob[:-4], blob[-4:]
    if struct.unpack("<I", trailer)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CorruptModel("checksum mismatch")
    r = _Reader(body)
    r.take(8)  # magic + version
    payloads = []
    for _ in range(5):
        n = r.u64()
        payloads.append(_Reader(r.take(n)))
    if not r.done():
        raise CorruptModel("trailing bytes after final section")
    augment_cfg = _read_augment(payloads[0])
    params = _read_features(payloads[1])
    ranking = _read_rft(payloads[2], params.column_meta())
    gb = _read_gbdt(payloads[3])
    prov = _read_provenance(payloads[4])
    for p in payloads:
        if not p.done():
            raise CorruptModel("section has trailing bytes")
    return QualityModel(augment_cfg, params, ranking, gb, prov, version)


def save_model(model: QualityModel, path) -> None:
    try:
        Path(path).write_bytes(serialize_model(model))
    except OSError as exc:
        raise IoError(f"cannot write model to {path}: {exc}") from exc


def load_model(path) -> QualityModel:
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read model from {p}: {exc}") from exc
    return deserialize_model(blob)


def model_digest(model: QualityModel) -> str:
    """Hex digest of the serialized model bytes."""
    return hashlib.sha256(serialize_model(model)).hexdigest()
