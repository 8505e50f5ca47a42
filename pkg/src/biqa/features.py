"""Two-hop unsupervised feature extraction.

HOP1 computes the orthonormal 8x8 block DCT of each channel and rearranges
coefficients (zigzag order) into one DC map and 63 AC maps. HOP2 decorrelates
the DC map with a data-driven 3x3 transform: the block mean plus the
principal components of the mean-removed block. Each of the 72 maps per
channel is reduced to seven numbers: |.| -> 2x2 max pooling -> {max, mean,
std}, plus four averaged outputs of a small 2x2-region transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, NamedTuple

import numpy as np

from .errors import EmptyInput, InsufficientSamples, ShapeMismatch

if TYPE_CHECKING:
    from .augment import Subimage

CHANNELS = ("y", "u", "v")
BLOCK = 8
HOP2_BLOCK = 3
STAT_NAMES = ("max", "mean", "std")


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k is the k-th basis vector."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] *= np.sqrt(0.5)
    return mat


DCT8 = dct_matrix(BLOCK)

# JPEG zigzag scan: ZIGZAG_ORDER[i] is the flat (row*8+col) index visited at
# step i; starts (0,0), (0,1), (1,0), (2,0), (1,1), ...
ZIGZAG_ORDER = np.array([
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
], dtype=np.int64)

ZIGZAG_INVERSE = np.argsort(ZIGZAG_ORDER)


class ZigzagVector(NamedTuple):
    dc: float
    ac: np.ndarray  # 63 coefficients in scan order


def block_dct(plane: np.ndarray) -> np.ndarray:
    """8x8 block DCT of a 2-D plane; returns (rows/8, cols/8, 8, 8) coefficients."""
    h, w = plane.shape
    if h % BLOCK or w % BLOCK:
        raise ShapeMismatch(f"plane {h}x{w} is not a multiple of {BLOCK}")
    gr, gc = h // BLOCK, w // BLOCK
    blocks = plane.reshape(gr, BLOCK, gc, BLOCK).transpose(0, 2, 1, 3)
    # AC rows annihilate constants, but only in exact arithmetic; removing
    # the block mean first makes AC outputs bit-stable under a global offset
    # of integer-valued samples (block sums stay exact in float64)
    sums = blocks.sum(axis=(2, 3))
    centered = blocks - sums[:, :, None, None] / 64.0
    coeffs = np.einsum("ij,rcjk,lk->rcil", DCT8, centered, DCT8, optimize=True)
    coeffs[:, :, 0, 0] = sums / 8.0
    return coeffs


def inverse_block_dct(coeffs: np.ndarray) -> np.ndarray:
    gr, gc = coeffs.shape[:2]
    blocks = np.einsum("ji,rcjk,kl->rcil", DCT8, coeffs, DCT8, optimize=True)
    return blocks.transpose(0, 2, 1, 3).reshape(gr * BLOCK, gc * BLOCK)


def zigzag(block: np.ndarray) -> ZigzagVector:
    flat = np.asarray(block, dtype=np.float64).reshape(64)[ZIGZAG_ORDER]
    return ZigzagVector(float(flat[0]), flat[1:])


def inverse_zigzag(vec: ZigzagVector) -> np.ndarray:
    scan = np.concatenate(([vec.dc], np.asarray(vec.ac, dtype=np.float64)))
    return scan[ZIGZAG_INVERSE].reshape(BLOCK, BLOCK)


def coefficient_maps(grid: np.ndarray) -> np.ndarray:
    """Rearrange a DCT block grid into 64 zigzag-ordered maps of shape (gr, gc)."""
    gr, gc = grid.shape[:2]
    flat = grid.reshape(gr, gc, 64)[:, :, ZIGZAG_ORDER]
    return np.ascontiguousarray(flat.transpose(2, 0, 1))


def ac_energy(plane: np.ndarray) -> float:
    """Summed |AC| over all 8x8 DCT blocks; the patch-selection score."""
    grid = block_dct(plane)
    total = np.abs(grid).sum()
    dc = np.abs(grid[:, :, 0, 0]).sum()
    return float(total - dc)


# -- Saab transform ------------------------------------------------------------


@dataclass
class SaabKernel:
    """Constant (mean) component plus PCA of the mean-removed input."""

    training_mean: np.ndarray   # (dim,) mean of raw training vectors
    basis: np.ndarray           # (dim-1, dim) orthonormal rows, each _|_ constant
    eigenvalues: np.ndarray     # (dim-1,) descending

    @property
    def dim(self) -> int:
        return self.training_mean.shape[0]

    @property
    def mean_weight(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / self.dim)

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        """Map (..., dim) vectors to (..., dim) outputs: [mean, ac_1..ac_{dim-1}]."""
        dc = vectors.mean(axis=-1, keepdims=True)
        ac = (vectors - self.training_mean) @ self.basis.T
        return np.concatenate([dc, ac], axis=-1)


def _constant_complement(dim: int) -> np.ndarray:
    # Orthonormal completion of the constant direction; AC eigenvectors are
    # sought inside this subspace so degenerate fits stay _|_ constant.
    return dct_matrix(dim)[1:]


class SaabMoments:
    """Streaming accumulator for fitting a SaabKernel."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.sum_raw = np.zeros(dim)
        self.sum_centered = np.zeros(dim)
        self.sum_outer = np.zeros((dim, dim))

    def add(self, vectors: np.ndarray) -> None:
        vectors = vectors.reshape(-1, self.dim)
        centered = vectors - vectors.mean(axis=1, keepdims=True)
        self.count += vectors.shape[0]
        self.sum_raw += vectors.sum(axis=0)
        self.sum_centered += centered.sum(axis=0)
        self.sum_outer += centered.T @ centered

    def kernel(self) -> SaabKernel:
        if self.count == 0:
            raise EmptyInput("no vectors accumulated")
        n = self.count
        mean_raw = self.sum_raw / n
        mu = self.sum_centered / n
        cov = self.sum_outer / n - np.outer(mu, mu)
        comp = _constant_complement(self.dim)          # (dim-1, dim)
        reduced = comp @ cov @ comp.T
        raw_energy = float(np.trace(self.sum_outer)) / n
        if np.trace(reduced) <= 1e-15 * max(1.0, raw_energy):
            # Constant blocks carry no AC signal; fall back to the fixed
            # completion so the transform stays well defined.
            return SaabKernel(mean_raw, comp.copy(), np.zeros(self.dim - 1))
        evals, evecs = np.linalg.eigh(reduced)          # ascending
        order = np.arange(self.dim - 2, -1, -1)
        evals = evals[order]
        basis = (evecs[:, order].T @ comp)              # rows, descending eigenvalue
        # Deterministic sign: largest-|.| entry of each row made positive.
        for row in basis:
            if row[np.argmax(np.abs(row))] < 0:
                row *= -1.0
        return SaabKernel(mean_raw, np.ascontiguousarray(basis), evals)


def fit_saab(vectors: np.ndarray) -> SaabKernel:
    moments = SaabMoments(vectors.shape[-1])
    moments.add(vectors)
    return moments.kernel()


def _hop2_blocks(dc_map: np.ndarray) -> np.ndarray:
    h, w = dc_map.shape
    if h % HOP2_BLOCK or w % HOP2_BLOCK:
        raise ShapeMismatch(f"DC map {h}x{w} is not a multiple of {HOP2_BLOCK}")
    hb, wb = h // HOP2_BLOCK, w // HOP2_BLOCK
    blocks = dc_map.reshape(hb, HOP2_BLOCK, wb, HOP2_BLOCK).transpose(0, 2, 1, 3)
    return blocks.reshape(hb, wb, HOP2_BLOCK * HOP2_BLOCK)


def fit_hop2_saab(dc_maps: Iterable[np.ndarray]) -> SaabKernel:
    """Fit the 3x3 DC-map transform from training DC maps."""
    moments = SaabMoments(HOP2_BLOCK * HOP2_BLOCK)
    for dc_map in dc_maps:
        moments.add(_hop2_blocks(dc_map))
    if moments.count < 9:
        raise InsufficientSamples(f"need >= 9 blocks to fit, got {moments.count}")
    return moments.kernel()


def apply_hop2(dc_map: np.ndarray, kernel: SaabKernel) -> np.ndarray:
    """Transform a DC map into 9 maps (1 DC + 8 AC), each 1/3 the side."""
    blocks = _hop2_blocks(dc_map)
    out = kernel.apply(blocks)                          # (hb, wb, 9)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


# -- pooling and aggregation ---------------------------------------------------


def abs_max_pool(maps: np.ndarray, window: int) -> np.ndarray:
    """|.| then non-overlapping max pooling; maps smaller than the window
    skip the pooling step."""
    a = np.abs(maps)
    m, h, w = a.shape
    if h < window or w < window:
        return a
    hp, wp = h // window, w // window
    a = a[:, : hp * window, : wp * window]
    return a.reshape(m, hp, window, wp, window).max(axis=(2, 4))


def _spatial_stats(pooled: np.ndarray) -> np.ndarray:
    flat = pooled.reshape(pooled.shape[0], -1)
    # population std, for determinism across backends
    return np.stack([flat.max(axis=1), flat.mean(axis=1), flat.std(axis=1)], axis=1)


def region_vectors(pooled: np.ndarray, region: int) -> np.ndarray:
    """Flatten non-overlapping region x region neighborhoods to vectors.

    Maps too small for one full region are edge-replicated up to the region
    size so every map contributes exactly one vector set.
    """
    m, h, w = pooled.shape
    if h < region or w < region:
        pooled = np.pad(
            pooled, ((0, 0), (0, max(0, region - h)), (0, max(0, region - w))),
            mode="edge",
        )
        m, h, w = pooled.shape
    hb, wb = h // region, w // region
    trimmed = pooled[:, : hb * region, : wb * region]
    blocks = trimmed.reshape(m, hb, region, wb, region).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(m, hb * wb, region * region)


@dataclass
class SpectralBank:
    """Per-map region-transform kernels for one channel, stacked for speed."""

    mean: np.ndarray         # (n_maps, dim)
    basis: np.ndarray        # (n_maps, dim-1, dim)
    eigenvalues: np.ndarray  # (n_maps, dim-1)

    @property
    def n_maps(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def kernel(self, map_index: int) -> SaabKernel:
        return SaabKernel(self.mean[map_index], self.basis[map_index],
                          self.eigenvalues[map_index])

    def apply_mean(self, vectors: np.ndarray) -> np.ndarray:
        """(n_maps, nb, dim) region vectors -> (n_maps, dim) map-averaged outputs."""
        dc = vectors.mean(axis=(1, 2))
        centered = vectors - self.mean[:, None, :]
        ac = np.einsum("mbk,mjk->mj", centered, self.basis) / vectors.shape[1]
        return np.concatenate([dc[:, None], ac], axis=1)

    @staticmethod
    def from_kernels(kernels: list[SaabKernel]) -> "SpectralBank":
        return SpectralBank(
            np.stack([k.training_mean for k in kernels]),
            np.stack([k.basis for k in kernels]),
            np.stack([k.eigenvalues for k in kernels]),
        )


class ColumnMeta(NamedTuple):
    channel: str   # "y" | "u" | "v"
    hop: int       # 1 | 2
    coef: int      # hop1: AC index 1..63; hop2: 0 = DC, 1..8 = AC
    stat: str      # "max" | "mean" | "std" | "saab0".."saab3"


@dataclass
class FeaturePipelineParams:
    """Everything needed to turn a subimage into one feature row."""

    hop2: dict                 # channel -> SaabKernel (9-D)
    spectral: dict             # channel -> SpectralBank over the 72 maps
    pooling_window: int = 2
    spectral_region: int = 2

    @property
    def n_maps(self) -> int:
        return 63 + 9

    @property
    def stats_per_map(self) -> int:
        return len(STAT_NAMES) + self.spectral_region ** 2

    @property
    def n_columns(self) -> int:
        return len(CHANNELS) * self.n_maps * self.stats_per_map

    def stat_names(self) -> list[str]:
        return list(STAT_NAMES) + [f"saab{j}" for j in range(self.spectral_region ** 2)]

    def column_meta(self) -> list[ColumnMeta]:
        stats = self.stat_names()
        meta = []
        for ch in CHANNELS:
            for hop, coefs in ((1, range(1, 64)), (2, range(0, 9))):
                for coef in coefs:
                    for stat in stats:
                        meta.append(ColumnMeta(ch, hop, coef, stat))
        return meta


@dataclass
class FeatureMatrix:
    values: np.ndarray
    column_meta: list[ColumnMeta]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def validate(self):
        if len(self.column_meta) != self.cols:
            raise ShapeMismatch("column metadata length does not match columns")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains NaN/Inf")


def channel_maps(plane: np.ndarray, hop2_kernel: SaabKernel):
    """HOP1 AC maps (63, gr, gc) and HOP2 maps (9, gr/3, gc/3) for one plane."""
    maps = coefficient_maps(block_dct(plane))
    hop2_maps = apply_hop2(maps[0], hop2_kernel)
    return maps[1:], hop2_maps


def pool_and_aggregate(hop1_by_channel: dict, hop2_by_channel: dict,
                       params: FeaturePipelineParams) -> np.ndarray:
    """Reduce per-channel map stacks to one feature row."""
    win, region = params.pooling_window, params.spectral_region
    pieces = []
    for ch in CHANNELS:
        bank = params.spectral[ch]
        per_map = []
        offset = 0
        for maps in (hop1_by_channel[ch], hop2_by_channel[ch]):
            pooled = abs_max_pool(maps, win)
            stats = _spatial_stats(pooled)
            vecs = region_vectors(pooled, region)
            sub_bank = SpectralBank(bank.mean[offset:offset + maps.shape[0]],
                                    bank.basis[offset:offset + maps.shape[0]],
                                    bank.eigenvalues[offset:offset + maps.shape[0]])
            spectral = sub_bank.apply_mean(vecs)
            per_map.append(np.concatenate([stats, spectral], axis=1))
            offset += maps.shape[0]
        pieces.append(np.concatenate(per_map, axis=0).reshape(-1))
    return np.concatenate(pieces)


def extract_row(sub: "Subimage", params: FeaturePipelineParams,
                timer=None) -> np.ndarray:
    from .timing import null_timer
    t = timer or null_timer
    hop1 = {}
    hop2 = {}
    for ch, plane in zip(CHANNELS, sub.pixels.planes()):
        with t.stage("dct"):
            maps = coefficient_maps(block_dct(plane))
        with t.stage("saab"):
            hop2[ch] = apply_hop2(maps[0], params.hop2[ch])
        hop1[ch] = maps[1:]
    with t.stage("pooling"):
        row = pool_and_aggregate(hop1, hop2, params)
    return row


def extract_features(subs: list, params: FeaturePipelineParams,
                     timer=None) -> FeatureMatrix:
    """One feature row per subimage; deterministic column order."""
    meta = params.column_meta()
    if not subs:
        return FeatureMatrix(np.zeros((0, params.n_columns)), meta)
    rows = np.stack([extract_row(s, params, timer) for s in subs])
    fm = FeatureMatrix(rows, meta)
    fm.validate()
    return fm


def fit_feature_params(make_subimages: Callable[[], Iterable],
                       pooling_window: int = 2,
                       spectral_region: int = 2) -> FeaturePipelineParams:
    """Fit HOP2 and region-transform kernels from training subimages.

    ``make_subimages`` is called twice: the HOP2 kernels must exist before
    the region kernels can see HOP2 maps, and streaming both passes keeps
    memory flat for large datasets.
    """
    hop2_moments = {ch: SaabMoments(HOP2_BLOCK * HOP2_BLOCK) for ch in CHANNELS}
    count = 0
    for sub in make_subimages():
        count += 1
        for ch, plane in zip(CHANNELS, sub.pixels.planes()):
            grid = block_dct(plane)
            hop2_moments[ch].add(_hop2_blocks(grid[:, :, 0, 0]))
    if count == 0:
        raise InsufficientSamples("no training subimages")
    if any(m.count < 9 for m in hop2_moments.values()):
        raise InsufficientSamples("fewer than 9 DC blocks in training data")
    hop2 = {ch: hop2_moments[ch].kernel() for ch in CHANNELS}

    dim = spectral_region ** 2
    n_maps = 63 + 9
    spectral_moments = {ch: [SaabMoments(dim) for _ in range(n_maps)] for ch in CHANNELS}
    for sub in make_subimages():
        for ch, plane in zip(CHANNELS, sub.pixels.planes()):
            hop1_ac, hop2_maps = channel_maps(plane, hop2[ch])
            offset = 0
            for maps in (hop1_ac, hop2_maps):
                pooled = abs_max_pool(maps, pooling_window)
                vecs = region_vectors(pooled, spectral_region)
                for i in range(maps.shape[0]):
                    spectral_moments[ch][offset + i].add(vecs[i])
                offset += maps.shape[0]
    spectral = {
        ch: SpectralBank.from_kernels([m.kernel() for m in spectral_moments[ch]])
        for ch in CHANNELS
    }
    return FeaturePipelineParams(hop2, spectral, pooling_window, spectral_region)
