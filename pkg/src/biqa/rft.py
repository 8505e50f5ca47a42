"""Relevant feature test: supervised ranking of feature columns.

Each column is scored by the best achievable weighted RMSE when the training
set is split in two at a threshold on that column; low cost means the column
carries quality information. Selection keeps the cheapest columns, either a
fixed count (optionally per channel) or up to an elbow in the sorted curve.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .features import CHANNELS, ColumnMeta

DEFAULT_BINS = 16


def _weighted_split_cost(feature_col, targets, thresholds):
    """Minimum of (|L| RMSE_L + |R| RMSE_R)/N over thresholds; NaN if all
    candidates leave one side empty."""
    f = feature_col[:, None]
    left = f <= thresholds[None, :]
    n = float(len(feature_col))
    nl = left.sum(axis=0).astype(np.float64)
    nr = n - nl
    valid = (nl > 0) & (nr > 0)
    if not valid.any():
        return float("nan")
    left = left[:, valid]
    nl, nr = nl[valid], nr[valid]
    y = targets[:, None]
    sum_l = (y * left).sum(axis=0)
    mean_l = sum_l / nl
    mean_r = (targets.sum() - sum_l) / nr
    # two passes per threshold: a sums-of-squares update cancels
    # catastrophically when one side is nearly constant
    dev_l = ((y - mean_l[None, :]) ** 2 * left).sum(axis=0)
    dev_r = ((y - mean_r[None, :]) ** 2 * ~left).sum(axis=0)
    cost = (nl * np.sqrt(dev_l / nl) + nr * np.sqrt(dev_r / nr)) / n
    return float(cost.min())


def rft_cost(feature_col: np.ndarray, targets: np.ndarray,
             bins: int = DEFAULT_BINS) -> float:
    """Best weighted two-interval RMSE over uniform interior thresholds."""
    feature_col = np.asarray(feature_col, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if feature_col.shape != targets.shape:
        raise LengthMismatch(
            f"feature length {feature_col.shape} != target length {targets.shape}")
    n = len(feature_col)
    if n < 2:
        raise EmptyInput("need at least 2 samples")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = float(feature_col.min()), float(feature_col.max())
    full_rmse = float(targets.std())
    if hi <= lo:
        return full_rmse
    j = np.arange(1, bins + 1, dtype=np.float64)
    thresholds = lo + j * (hi - lo) / (bins + 1)
    cost = _weighted_split_cost(feature_col, targets, thresholds)
    if np.isnan(cost):
        return full_rmse
    return cost


@dataclass
class RftRanking:
    costs: np.ndarray
    order: np.ndarray
    bins: int = DEFAULT_BINS
    column_meta: list = field(default_factory=list)
    selected: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def validate(self):
        if self.order.shape != self.costs.shape:
            raise LengthMismatch("order/costs length mismatch")
        expected = np.argsort(self.costs, kind="stable")
        if not np.array_equal(self.order, expected):
            raise ValueError("order is not the stable ascending-cost permutation")
        # selected must follow the ranking (a subsequence of order; a plain
        # prefix when selection was global)
        pos = np.empty(len(self.order), dtype=np.int64)
        pos[self.order] = np.arange(len(self.order))
        if len(self.selected) and np.any(np.diff(pos[self.selected]) <= 0):
            raise ValueError("selected set does not follow the cost ranking")


def rank_features(values: np.ndarray, targets: np.ndarray,
                  bins: int = DEFAULT_BINS,
                  column_meta: list | None = None) -> RftRanking:
    """Score every column on training rows; stable ascending-cost order."""
    values = np.asarray(values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if values.ndim != 2:
        raise LengthMismatch("feature matrix must be 2-D")
    if values.shape[0] != len(targets):
        raise LengthMismatch(
            f"{values.shape[0]} feature rows but {len(targets)} targets")
    if values.shape[0] < 2:
        raise EmptyInput("need at least 2 training rows")
    costs = np.empty(values.shape[1])
    for jcol in range(values.shape[1]):
        costs[jcol] = rft_cost(values[:, jcol], targets, bins)
    order = np.argsort(costs, kind="stable")
    ranking = RftRanking(costs, order, bins, list(column_meta or []),
                         order.copy())
    ranking.validate()
    return ranking


def _by_global_cost(ranking: RftRanking, indices: np.ndarray) -> np.ndarray:
    pos = np.empty(len(ranking.order), dtype=np.int64)
    pos[ranking.order] = np.arange(len(ranking.order))
    return indices[np.argsort(pos[indices], kind="stable")]


def select_features(ranking: RftRanking,
                    total: int | None = None,
                    per_channel: dict | None = None,
                    elbow: bool = False) -> np.ndarray:
    """Pick quality-aware columns: a global count, per-channel counts, or the
    per-curve elbow. Counts larger than availability are clamped with a
    warning on stderr."""
    n = len(ranking.order)
    if elbow:
        if not ranking.column_meta:
            k = elbow_index(np.sort(ranking.costs))
            return ranking.order[:k].copy()
        per_channel = {}
        for ch in CHANNELS:
            cols = _channel_columns(ranking, ch)
            if len(cols):
                per_channel[ch] = elbow_index(np.sort(ranking.costs[cols]))
    if per_channel is not None:
        picked = []
        for ch in CHANNELS:
            want = int(per_channel.get(ch, 0))
            if want <= 0:
                continue
            cols = _channel_columns(ranking, ch)
            if want > len(cols):
                print(f"warning: requested {want} {ch} columns, "
                      f"only {len(cols)} available", file=sys.stderr)
                want = len(cols)
            by_cost = _by_global_cost(ranking, cols)
            picked.append(by_cost[:want])
        if not picked:
            return np.zeros(0, dtype=np.int64)
        return _by_global_cost(ranking, np.concatenate(picked))
    if total is None:
        total = n
    if total > n:
        print(f"warning: requested {total} columns, only {n} available",
              file=sys.stderr)
        total = n
    return ranking.order[:max(0, total)].copy()


def _channel_columns(ranking: RftRanking, channel: str) -> np.ndarray:
    idx = [j for j, meta in enumerate(ranking.column_meta)
           if ColumnMeta(*meta).channel == channel]
    return np.asarray(idx, dtype=np.int64)


def elbow_index(sorted_costs: np.ndarray, smooth_window: int = 3) -> int:
    """Cut point of an ascending cost curve: the index with the largest
    discrete second difference after light moving-average smoothing."""
    c = np.asarray(sorted_costs, dtype=np.float64)
    n = len(c)
    if n < 3:
        return n
    kernel = np.ones(smooth_window) / smooth_window
    pad = smooth_window // 2
    padded = np.pad(c, pad, mode="edge")
    smoothed = np.convolve(padded, kernel, mode="valid")
    second = smoothed[2:] - 2.0 * smoothed[1:-1] + smoothed[:-2]
    return int(np.argmax(second)) + 1
