"""Gradient-boosted regression trees with squared-error loss.

Stagewise residual fitting: each tree greedily splits on exact sorted feature
values to maximize variance reduction, predictions accumulate with shrinkage,
and boosting halts when validation RMSE stops improving. Split scans run
level-wise over presorted columns so a full level costs one pass per feature
regardless of how many nodes it holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ColumnMismatch, EmptyTrainingSet


@dataclass
class GbdtConfig:
    learning_rate: float = 0.05
    max_depth: int = 5
    n_estimators: int = 1000
    early_stopping_rounds: int = 50
    min_samples_leaf: int = 1
    subsample: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")


@dataclass
class RegressionTree:
    """Flat node arrays; feature[i] < 0 marks a leaf whose output is value[i]."""

    feature: np.ndarray    # int64
    threshold: np.ndarray  # float64
    left: np.ndarray       # int64 child index
    right: np.ndarray      # int64
    value: np.ndarray      # float64 leaf outputs

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def validate(self, max_depth: int | None = None):
        seen = np.zeros(self.n_nodes, dtype=bool)
        stack = [(0, 0)]
        while stack:
            node, depth = stack.pop()
            if seen[node]:
                raise ValueError("node reachable twice; tree is not a tree")
            seen[node] = True
            if self.feature[node] < 0:
                continue
            if max_depth is not None and depth >= max_depth:
                raise ValueError("internal node at depth limit")
            stack.append((int(self.left[node]), depth + 1))
            stack.append((int(self.right[node]), depth + 1))
        if not seen.all():
            raise ValueError("unreachable nodes present")


@dataclass
class GbdtModel:
    base_score: float
    learning_rate: float
    trees: list = field(default_factory=list)
    train_rmse: np.ndarray = field(default_factory=lambda: np.zeros(0))
    val_rmse: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_columns: int = 0

    @property
    def n_trees_used(self) -> int:
        return len(self.trees)


@njit(cache=True)
def _scan_level(xt, sort_idx, grad, node_of_row, n_nodes,
                node_sum, node_cnt, min_leaf,
                best_gain, best_feat, best_thr):
    """One pass per feature over presorted rows; records, per active node, the
    split with the highest variance reduction (ties: lowest feature index,
    then lowest threshold, via strict > replacement)."""
    n_features, n_rows = xt.shape
    left_sum = np.zeros(n_nodes)
    left_cnt = np.zeros(n_nodes, dtype=np.int64)
    last_val = np.zeros(n_nodes)
    for j in range(n_features):
        for k in range(n_nodes):
            left_sum[k] = 0.0
            left_cnt[k] = 0
        for pos in range(n_rows):
            r = sort_idx[j, pos]
            nid = node_of_row[r]
            if nid < 0:
                continue
            v = xt[j, r]
            if left_cnt[nid] > 0 and v > last_val[nid]:
                nl = left_cnt[nid]
                nr = node_cnt[nid] - nl
                if nl >= min_leaf and nr >= min_leaf:
                    sl = left_sum[nid]
                    sr = node_sum[nid] - sl
                    sp = node_sum[nid]
                    gain = (sl * sl / nl + sr * sr / nr
                            - sp * sp / node_cnt[nid])
                    if gain > best_gain[nid]:
                        mid = 0.5 * (last_val[nid] + v)
                        if mid >= v:   # midpoint rounded up to v: fall back
                            mid = last_val[nid]
                        best_gain[nid] = gain
                        best_feat[nid] = j
                        best_thr[nid] = mid
            left_sum[nid] += grad[r]
            left_cnt[nid] += 1
            last_val[nid] = v


def _grow_tree(xt, sort_idx, grad, in_sample, cfg: GbdtConfig) -> RegressionTree:
    n_rows = xt.shape[1]
    node_of_row = np.where(in_sample, 0, -1).astype(np.int64)
    feature, threshold, left, right, value = [], [], [], [], []
    # level-order construction; level_nodes maps level-local id -> tree index
    root_cnt = int(in_sample.sum())
    root_sum = float(grad[in_sample].sum())
    feature.append(-1)
    threshold.append(0.0)
    left.append(-1)
    right.append(-1)
    value.append(root_sum / root_cnt)
    level_nodes = [0]
    level_sum = np.array([root_sum])
    level_cnt = np.array([root_cnt], dtype=np.int64)
    for _depth in range(cfg.max_depth):
        n_nodes = len(level_nodes)
        best_gain = np.zeros(n_nodes)
        best_feat = np.full(n_nodes, -1, dtype=np.int64)
        best_thr = np.zeros(n_nodes)
        _scan_level(xt, sort_idx, grad, node_of_row, n_nodes,
                    level_sum, level_cnt, cfg.min_samples_leaf,
                    best_gain, best_feat, best_thr)
        if (best_feat < 0).all():
            break
        next_nodes = []
        next_sum, next_cnt = [], []
        remap = np.full(n_nodes, -1, dtype=np.int64)
        for k in range(n_nodes):
            if best_feat[k] < 0:
                continue
            tree_idx = level_nodes[k]
            feature[tree_idx] = int(best_feat[k])
            threshold[tree_idx] = float(best_thr[k])
            left[tree_idx] = len(feature)
            right[tree_idx] = len(feature) + 1
            remap[k] = len(next_nodes)
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                next_nodes.append(len(feature) - 1)
                next_sum.append(0.0)
                next_cnt.append(0)
        # route rows to children and refresh per-node stats
        active = node_of_row >= 0
        rows = np.nonzero(active)[0]
        nids = node_of_row[rows]
        splitting = remap[nids] >= 0
        rows_s = rows[splitting]
        nids_s = nids[splitting]
        go_left = xt[best_feat[nids_s], rows_s] <= best_thr[nids_s]
        node_of_row[rows[~splitting]] = -1
        child_local = remap[nids_s] + np.where(go_left, 0, 1)
        node_of_row[rows_s] = child_local
        level_nodes = next_nodes
        level_sum = np.zeros(len(next_nodes))
        level_cnt = np.zeros(len(next_nodes), dtype=np.int64)
        np.add.at(level_sum, child_local, grad[rows_s])
        np.add.at(level_cnt, child_local, 1)
        for k, tree_idx in enumerate(level_nodes):
            value[tree_idx] = level_sum[k] / level_cnt[k]
    return RegressionTree(np.asarray(feature, dtype=np.int64),
                          np.asarray(threshold),
                          np.asarray(left, dtype=np.int64),
                          np.asarray(right, dtype=np.int64),
                          np.asarray(value))


def _tree_apply(tree: RegressionTree, x: np.ndarray) -> np.ndarray:
    """Vectorized tree traversal for an (n, d) matrix."""
    node = np.zeros(len(x), dtype=np.int64)
    for _ in range(len(tree.feature)):
        feat = tree.feature[node]
        internal = feat >= 0
        if not internal.any():
            break
        rows = np.nonzero(internal)[0]
        go_left = x[rows, feat[rows]] <= tree.threshold[node[rows]]
        node[rows] = np.where(go_left, tree.left[node[rows]],
                              tree.right[node[rows]])
    return tree.value[node]


def fit(x_train: np.ndarray, y_train: np.ndarray,
        x_val: np.ndarray, y_val: np.ndarray,
        cfg: GbdtConfig | None = None, seed: int = 0) -> GbdtModel:
    """Boosted residual fitting with early stopping on validation RMSE."""
    cfg = cfg or GbdtConfig()
    x_train = np.ascontiguousarray(x_train, dtype=np.float64)
    x_val = np.ascontiguousarray(x_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise EmptyTrainingSet("train and validation sets must be non-empty")
    if x_train.shape[1] != x_val.shape[1]:
        raise ColumnMismatch(
            f"train has {x_train.shape[1]} columns, val has {x_val.shape[1]}")
    if x_train.shape[0] != len(y_train) or x_val.shape[0] != len(y_val):
        raise ColumnMismatch("feature rows and target length differ")

    xt = np.ascontiguousarray(x_train.T)
    sort_idx = np.argsort(xt, axis=1, kind="stable")
    rng = np.random.default_rng(seed)
    n = x_train.shape[0]
    sample_size = max(1, int(round(cfg.subsample * n)))

    base = float(y_train.mean())
    pred_train = np.full(n, base)
    pred_val = np.full(len(y_val), base)
    trees = []
    train_hist, val_hist = [], []
    best_rmse = np.inf
    best_stage = 0  # tree count at the best validation RMSE
    for stage in range(cfg.n_estimators):
        grad = y_train - pred_train
        if cfg.subsample < 1.0:
            in_sample = np.zeros(n, dtype=bool)
            in_sample[rng.choice(n, size=sample_size, replace=False)] = True
        else:
            in_sample = np.ones(n, dtype=bool)
        tree = _grow_tree(xt, sort_idx, grad, in_sample, cfg)
        trees.append(tree)
        pred_train += cfg.learning_rate * _tree_apply(tree, x_train)
        pred_val += cfg.learning_rate * _tree_apply(tree, x_val)
        train_hist.append(float(np.sqrt(np.mean((y_train - pred_train) ** 2))))
        rmse = float(np.sqrt(np.mean((y_val - pred_val) ** 2)))
        val_hist.append(rmse)
        if rmse < best_rmse:
            best_rmse = rmse
            best_stage = stage + 1
        elif stage + 1 - best_stage >= cfg.early_stopping_rounds:
            break
    model = GbdtModel(base, cfg.learning_rate, trees[:best_stage],
                      np.asarray(train_hist), np.asarray(val_hist),
                      x_train.shape[1])
    return model


def predict(model: GbdtModel, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ColumnMismatch("expected a 2-D feature matrix")
    if model.n_columns and x.shape[1] != model.n_columns:
        raise ColumnMismatch(
            f"model expects {model.n_columns} columns, got {x.shape[1]}")
    out = np.full(x.shape[0], model.base_score)
    for tree in model.trees:
        out += model.learning_rate * _tree_apply(tree, x)
    return out
