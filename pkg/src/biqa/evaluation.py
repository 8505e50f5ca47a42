"""Correlation metrics and the repeated-split evaluation protocol."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline as pipeline_mod
from .dataset import DatasetManifest, Split, load_image, split_manifest
from .errors import ConstantInput, LengthMismatch
from .pipeline import TrainConfig


def _as_pair(pred, subj):
    p = np.asarray(pred, dtype=np.float64)
    s = np.asarray(subj, dtype=np.float64)
    if p.shape != s.shape or p.ndim != 1:
        raise LengthMismatch(f"shape mismatch: {p.shape} vs {s.shape}")
    if len(p) < 2:
        raise LengthMismatch("need at least 2 samples")
    return p, s


def plcc(pred, subj) -> float:
    """Pearson linear correlation coefficient (two-pass)."""
    p, s = _as_pair(pred, subj)
    dp = p - p.mean()
    ds = s - s.mean()
    np_, ns = np.sqrt((dp * dp).sum()), np.sqrt((ds * ds).sum())
    if np_ == 0.0 or ns == 0.0:
        raise ConstantInput("correlation undefined for a constant input")
    return float((dp * ds).sum() / (np_ * ns))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srocc(pred, subj) -> float:
    """Spearman rank-order correlation: Pearson on average ranks."""
    p, s = _as_pair(pred, subj)
    return plcc(average_ranks(p), average_ranks(s))


@dataclass
class RunResult:
    seed: int
    plcc: float
    srocc: float
    n_test: int


@dataclass
class EvaluationReport:
    per_run: list
    median_plcc: float
    median_srocc: float
    per_distortion: dict = field(default_factory=dict)
    images_per_second: float = 0.0

    @classmethod
    def from_runs(cls, runs, per_distortion=None,
                  images_per_second: float = 0.0) -> "EvaluationReport":
        runs = list(runs)
        return cls(runs,
                   _median([r.plcc for r in runs]),
                   _median([r.srocc for r in runs]),
                   dict(per_distortion or {}),
                   images_per_second)

    def to_json(self) -> str:
        return json.dumps({
            "per_run": [
                {"seed": r.seed, "plcc": r.plcc, "srocc": r.srocc,
                 "n_test": r.n_test}
                for r in self.per_run
            ],
            "median_plcc": self.median_plcc,
            "median_srocc": self.median_srocc,
            "per_distortion": self.per_distortion,
            "images_per_second": self.images_per_second,
        }, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{'seed':>6} {'plcc':>8} {'srocc':>8} {'n_test':>7}"]
        for r in self.per_run:
            lines.append(f"{r.seed:>6} {r.plcc:>8.4f} {r.srocc:>8.4f} {r.n_test:>7}")
        lines.append(f"median plcc  {self.median_plcc:.4f}")
        lines.append(f"median srocc {self.median_srocc:.4f}")
        if self.per_distortion:
            lines.append("per-distortion srocc:")
            for tag in sorted(self.per_distortion):
                lines.append(f"  {tag:<20} {self.per_distortion[tag]:.4f}")
        if self.images_per_second:
            lines.append(f"throughput {self.images_per_second:.2f} images/sec")
        return "\n".join(lines)


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def evaluate_model(model, manifest: DatasetManifest, root,
                   entries=None) -> tuple:
    """Image-level predictions and targets for the given rows (default: test)."""
    root = Path(root)
    rows = entries if entries is not None else manifest.subset(Split.TEST)
    preds = np.empty(len(rows))
    subj = np.empty(len(rows))
    for i, entry in enumerate(rows):
        img = load_image(root / entry.image_path)
        preds[i] = pipeline_mod.predict_image(model, img)
        subj[i] = entry.mos
    return preds, subj


def run_protocol(manifest: DatasetManifest, cfg: TrainConfig | None = None,
                 seeds=(0,), root=".",
                 fractions=pipeline_mod.DEFAULT_FRACTIONS,
                 per_distortion: bool = False) -> EvaluationReport:
    """Repeat split/train/evaluate per seed; report per-run and median scores.

    Per-distortion SROCC pools test predictions across runs within each
    distortion tag (manifest rows must carry tags; untagged rows are skipped).
    """
    if len(seeds) == 0:
        raise LengthMismatch("need at least one seed")
    cfg = cfg or TrainConfig(manifest.scenario)
    runs = []
    tagged_preds: dict[str, list] = {}
    tagged_subj: dict[str, list] = {}
    n_images = 0
    t0 = time.perf_counter()
    for seed in seeds:
        assigned = split_manifest(manifest, seed, fractions)
        model = pipeline_mod.train(assigned, cfg, seed, root)
        test_rows = assigned.subset(Split.TEST)
        preds, subj = evaluate_model(model, assigned, root, test_rows)
        n_images += len(test_rows)
        runs.append(RunResult(seed, plcc(preds, subj), srocc(preds, subj),
                              len(test_rows)))
        if per_distortion:
            for entry, p, s in zip(test_rows, preds, subj):
                if entry.distortion and entry.distortion != "pristine":
                    tagged_preds.setdefault(entry.distortion, []).append(p)
                    tagged_subj.setdefault(entry.distortion, []).append(s)
    elapsed = time.perf_counter() - t0
    per_dist = {}
    for tag in tagged_preds:
        if len(tagged_preds[tag]) >= 2:
            per_dist[tag] = srocc(tagged_preds[tag], tagged_subj[tag])
    return EvaluationReport.from_runs(
        runs, per_dist, n_images / elapsed if elapsed > 0 else 0.0)
