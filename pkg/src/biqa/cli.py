"""Command-line surface: gen-toy, train, predict, evaluate, extract-features, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
stdout carries data; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation as evaluation_mod
from . import features as features_mod
from . import pipeline as pipeline_mod
from . import rft as rft_mod
from . import toy as toy_mod
from .augment import AugmentConfig
from .dataset import Scenario, Split, load_manifest, save_manifest, split_manifest
from .errors import DataError
from .gbdt import GbdtConfig
from .timing import StageTimer

STAGE_ORDER = ("decode", "augment", "dct", "saab", "pooling", "regression")

IMAGE_SUFFIXES = {".png", ".bmp", ".jpg", ".jpeg"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_seeds(text: str):
    """Seed list syntax: '0..9' (inclusive range) or '0,3,7'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in text.split(",") if p]


def _parse_fractions(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated fractions, got {text!r}")
    return tuple(parts)


def _load_config(path):
    """Flat key=value overrides; '#' starts a comment line."""
    values = {}
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{p}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _effective(args, names_and_casts):
    """Merge precedence: built-in default < config file < explicit flag."""
    config = _load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for name, cast, default in names_and_casts:
        value = getattr(args, name, None)
        if value is None:
            if name in config:
                raw = config[name]
                value = (raw.lower() in ("1", "true", "yes")) if cast is bool \
                    else cast(raw)
            else:
                value = default
        out[name] = value
    unknown = set(config) - {n for n, _, _ in names_and_casts}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return out


def _apply_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    try:
        import numba
        numba.set_num_threads(n)
    except (ImportError, ValueError):
        pass  # worker count is a hint; results never depend on it


def _collect_images(args):
    if args.image and args.image_dir:
        raise UsageError("pass either --image or --image-dir, not both")
    if args.image:
        return [Path(args.image)]
    if args.image_dir:
        root = Path(args.image_dir)
        if not root.is_dir():
            raise DataError(f"image directory not found: {root}")
        paths = [p for p in root.iterdir()
                 if p.suffix.lower() in IMAGE_SUFFIXES]
        return sorted(paths)
    raise UsageError("one of --image or --image-dir is required")


# -- subcommands ----------------------------------------------------------------


def cmd_gen_toy(args) -> int:
    distortions = tuple(args.distortions.split(",")) if args.distortions \
        else toy_mod.DISTORTIONS
    try:
        spec = toy_mod.ToyDatasetSpec(
            n_references=args.refs, distortion_types=distortions,
            levels=args.levels, image_side=args.side, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = toy_mod.gen_toy(spec, args.out)
    print(f"{Path(args.out) / 'manifest.csv'}\t{len(manifest)} images")
    return 0


def _scenario_conflicts(args, scenario):
    if scenario is Scenario.SYNTHETIC:
        for flag in ("crop_count",):
            if getattr(args, flag, None) is not None:
                raise UsageError(
                    f"--{flag.replace('_', '-')} applies to authentic data only")
    else:
        for flag in ("patch_count", "patch_size"):
            if getattr(args, flag, None) is not None:
                raise UsageError(
                    f"--{flag.replace('_', '-')} applies to synthetic data only")


def _train_config(args, scenario) -> pipeline_mod.TrainConfig:
    knobs = _effective(args, [
        ("learning_rate", float, 0.05),
        ("max_depth", int, 5),
        ("n_estimators", int, 1000),
        ("early_stopping", int, 50),
        ("subsample", float, 1.0),
        ("rft_bins", int, rft_mod.DEFAULT_BINS),
        ("select_total", int, None),
        ("select_per_channel", int, None),
        ("patch_count", int, None),
        ("patch_size", int, None),
        ("crop_count", int, None),
        ("target_side", int, None),
    ])
    aug_kwargs = {}
    if knobs["patch_count"] is not None:
        aug_kwargs["patch_count"] = knobs["patch_count"]
    if knobs["patch_size"] is not None:
        aug_kwargs["patch_size"] = knobs["patch_size"]
    if knobs["crop_count"] is not None:
        aug_kwargs["crop_count"] = knobs["crop_count"]
    if knobs["target_side"] is not None:
        aug_kwargs["target_side"] = knobs["target_side"]
    aug = AugmentConfig(scenario, **aug_kwargs) if aug_kwargs else None
    per_channel = None
    if knobs["select_per_channel"] is not None:
        per_channel = {ch: knobs["select_per_channel"]
                       for ch in features_mod.CHANNELS}
    gb = GbdtConfig(
        learning_rate=knobs["learning_rate"], max_depth=knobs["max_depth"],
        n_estimators=knobs["n_estimators"],
        early_stopping_rounds=knobs["early_stopping"],
        subsample=knobs["subsample"])
    return pipeline_mod.TrainConfig(
        scenario, augment_cfg=aug, rft_bins=knobs["rft_bins"],
        select_total=knobs["select_total"], select_per_channel=per_channel,
        select_elbow=bool(args.elbow), gbdt=gb)


def _selected_counts(model: pipeline_mod.QualityModel) -> dict:
    meta = model.feature_params.column_meta()
    counts = {ch: 0 for ch in features_mod.CHANNELS}
    for col in model.selected:
        counts[meta[col].channel] += 1
    return counts


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    scenario = manifest.scenario
    if args.scenario:
        wanted = Scenario(args.scenario.capitalize())
        if wanted is not scenario:
            raise UsageError(
                f"--scenario {args.scenario} conflicts with manifest "
                f"scenario {scenario.value}")
    _scenario_conflicts(args, scenario)
    cfg = _train_config(args, scenario)
    if all(e.split is Split.UNASSIGNED for e in manifest.entries):
        fractions = _parse_fractions(args.fractions) if args.fractions \
            else pipeline_mod.DEFAULT_FRACTIONS
        manifest = split_manifest(manifest, args.seed, fractions)
    root = Path(args.manifest).parent
    model = pipeline_mod.train(manifest, cfg, args.seed, root)
    pipeline_mod.save_model(model, args.out_model)
    counts = _selected_counts(model)
    gb = model.gbdt
    train_rmse = gb.train_rmse[gb.n_trees_used - 1] if gb.n_trees_used else float("nan")
    val_rmse = gb.val_rmse[gb.n_trees_used - 1] if gb.n_trees_used else float("nan")
    print(f"model written to {args.out_model}")
    print(f"trees used: {gb.n_trees_used}")
    print(f"train rmse: {train_rmse:.6f}")
    print(f"val rmse:   {val_rmse:.6f}")
    print("selected features: "
          + ", ".join(f"{ch}={counts[ch]}" for ch in features_mod.CHANNELS))
    return 0


def cmd_predict(args) -> int:
    model = pipeline_mod.load_model(args.model)
    paths = _collect_images(args)
    results = []
    failures = 0
    for path in paths:
        try:
            score = pipeline_mod.predict_path(model, path)
        except DataError as exc:
            failures += 1
            print(f"warning: {exc}", file=sys.stderr)
            continue
        results.append((str(path), score))
    if args.json:
        print(json.dumps([{"path": p, "score": s} for p, s in results], indent=2))
    else:
        for p, s in results:
            print(f"{p}\t{s!r}")
    if paths and failures == len(paths):
        print("error: no image could be scored", file=sys.stderr)
        return 2
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _train_config(args, manifest.scenario)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    fractions = _parse_fractions(args.fractions) if args.fractions \
        else pipeline_mod.DEFAULT_FRACTIONS
    root = Path(args.manifest).parent
    report = evaluation_mod.run_protocol(
        manifest, cfg, seeds, root, fractions,
        per_distortion=bool(args.per_distortion))
    text = report.to_json() if args.json else report.to_text()
    print(text)
    if args.out_report:
        Path(args.out_report).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_extract_features(args) -> int:
    manifest = load_manifest(args.manifest)
    root = Path(args.manifest).parent
    if all(e.split is Split.UNASSIGNED for e in manifest.entries):
        manifest = split_manifest(manifest, args.seed,
                                  pipeline_mod.DEFAULT_FRACTIONS)
    cfg = _train_config(args, manifest.scenario)
    if args.params_from_model:
        model = pipeline_mod.load_model(args.params_from_model)
        params = model.feature_params
        cfg.augment_cfg = model.augment_cfg
    else:
        train_entries = manifest.subset(Split.TRAIN)
        if not train_entries:
            raise DataError("no train rows to fit feature parameters on")
        params = features_mod.fit_feature_params(
            lambda: pipeline_mod._iter_subimages(train_entries, cfg, root),
            cfg.pooling_window, cfg.spectral_region)
    entries = manifest.entries if args.all_rows \
        else manifest.subset(Split.TRAIN)
    values, targets, owners = pipeline_mod._feature_table(entries, cfg, root, params)
    meta = params.column_meta()
    np.savez_compressed(
        args.out, values=values, mos=targets, image_index=owners,
        channel=np.array([m.channel for m in meta]),
        hop=np.array([m.hop for m in meta], dtype=np.int64),
        coef=np.array([m.coef for m in meta], dtype=np.int64),
        stat=np.array([m.stat for m in meta]))
    print(f"{args.out}\t{values.shape[0]} rows x {values.shape[1]} columns")
    if args.cost_csv:
        if values.shape[0] < 2:
            raise DataError("need at least 2 rows to rank features")
        ranking = rft_mod.rank_features(values, targets, cfg.rft_bins, meta)
        with open(args.cost_csv, "w", encoding="utf-8") as fh:
            fh.write("column_index,channel,cost\n")
            for col in range(len(ranking.costs)):
                fh.write(f"{col},{meta[col].channel},{float(ranking.costs[col])!r}\n")
        print(f"{args.cost_csv}\t{len(ranking.costs)} costs")
    return 0


def cmd_bench(args) -> int:
    model = pipeline_mod.load_model(args.model)
    paths = _collect_images(args)
    if not paths:
        raise DataError(f"no images found in {args.image_dir}")
    timer = StageTimer()
    rates = []
    wall_total = 0.0
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        for path in paths:
            pipeline_mod.predict_path(model, path, timer)
        elapsed = time.perf_counter() - t0
        wall_total += elapsed
        rates.append(len(paths) / elapsed)
    print(f"images/sec: {statistics.median(rates):.3f} "
          f"(median of {args.repeat} runs, {len(paths)} images each)")
    print("stage breakdown:")
    for stage in STAGE_ORDER:
        sec = timer.seconds.get(stage, 0.0)
        print(f"  {stage:<12} {sec:8.3f} s  ({100.0 * sec / wall_total:5.1f}%)")
    print(f"  {'stage sum':<12} {timer.total():8.3f} s")
    print(f"  {'wall':<12} {wall_total:8.3f} s")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="biqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker hint; results are identical for any value")
        p.add_argument("--config", default=None,
                       help="flat key=value file; flags override it")

    p = sub.add_parser("gen-toy", help="render the procedural toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--refs", type=int, default=10)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--side", type=int, default=288)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distortions", default=None,
                   help=f"comma list from {','.join(toy_mod.DISTORTIONS)}")
    common(p)
    p.set_defaults(func=cmd_gen_toy)

    def train_like(p, with_model_out):
        p.add_argument("--manifest", required=True)
        if with_model_out:
            p.add_argument("--out-model", required=True)
        p.add_argument("--scenario", choices=["synthetic", "authentic"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--fractions", default=None,
                       help="train,val,test fractions (default 0.72,0.08,0.20)")
        p.add_argument("--learning-rate", type=float, default=None)
        p.add_argument("--max-depth", type=int, default=None)
        p.add_argument("--n-estimators", type=int, default=None)
        p.add_argument("--early-stopping", type=int, default=None)
        p.add_argument("--subsample", type=float, default=None)
        p.add_argument("--rft-bins", type=int, default=None)
        p.add_argument("--select-total", type=int, default=None)
        p.add_argument("--select-per-channel", type=int, default=None)
        p.add_argument("--elbow", action="store_true",
                       help="cut the cost curve at its elbow instead of fixed counts")
        p.add_argument("--patch-count", type=int, default=None)
        p.add_argument("--patch-size", type=int, default=None)
        p.add_argument("--crop-count", type=int, default=None)
        p.add_argument("--target-side", type=int, default=None)
        common(p)

    p = sub.add_parser("train", help="fit a model from a manifest")
    train_like(p, with_model_out=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score images with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--image-dir", default=None)
    p.add_argument("--json", action="store_true")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="repeated split/train/test protocol")
    train_like(p, with_model_out=False)
    p.add_argument("--seeds", default="0..9")
    p.add_argument("--per-distortion", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out-report", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("extract-features",
                       help="dump feature rows (and optional cost curve)")
    train_like(p, with_model_out=False)
    p.add_argument("--out", required=True, help="output .npz path")
    p.add_argument("--all-rows", action="store_true",
                   help="extract every manifest row, not just train")
    p.add_argument("--params-from-model", default=None)
    p.add_argument("--cost-csv", default=None)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("bench", help="throughput and stage timing")
    p.add_argument("--model", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--image-dir", default=None)
    p.add_argument("--repeat", type=int, default=3)
    common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(getattr(args, "threads", None))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
