#!/usr/bin/env python3
"""
Point-level normalization forecasting lab: experiment runner and CLI.

    python -m evaluations.forecasting.main run --config configs/synth_minimal.yaml
    python -m evaluations.forecasting.main synth --config configs/synth_data.yaml --out data/synth.csv
    python -m evaluations.forecasting.main gradcheck --config configs/lcd_as_gradcheck.yaml
    python -m evaluations.forecasting.main paramcount ld 7 96 96

Exit codes: 0 success, 1 check failure or run error, 2 configuration error.
"""

import os
import sys
import json
import time
import argparse
import dataclasses
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .backbones import build_backbone
from .config import ExperimentConfig, NormalizerConfig, load_config
from .dataset import SeriesFrame, load_csv, prepare
from .engine import Pipeline, grad_check, predict, train
from .errors import ConfigError, ForecastLabError, SingularRegression, UnknownMethod
from .metrics import MethodComparison, MethodResult, metrics
from .normalizers import allocated_param_count, build_normalizer, param_count
from .report import (HorizonResult, RunReport, config_hash, residual_step_stats, write_diagnostics_csv,
                     write_metrics_csv, write_report)
from .run_logging import get_logger
from .settings import get_evaluation_config
from .stationarity import adf_stat
from .synthgen import gen_piecewise, write_csv

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

STAND_IN_CAVEAT = ("backbones are desk-scale stand-ins (DLinear-lite, linear, MLP); "
                   "published numbers are a band to compare against, not an exact reproduction")


# ADF statistics reported in the literature for builtin train series
PUBLISHED_ADF = {"Exchange": -1.9}


def load_frame(cfg: ExperimentConfig, run_seed: int = 0) -> SeriesFrame:
    """The configured series: generated in memory for synth datasets, read from CSV otherwise"""
    if cfg.dataset.synth is not None:
        return gen_piecewise(cfg.dataset.synth_for(run_seed))
    cfg.dataset.check_exists()
    return load_csv(cfg.dataset.resolved_path(), has_timestamp_column=cfg.dataset.has_timestamp_column())


def build_pipeline(cfg: ExperimentConfig, norm_cfg: NormalizerConfig, D: int, L: int, H: int,
                   seed: int) -> Pipeline:
    normalizer = build_normalizer(norm_cfg.method, **norm_cfg.build_kwargs())
    backbone = build_backbone(cfg.backbone.kind, **cfg.backbone.build_kwargs())
    return Pipeline(normalizer, backbone, D, L, H, seed=seed)


def adf_diagnostics(train_values: np.ndarray, L: int, eps: float,
                    reference: Optional[float] = None) -> Dict[str, float]:
    """
    ADF statistic of the first feature's train series as stored, and after
    normalizing each step by the mean and std of the L steps before it.

    A published statistic for the same series, when known, is carried along
    as ``published_reference`` for side-by-side reading.
    """
    series = np.asarray(train_values, dtype=np.float64)[:, 0]
    out: Dict[str, float] = {}
    try:
        out["raw"] = adf_stat(series)
    except (SingularRegression, ValueError):
        out["raw"] = float("nan")

    if series.size > L + 2:
        past = np.lib.stride_tricks.sliding_window_view(series[:-1], L)
        current = series[L:]
        normalized = (current - past.mean(axis=1)) / (past.std(axis=1, ddof=1) + eps)
        try:
            out["instance_normalized"] = adf_stat(normalized)
        except (SingularRegression, ValueError):
            out["instance_normalized"] = float("nan")
    if reference is not None:
        out["published_reference"] = float(reference)
    return out


def run_seed(cfg: ExperimentConfig, frame: SeriesFrame, norm_cfg: NormalizerConfig, seed: int,
             verbose: bool = False) -> RunReport:
    """Train and test one pipeline per horizon under one seed"""
    logger = get_logger()
    start = time.time()
    train_cfg = dataclasses.replace(cfg.train, seed=seed, verbose=verbose or cfg.train.verbose,
                                    freeze_normalizer=cfg.train.freeze_normalizer or norm_cfg.freeze)
    config_echo = cfg.to_dict()
    config_echo["normalizer"] = dataclasses.asdict(norm_cfg)

    horizons: List[HorizonResult] = []
    caveats: List[str] = []
    evaluation_only = False
    diagnostics: Optional[Dict[str, Any]] = {"residuals": {}, "adf": {}} if cfg.diagnostics else None

    for H in cfg.horizons:
        L = cfg.lookback(H)
        run_name = f"{cfg.name}/{norm_cfg.tag}/seed{seed}/H{H}"
        data = prepare(frame, L, H, ratios=cfg.split, stride=cfg.stride,
                       max_features=cfg.dataset.max_features)
        pipe = build_pipeline(cfg, norm_cfg, data.frame.D, L, H, seed)

        if data.val is None:
            # nothing to early-stop on: score the freshly initialized pipeline
            evaluation_only = True
            caveats.append(f"H={H}: validation range shorter than L+H={L + H}, model evaluated untrained")
            logger.log_event(run_name, "evaluation_only", "validation split too short, training skipped")
            history: Dict[str, Any] = {}
        else:
            pipe, trained = train(pipe, data.train, data.val, train_cfg, run_name=run_name, logger=logger)
            history = trained.summary(include_wall_time=True)

        y_hat = predict(pipe, data.test.x)
        pair = metrics(y_hat, data.test.y)
        horizons.append(HorizonResult(H=H, L=L, metrics=pair, history=history,
                                      n_params=pipe.params.count(), n_norm_params=pipe.n_norm_params()))
        print(f"      ✅ {norm_cfg.tag} seed {seed} H={H} (L={L}): "
              f"MSE {pair.mse:.4f}, MAE {pair.mae:.4f}, {pair.n_instances} test windows")

        if diagnostics is not None:
            diagnostics["residuals"][str(H)] = residual_step_stats(y_hat, data.test.y)
            if not diagnostics["adf"]:
                diagnostics["adf"] = adf_diagnostics(data.raw_train_values, L, norm_cfg.eps,
                                                     reference=PUBLISHED_ADF.get(cfg.dataset.name))

    if cfg.dataset.name is not None:
        caveats.append(STAND_IN_CAVEAT)

    return RunReport(config=config_echo, config_hash=config_hash(config_echo), seed=seed, horizons=horizons,
                     evaluation_only=evaluation_only, wall_time=time.time() - start, caveats=caveats,
                     diagnostics=diagnostics)


def make_run_dir(results_dir: str, name: str) -> str:
    """<results>/<name>_<timestamp>/, recorded in <results>/LATEST"""
    stamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    run_dir = os.path.join(results_dir, f"{name}_{stamp}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(results_dir, "LATEST"), "w", encoding="utf-8") as f:
        f.write(run_dir + "\n")
    return run_dir


def run_experiment(cfg: ExperimentConfig, seeds: Optional[List[int]] = None, out_dir: Optional[str] = None,
                   verbose: bool = False, save_logs: bool = True) -> Dict[str, Any]:
    """
    Run every configured normalizer under every seed and write the reports.

    Returns a summary with the run directory, written files, per-method
    results and any per-seed errors.
    """
    seeds = seeds if seeds is not None else cfg.seeds
    methods = cfg.methods()
    primary = methods[0].tag

    print(f"🔬 Experiment {cfg.name}: {cfg.backbone.kind} backbone, "
          f"methods {', '.join(m.tag for m in methods)}, seeds {seeds}")
    print("=" * 60)

    frames: Dict[int, SeriesFrame] = {}
    for seed in (seeds if cfg.dataset.reseed else seeds[:1]):
        frames[seed] = load_frame(cfg, seed)
    first = next(iter(frames.values()))
    redrawn = ", one series per seed" if cfg.dataset.reseed else ""
    print(f"📍 Dataset: T={first.T}, D={first.D}, horizons {cfg.horizons}{redrawn}")

    run_dir = make_run_dir(out_dir or cfg.results_dir(), cfg.name)
    logger = get_logger()
    logger.reset()

    summary: Dict[str, Any] = {"run_dir": run_dir, "files": [], "errors": {}, "reports": {}}
    comparison = MethodComparison(baseline=primary)

    for norm_cfg in methods:
        reports: List[RunReport] = []
        print(f"   🏗️  Normalizer {norm_cfg.tag}")
        for seed in seeds:
            try:
                report = run_seed(cfg, frames.get(seed, first), norm_cfg, seed, verbose=verbose)
            except ForecastLabError as e:
                print(f"      ❌ Error in {norm_cfg.tag} seed {seed}: {e}")
                logger.log_event(f"{cfg.name}/{norm_cfg.tag}/seed{seed}", "error", str(e))
                summary["errors"][f"{norm_cfg.tag}/seed{seed}"] = {"error": str(e), "type": type(e).__name__}
                continue
            reports.append(report)
            comparison.add(MethodResult(method=norm_cfg.tag, seed=seed, horizons=list(cfg.horizons),
                                        pairs=report.metric_pairs()))
            stem = f"report_seed{seed}.json" if norm_cfg.tag == primary else f"report_{norm_cfg.tag}_seed{seed}.json"
            summary["files"].append(write_report(report, os.path.join(run_dir, stem)))

        summary["reports"][norm_cfg.tag] = reports
        if not reports:
            continue
        suffix = "" if norm_cfg.tag == primary else f"_{norm_cfg.tag}"
        summary["files"].append(write_metrics_csv(reports, os.path.join(run_dir, f"metrics{suffix}.csv")))
        if cfg.diagnostics:
            written = write_diagnostics_csv(reports, os.path.join(run_dir, f"diagnostics{suffix}.csv"))
            if written:
                summary["files"].append(written)

    if len(methods) > 1:
        summary["comparison"] = comparison.compare_methods()
        path = os.path.join(run_dir, "comparison.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(summary["comparison"], f, indent=2)
        summary["files"].append(path)
        print("📊 Comparison against", primary)
        for tag, entry in summary["comparison"]["methods"].items():
            if "improvement_vs_baseline" in entry:
                imp = entry["improvement_vs_baseline"]
                wins = entry["wins_vs_baseline"]
                print(f"   {tag}: MSE {imp['mse']:+.2f}%, MAE {imp['mae']:+.2f}%, "
                      f"wins {wins['wins']}/{wins['seeds']}")

    if save_logs:
        summary["log_files"] = logger.save_logs()
    print(f"💾 Results saved to {run_dir}")
    return summary


# ---------------------------------------------------------------------------
# subcommands

def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    summary = run_experiment(cfg, seeds=seeds, out_dir=args.out, verbose=args.verbose,
                             save_logs=not args.no_logs)
    if summary["errors"]:
        print(f"⚠️  {len(summary['errors'])} run(s) failed")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if cfg.dataset.synth is None:
        raise ConfigError("dataset.synth", "the synth command needs a synth dataset block")
    frame = gen_piecewise(cfg.dataset.synth)
    out = args.out or os.path.join(get_evaluation_config()["data_dir"], f"{cfg.name}.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_csv(frame, out)
    print(f"💾 Wrote {frame.T} x {frame.D} series to {out}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Finite-difference check of the configured pipeline at seeded random parameter draws"""
    cfg = load_config(args.config)
    gc = cfg.gradcheck
    frame = load_frame(cfg, cfg.seeds[0])
    logger = get_logger()
    worst = None

    for H in cfg.horizons:
        L = cfg.lookback(H)
        data = prepare(frame, L, H, ratios=cfg.split, stride=cfg.stride,
                       max_features=cfg.dataset.max_features)
        x, y = data.train.x[:gc.n_instances], data.train.y[:gc.n_instances]
        for norm_cfg in cfg.methods():
            for draw in range(gc.draws):
                seed = cfg.seeds[0] + draw
                pipe = build_pipeline(cfg, norm_cfg, data.frame.D, L, H, seed).randomize(seed)
                result = grad_check(pipe, x, y, step=gc.step, max_params=gc.max_params, seed=seed,
                                    corrupt=args.corrupt_gradient)
                ok = result.max_rel_error < gc.tolerance
                marker = "✅" if ok else "❌"
                print(f"   {marker} {norm_cfg.tag} + {cfg.backbone.kind}, H={H}, draw {draw}: "
                      f"max rel error {result.max_rel_error:.3e} at {result.worst_param}"
                      f"{list(result.worst_position)} ({result.n_checked}/{result.n_params} checked)")
                logger.log_event(f"{cfg.name}/{norm_cfg.tag}/H{H}", "gradcheck",
                                 f"draw {draw}", result.to_dict())
                if worst is None or result.max_rel_error > worst.max_rel_error:
                    worst = result

    if worst is None:
        return EXIT_OK
    print(f"📍 Worst coordinate: {worst.worst_param}{list(worst.worst_position)} "
          f"(flat index {worst.worst_index}), relative error {worst.max_rel_error:.3e}")
    return EXIT_OK if worst.max_rel_error < gc.tolerance else EXIT_FAILURE


VERIFIED_COUNTS = ("revin", "ld", "lcd-linear", "lcd-as")


def cmd_paramcount(args: argparse.Namespace) -> int:
    method = args.method.lower()
    count = param_count(method, args.D, args.L, args.H, args.P_slice)
    print(count)
    if method in VERIFIED_COUNTS and (method == "revin" or min(args.L, args.H) >= 1):
        allocated = allocated_param_count(method, args.D, args.L, args.H)
        if allocated != count:
            print(f"❌ {method} allocates {allocated} scalars, closed form says {count}")
            return EXIT_FAILURE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Point-level normalization forecasting lab")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS/OpenMP threads (values above 1 waive bit-for-bit determinism)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Train and test the configured pipelines")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help="Override the config's seed list")
    run.add_argument("--out", default=None, help="Results directory")
    run.add_argument("--verbose", action="store_true", help="Print one line per epoch")
    run.add_argument("--no-logs", action="store_true", help="Skip writing the session log files")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="Generate a synthetic series CSV")
    synth.add_argument("--config", required=True)
    synth.add_argument("--out", default=None)
    synth.set_defaults(func=cmd_synth)

    gc = sub.add_parser("gradcheck", help="Finite-difference gradient check")
    gc.add_argument("--config", required=True)
    gc.add_argument("--corrupt-gradient", action="store_true",
                    help="Double one analytic gradient entry to make sure the check fails")
    gc.set_defaults(func=cmd_gradcheck)

    pc = sub.add_parser("paramcount", help="Trainable parameters of a normalization model")
    pc.add_argument("method")
    pc.add_argument("D", type=int)
    pc.add_argument("L", type=int)
    pc.add_argument("H", type=int)
    pc.add_argument("P_slice", type=int, nargs="?", default=None)
    pc.set_defaults(func=cmd_paramcount)

    for p in (run, synth, gc, pc):
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("❌ --threads: must be >= 1")
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ConfigError, UnknownMethod) as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except ForecastLabError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILURE
    except ValueError as e:
        print(f"❌ Invalid input: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
