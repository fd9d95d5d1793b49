#!/usr/bin/env python3
"""
Tests for metrics, improvement percentages, method comparison, the ADF
statistic and run reports
"""

import json
import math
import os
import sys
import tempfile

import numpy as np

from evaluations.forecasting.config import ExperimentConfig
from evaluations.forecasting.errors import DivisionByZero, EmptySet, ShapeMismatch, SingularRegression
from evaluations.forecasting.main import adf_diagnostics, load_frame, run_seed
from evaluations.forecasting.metrics import (MethodComparison, MethodResult, MetricPair, improvement,
                                             improvement_from_values, metrics)
from evaluations.forecasting.report import (HorizonResult, RunReport, config_hash, report_from_json,
                                            report_to_json, residual_step_stats, strip_wall_time,
                                            write_diagnostics_csv, write_metrics_csv)
from evaluations.forecasting.stationarity import adf_design, adf_stat, schwert_lag

# Informer on Electricity, horizons 24, 48, 168, 336 and 720: base MSE and the same backbone with LD
ELECTRICITY_BASE_MSE = [0.258, 0.359, 0.349, 0.448, 0.463]
ELECTRICITY_LD_MSE = [0.145, 0.170, 0.196, 0.212, 0.243]
# Dickey-Fuller critical value, constant only, 5% level
ADF_CRITICAL_5PCT = -2.86


def _pair(mse, mae=None):
    return MetricPair(mse=mse, mae=mse if mae is None else mae, n_instances=1)


# ---------------------------------------------------------------------------
# metrics / improvement

def test_metrics_examples():
    y = np.random.default_rng(0).normal(size=(3, 4, 2))
    assert metrics(y, y) == MetricPair(0.0, 0.0, 3)
    shifted = metrics(y + 2.0, y)
    assert math.isclose(shifted.mse, 4.0) and math.isclose(shifted.mae, 2.0)

    pair = metrics(np.array([[1.0, -1.0], [0.0, 0.0]]), np.zeros((2, 2)))
    assert (pair.mse, pair.mae, pair.n_instances) == (0.5, 0.5, 1)


def test_metrics_errors_and_permutation():
    try:
        metrics(np.zeros((0, 4, 2)), np.zeros((0, 4, 2)))
        raise AssertionError("expected EmptySet")
    except EmptySet:
        pass
    try:
        metrics(np.zeros((2, 4, 2)), np.zeros((2, 3, 2)))
        raise AssertionError("expected ShapeMismatch")
    except ShapeMismatch:
        pass

    rng = np.random.default_rng(1)
    y_hat, y = rng.normal(size=(20, 4, 2)), rng.normal(size=(20, 4, 2))
    order = rng.permutation(20)
    a, b = metrics(y_hat, y), metrics(y_hat[order], y[order])
    assert math.isclose(a.mse, b.mse, rel_tol=1e-12) and math.isclose(a.mae, b.mae, rel_tol=1e-12)


def test_improvement_examples():
    result = improvement([_pair(0.2), _pair(0.4)], [_pair(0.1), _pair(0.3)])
    assert math.isclose(result["mse"], 37.5)
    same = improvement([_pair(0.2, 0.3)], [_pair(0.2, 0.3)])
    assert same == {"mse": 0.0, "mae": 0.0}


def test_improvement_reproduces_published_average():
    value = improvement_from_values(ELECTRICITY_BASE_MSE, ELECTRICITY_LD_MSE)
    assert abs(value - 48.05) < 0.05


def test_improvement_sign_and_errors():
    base, better = [_pair(0.5), _pair(0.8)], [_pair(0.4), _pair(0.6)]
    assert improvement(base, better)["mse"] > 0
    assert improvement(better, base)["mse"] < 0
    try:
        improvement([_pair(0.0)], [_pair(0.1)])
        raise AssertionError("expected DivisionByZero")
    except DivisionByZero:
        pass
    try:
        improvement([_pair(0.1)], [_pair(0.1), _pair(0.2)])
        raise AssertionError("expected ShapeMismatch")
    except ShapeMismatch:
        pass


def test_method_comparison():
    comparison = MethodComparison(baseline="zscore")
    for seed in range(3):
        comparison.add(MethodResult("zscore", seed, [24, 48], [_pair(0.4), _pair(0.5)]))
        ld = [_pair(0.3), _pair(0.45)] if seed < 2 else [_pair(0.5), _pair(0.6)]
        comparison.add(MethodResult("ld", seed, [24, 48], ld))

    assert comparison.methods() == ["zscore", "ld"]
    assert comparison.wins("ld") == {"wins": 2, "seeds": 3}
    summary = comparison.compare_methods()
    entry = summary["methods"]["ld"]
    assert set(entry["per_horizon"]) == {"24", "48"}
    assert math.isclose(entry["per_horizon"]["24"]["mse_mean"], (0.3 + 0.3 + 0.5) / 3)
    assert "improvement_vs_baseline" not in summary["methods"]["zscore"]
    assert entry["wins_vs_baseline"]["wins"] == 2


# ---------------------------------------------------------------------------
# ADF

def _brute_force_adf(series, max_lag):
    X, dy = adf_design(series, max_lag)
    beta, *_ = np.linalg.lstsq(X, dy, rcond=None)
    resid = dy - X @ beta
    sigma2 = resid @ resid / (X.shape[0] - X.shape[1])
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return beta[1] / np.sqrt(cov[1, 1])


def test_schwert_lag():
    assert schwert_lag(500) == 17
    assert schwert_lag(100) == 12


def test_adf_white_noise_and_random_walk():
    noise = np.random.default_rng(0).normal(size=500)
    assert adf_stat(noise, max_lag=1) < -10
    # default lag (17 at n=500): still rejects a unit root at the 5% level
    assert adf_stat(noise) < ADF_CRITICAL_5PCT

    walks = [adf_stat(np.random.default_rng(seed).normal(size=500).cumsum()) for seed in range(10)]
    assert np.mean(walks) > -2.5
    # roughly 3 in 10 unit-root draws land below -2, so count instead of requiring every seed
    assert sum(w > -2 for w in walks) >= 4, walks


def _ar1(phi: float, n: int, seed: int) -> np.ndarray:
    eps = np.random.default_rng(seed).normal(size=n)
    series = np.zeros(n)
    for t in range(1, n):
        series[t] = phi * series[t - 1] + eps[t]
    return series


def test_adf_stationary_below_random_walk_every_seed():
    for seed in range(10):
        stationary = adf_stat(_ar1(0.3, 500, seed))
        walk = adf_stat(np.random.default_rng(1000 + seed).normal(size=500).cumsum())
        assert stationary < walk, (seed, stationary, walk)


def test_adf_orders_by_persistence():
    stats = [adf_stat(_ar1(phi, 600, seed=3)) for phi in (0.2, 0.8, 0.98)]
    assert stats[0] < stats[1] < stats[2]


def test_adf_matches_least_squares_oracle():
    series = np.random.default_rng(4).normal(size=200).cumsum() * 0.1 + np.random.default_rng(5).normal(size=200)
    for lag in (0, 2, 5):
        assert abs(adf_stat(series, max_lag=lag) - _brute_force_adf(series, lag)) < 1e-8


def test_adf_shift_invariance_and_errors():
    series = np.random.default_rng(6).normal(size=300)
    assert math.isclose(adf_stat(series), adf_stat(series + 50.0), rel_tol=1e-8)
    try:
        adf_stat(np.full(100, 3.0))
        raise AssertionError("expected SingularRegression")
    except SingularRegression:
        pass
    try:
        adf_stat(np.arange(5.0), max_lag=3)
        raise AssertionError("expected ValueError")
    except ValueError:
        pass


def test_adf_diagnostics_instance_normalization():
    rng = np.random.default_rng(7)
    series = rng.normal(size=1000).cumsum()[:, None]
    stats = adf_diagnostics(series, L=24, eps=1e-5)
    assert set(stats) == {"raw", "instance_normalized"}
    assert stats["instance_normalized"] < stats["raw"]

    with_reference = adf_diagnostics(series, L=24, eps=1e-5, reference=-1.9)
    assert with_reference["published_reference"] == -1.9
    assert with_reference["raw"] == stats["raw"]


# ---------------------------------------------------------------------------
# reports

def _report(seed=0, wall_time=1.5):
    config = {"name": "demo", "horizons": [24, 48]}
    horizons = [HorizonResult(H=24, L=24, metrics=MetricPair(0.31, 0.42, 100),
                              history={"epochs_run": 3, "best_epoch": 1, "wall_time": 0.7}, n_params=1200,
                              n_norm_params=96),
                HorizonResult(H=48, L=48, metrics=MetricPair(0.35, 0.47, 76), n_params=4704)]
    diagnostics = {"residuals": {"24": {"residual_mean": [0.1, -0.2], "residual_std": [1.0, 1.1]}},
                   "adf": {"raw": -2.1, "instance_normalized": -9.4}}
    return RunReport(config=config, config_hash=config_hash(config), seed=seed, horizons=horizons,
                     wall_time=wall_time, caveats=["stand-in backbone"], diagnostics=diagnostics)


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_report_round_trip():
    report = _report()
    again = report_from_json(report_to_json(report))
    assert again.to_dict() == report.to_dict()
    assert again.metric_pairs() == report.metric_pairs()
    assert list(json.loads(report_to_json(report))) == ["config", "config_hash", "seed", "evaluation_only",
                                                        "horizons", "caveats", "diagnostics", "wall_time"]


def test_strip_wall_time():
    a, b = _report(wall_time=1.0).to_dict(), _report(wall_time=9.0).to_dict()
    assert a != b
    assert strip_wall_time(a) == strip_wall_time(b)
    assert "wall_time" not in strip_wall_time(a)["horizons"][0]["history"]


def test_metrics_and_diagnostics_csv():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_metrics_csv([_report(seed=1), _report(seed=0)], os.path.join(tmp, "metrics.csv"))
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines[0] == "seed,horizon,mse,mae"
        assert lines[1] == "0,24,0.31,0.42" and len(lines) == 5

        path = write_diagnostics_csv([_report()], os.path.join(tmp, "diagnostics.csv"))
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines[0] == "seed,horizon,kind,step,value,aux"
        assert sum(line.split(",")[2] == "residual" for line in lines[1:]) == 2
        assert {line.split(",")[2] for line in lines[1:]} >= {"adf_raw", "adf_instance_normalized"}

        bare = RunReport(config={}, config_hash="", seed=0, horizons=[])
        assert write_diagnostics_csv([bare], os.path.join(tmp, "none.csv")) is None


def test_residual_step_stats():
    y = np.zeros((4, 3, 2))
    y_hat = np.zeros((4, 3, 2))
    y_hat[:, 2, :] = 1.0
    stats = residual_step_stats(y_hat, y)
    assert stats["residual_mean"] == [0.0, 0.0, 1.0]
    assert stats["residual_std"] == [0.0, 0.0, 0.0]


def test_short_validation_split_is_evaluation_only():
    cfg = ExperimentConfig.from_dict({
        "dataset": {"synth": {"T": 200, "D": 2, "seed": 3}},
        "L": 8,
        "horizons": [4],
        "split": [0.8, 0.05, 0.15],
        "train": {"max_epochs": 2},
    }, name="short_val")
    report = run_seed(cfg, load_frame(cfg), cfg.normalizer, seed=0)
    assert report.evaluation_only
    assert report.horizons[0].history == {}
    assert any("evaluated untrained" in c for c in report.caveats)
    assert report.to_dict()["evaluation_only"] is True


def main():
    """Run all tests"""
    print("🚀 Starting eval tests")
    print("=" * 50)

    tests = [
        test_metrics_examples,
        test_metrics_errors_and_permutation,
        test_improvement_examples,
        test_improvement_reproduces_published_average,
        test_improvement_sign_and_errors,
        test_method_comparison,
        test_schwert_lag,
        test_adf_white_noise_and_random_walk,
        test_adf_stationary_below_random_walk_every_seed,
        test_adf_orders_by_persistence,
        test_adf_matches_least_squares_oracle,
        test_adf_shift_invariance_and_errors,
        test_adf_diagnostics_instance_normalization,
        test_config_hash_is_order_independent,
        test_report_round_trip,
        test_strip_wall_time,
        test_metrics_and_diagnostics_csv,
        test_residual_step_stats,
        test_short_validation_split_is_evaluation_only,
    ]
    passed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
            passed += 1
        except Exception as e:
            print(f"❌ {test.__name__}: {type(e).__name__}: {e}")

    print("\n" + "=" * 50)
    print(f"📊 Test Results: {passed}/{len(tests)} passed")
    return 0 if passed == len(tests) else 1


if __name__ == "__main__":
    sys.exit(main())
