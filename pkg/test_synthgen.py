#!/usr/bin/env python3
"""
Tests for the regime-switching synthetic series generator
"""

import os
import sys
import tempfile

import numpy as np

from evaluations.forecasting.dataset import load_csv
from evaluations.forecasting.errors import ConfigError
from evaluations.forecasting.synthgen import SynthConfig, gen_piecewise, window_mean_dispersion, write_csv


def test_same_seed_is_bit_identical():
    cfg = SynthConfig(T=1000, D=3, var_drift_scale=0.2, seed=42)
    assert np.array_equal(gen_piecewise(cfg).values, gen_piecewise(cfg).values)
    other = gen_piecewise(SynthConfig(T=1000, D=3, var_drift_scale=0.2, seed=43))
    assert not np.array_equal(gen_piecewise(cfg).values, other.values)


def test_features_are_seeded_independently():
    # feature k only depends on seed ^ k, not on how many features are drawn
    narrow = gen_piecewise(SynthConfig(T=500, D=2, seed=9)).values
    wide = gen_piecewise(SynthConfig(T=500, D=4, seed=9)).values
    assert np.array_equal(narrow, wide[:, :2])


def test_zero_drift_is_stationary_noise():
    cfg = SynthConfig(T=4096, D=1, mean_drift_scale=0.0, var_drift_scale=0.0, ar_coeff=0.0, seed=0)
    values = gen_piecewise(cfg).values
    window_means = values[:4096].reshape(-1, 32).mean(axis=1)
    assert abs(window_means.mean()) < 0.1
    assert np.max(np.abs(window_means)) < 1.0
    assert abs(values.std() - 1.0) < 0.1


def test_mean_drift_inflates_window_mean_dispersion():
    drifted, flat = [], []
    for seed in range(20):
        base = dict(T=4096, D=1, regime_len_mean=32.0, ar_coeff=0.7, seed=seed)
        drifted.append(window_mean_dispersion(gen_piecewise(SynthConfig(mean_drift_scale=1.0, **base)).values))
        flat.append(window_mean_dispersion(gen_piecewise(SynthConfig(mean_drift_scale=0.0, **base)).values))
    assert np.mean(drifted) > 3.0 * np.mean(flat)


def test_variance_drift_changes_local_scale():
    cfg = SynthConfig(T=4096, D=1, mean_drift_scale=0.0, var_drift_scale=0.5, ar_coeff=0.0, seed=1)
    values = gen_piecewise(cfg).values[:, 0]
    local_std = values[:4096].reshape(-1, 64).std(axis=1)
    assert local_std.max() / local_std.min() > 2.0


def test_csv_round_trip_and_byte_identity():
    cfg = SynthConfig(T=300, D=2, var_drift_scale=0.1, seed=5)
    frame = gen_piecewise(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        first, second = os.path.join(tmp, "a.csv"), os.path.join(tmp, "b.csv")
        write_csv(frame, first)
        write_csv(gen_piecewise(cfg), second)
        with open(first, "rb") as f1, open(second, "rb") as f2:
            assert f1.read() == f2.read()
        loaded = load_csv(first, has_timestamp_column=True)
    assert loaded.feature_names == frame.feature_names
    assert np.allclose(loaded.values, frame.values, rtol=1e-14, atol=1e-14)


def test_config_validation():
    for bad in [dict(T=0), dict(D=0), dict(regime_len_mean=1.0), dict(ar_coeff=1.0),
                dict(noise_std=0.0), dict(mean_drift_scale=-1.0)]:
        try:
            SynthConfig(**bad)
            raise AssertionError(f"accepted {bad}")
        except ConfigError as e:
            assert e.field.startswith("synth")
    try:
        SynthConfig.from_dict({"T": 100, "drift": 1})
        raise AssertionError("accepted an unknown field")
    except ConfigError as e:
        assert e.field == "synth.drift"


def main():
    """Run all tests"""
    print("🚀 Starting synthgen tests")
    print("=" * 50)

    tests = [
        test_same_seed_is_bit_identical,
        test_features_are_seeded_independently,
        test_zero_drift_is_stationary_noise,
        test_mean_drift_inflates_window_mean_dispersion,
        test_variance_drift_changes_local_scale,
        test_csv_round_trip_and_byte_identity,
        test_config_validation,
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
