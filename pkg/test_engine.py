#!/usr/bin/env python3
"""
Tests for the pipeline engine: forward, exact backward, gradient checking,
Adam and the early-stopping training loop
"""

import sys

import numpy as np
from sklearn.linear_model import LinearRegression

from evaluations.forecasting.backbones import build_backbone
from evaluations.forecasting.dataset import WindowSet
from evaluations.forecasting.engine import (NORM_PREFIX, AdamMoments, Pipeline, TrainConfig, adam_step, backward,
                                            evaluate_mse, forward, grad_check, loss_and_grad, loss_mse, train)
from evaluations.forecasting.errors import EmptySet, NonFiniteActivation, ShapeMismatch
from evaluations.forecasting.normalizers import build_normalizer
from evaluations.forecasting.run_logging import RunLogger

NORMALIZER_VARIANTS = [
    ("zscore", {}),
    ("revin", {}),
    ("ld", {}),
    ("ld", {"level": "instance"}),
    ("ld", {"use_scale": True}),
    ("lcd-linear", {}),
    ("lcd-linear", {"level": "instance"}),
    ("lcd-as", {}),
]


def _pipe(method="zscore", backbone="linear", D=2, L=6, H=3, seed=0, hidden=8, kernel_size=3, **flags):
    return Pipeline(build_normalizer(method, **flags),
                    build_backbone(backbone, hidden=hidden, kernel_size=kernel_size),
                    D=D, L=L, H=H, seed=seed)


def _windows(x, y) -> WindowSet:
    return WindowSet(x=x, y=y, origins=np.arange(x.shape[0]))


def _linear_task(n, L=4, H=2, noise=0.3, seed=0):
    """Lookbacks with targets that are an exact linear map plus Gaussian noise"""
    rng = np.random.default_rng(seed)
    W = np.random.default_rng(100).normal(scale=0.5, size=(H, L))
    b = np.array([0.3, -0.2][:H])
    x = rng.normal(size=(n, L, 1))
    y = np.einsum("nt,bt->bn", W, x[:, :, 0])[:, :, None] + b[None, :, None]
    return x, y + noise * rng.normal(size=y.shape)


# ---------------------------------------------------------------------------
# forward / loss

def test_forward_examples():
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(5, 2))

    ld = _pipe("ld", "identity", L=5, H=5)
    y_hat, _ = forward(ld, x)
    assert np.max(np.abs(y_hat - x)) < 1e-12

    lcd = _pipe("lcd-linear", "identity", L=5, H=5)
    y_hat, _ = forward(lcd, x)
    assert np.allclose(y_hat, x - x.mean(axis=0))

    mean_head = _pipe("zscore", "linear", L=5, H=3)
    mean_head.params.tensors["backbone.W"][:] = 1.0 / 5
    mean_head.params.tensors["backbone.b"][:] = 0.0
    y_hat, _ = forward(mean_head, x)
    assert np.allclose(y_hat, np.tile(x.mean(axis=0), (3, 1)))


def test_forward_rejects_bad_input():
    pipe = _pipe()
    try:
        forward(pipe, np.zeros((4, 5, 2)))
        raise AssertionError("expected ShapeMismatch")
    except ShapeMismatch:
        pass
    x = np.zeros((6, 2))
    x[2, 1] = np.nan
    try:
        forward(pipe, x)
        raise AssertionError("expected NonFiniteActivation")
    except NonFiniteActivation as e:
        assert e.stage == "input"


def test_loss_mse_examples():
    a = np.random.default_rng(1).normal(size=(4, 3))
    assert loss_mse(a, a) == 0.0
    assert loss_mse(a + 2.0, a) == 4.0
    assert loss_mse(np.array([[0.0], [2.0]]), np.array([[1.0], [0.0]])) == 2.5


# ---------------------------------------------------------------------------
# backward

def test_gradient_vanishes_at_least_squares_optimum():
    x, y = _linear_task(64, L=4, H=2, seed=1)
    pipe = _pipe("none", "linear", D=1, L=4, H=2)
    design = np.hstack([x[:, :, 0], np.ones((64, 1))])
    coef, *_ = np.linalg.lstsq(design, y[:, :, 0], rcond=None)
    pipe.params.tensors["backbone.W"][0] = coef[:4].T
    pipe.params.tensors["backbone.b"][0] = coef[4]
    _, grad = loss_and_grad(pipe, x, y)
    assert np.linalg.norm(grad) < 1e-8


def test_ld_shift_gradient_formula():
    rng = np.random.default_rng(2)
    pipe = _pipe("ld", "linear", D=2, L=6, H=3).randomize(3)
    x, y = rng.normal(size=(5, 6, 2)), rng.normal(size=(5, 3, 2))
    y_hat, trace = forward(pipe, x)
    grad = backward(pipe, trace, y)

    ctx = trace.norm_state.ctx
    d_y_hat = 2.0 * (y_hat - y) / y.size
    expected = (d_y_hat * (ctx.sigma_x[:, None, :] + ctx.eps)).sum(axis=0)
    got = grad[pipe.params.slice_of("norm.P")].reshape(pipe.params["norm.P"].shape)
    assert np.allclose(got, expected, rtol=1e-10, atol=1e-14)


def test_gradient_is_linear_in_residual():
    rng = np.random.default_rng(4)
    for method, flags in [("ld", {}), ("lcd-as", {})]:
        pipe = _pipe(method, "mlp", **flags).randomize(5)
        x, y = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 3, 2))
        y_hat, _ = forward(pipe, x)
        _, g = loss_and_grad(pipe, x, y)
        # targets pushed away from the forecast so every residual doubles
        _, g_doubled = loss_and_grad(pipe, x, y_hat - 2.0 * (y_hat - y))
        assert np.allclose(g_doubled, 2.0 * g, rtol=1e-9, atol=1e-13), method


def test_joint_optimization_reaches_normalizer():
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(8, 6, 2)), rng.normal(size=(8, 3, 2))
    for method, names in [("ld", ("norm.A", "norm.P")), ("lcd-linear", ("norm.h", "norm.f"))]:
        pipe = _pipe(method, "linear", seed=1)
        _, grad = loss_and_grad(pipe, x, y)
        assert grad.size == pipe.params.count()
        for name in names:
            assert np.any(grad[pipe.params.slice_of(name)] != 0.0), (method, name)


# ---------------------------------------------------------------------------
# gradient check

def test_grad_check_every_combination():
    rng = np.random.default_rng(7)
    x, y = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 3, 2))
    for backbone in ("identity", "linear", "dlinear", "mlp"):
        for method, flags in NORMALIZER_VARIANTS:
            for draw in range(3):
                pipe = _pipe(method, backbone, seed=draw, **flags).randomize(10 + draw)
                result = grad_check(pipe, x, y, step=1e-5)
                assert result.max_rel_error < 1e-4, (backbone, method, flags, draw, result.to_dict())


def test_grad_check_linear_pipeline_is_exact():
    x, y = _linear_task(16, seed=8)
    pipe = _pipe("none", "linear", D=1, L=4, H=2, seed=2)
    result = grad_check(pipe, x, y)
    assert result.max_rel_error < 1e-7
    assert result.n_checked == result.n_params == pipe.params.count()


def test_grad_check_notices_corruption():
    x, y = _linear_task(16, seed=9)
    pipe = _pipe("none", "linear", D=1, L=4, H=2, seed=3)
    result = grad_check(pipe, x, y + 10.0, corrupt=True)
    assert result.max_rel_error > 0.3


def test_grad_check_subsets_large_models():
    rng = np.random.default_rng(11)
    pipe = _pipe("lcd-linear", "linear", D=2, L=6, H=3).randomize(1)
    x, y = rng.normal(size=(2, 6, 2)), rng.normal(size=(2, 3, 2))
    result = grad_check(pipe, x, y, max_params=10, seed=4)
    assert result.n_checked == 10 and result.n_params > 10
    try:
        grad_check(pipe, x, y, step=1e-2)
        raise AssertionError("accepted a step outside [1e-7, 1e-3]")
    except ValueError:
        pass


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_gradient():
    cfg = TrainConfig(lr=0.1)
    params = np.array([1.0, -2.0])
    moments = AdamMoments(m=np.array([0.5, 0.5]), v=np.array([0.0, 0.0]))
    new, new_moments = adam_step(params, np.zeros(2), moments, 1, cfg)
    assert np.allclose(new_moments.m, 0.9 * moments.m)
    fresh, _ = adam_step(params, np.zeros(2), AdamMoments.zeros(2), 1, cfg)
    assert np.array_equal(fresh, params)


def test_adam_first_step_has_magnitude_lr():
    cfg = TrainConfig(lr=1e-3)
    params = np.zeros(3)
    new, _ = adam_step(params, np.array([0.5, -4.0, 1e-2]), AdamMoments.zeros(3), 1, cfg)
    assert np.allclose(new, [-1e-3, 1e-3, -1e-3], rtol=1e-4)


def test_adam_per_coordinate_step_size():
    cfg = TrainConfig(lr=1e-3)
    new, _ = adam_step(np.zeros(3), np.array([0.5, -4.0, 2.0]), AdamMoments.zeros(3), 1, cfg,
                       lr=np.array([1e-3, 1e-2, 1e-1]))
    assert np.allclose(new, [-1e-3, 1e-2, -1e-1], rtol=1e-4)


def test_adam_descends_a_parabola():
    cfg = TrainConfig(lr=0.1)
    w, moments = np.array([1.0]), AdamMoments.zeros(1)
    previous = w.copy()
    for t in (1, 2):
        w, moments = adam_step(w, 2.0 * w, moments, t, cfg)
        assert w[0] < previous[0]
        previous = w.copy()


def test_adam_rejects_step_zero():
    try:
        adam_step(np.zeros(1), np.zeros(1), AdamMoments.zeros(1), 0, TrainConfig())
        raise AssertionError("expected ValueError")
    except ValueError:
        pass


def test_train_config_validation():
    for bad in [dict(lr=0.0), dict(batch_size=0), dict(patience=-1), dict(max_epochs=0), dict(norm_lr=0.0)]:
        try:
            TrainConfig(**bad)
            raise AssertionError(f"accepted {bad}")
        except ValueError:
            pass


# ---------------------------------------------------------------------------
# training

def _quiet() -> RunLogger:
    return RunLogger(log_dir="logs")


def test_patience_zero_runs_one_epoch():
    x, y = _linear_task(200, seed=12)
    pipe = _pipe("none", "linear", D=1, L=4, H=2)
    _, history = train(pipe, _windows(x[:150], y[:150]), _windows(x[150:], y[150:]),
                       TrainConfig(patience=0, max_epochs=10), logger=_quiet())
    assert history.epochs_run == 1 and history.best_epoch == 0


def test_training_is_deterministic():
    x, y = _linear_task(300, seed=13)
    train_set, val_set = _windows(x[:240], y[:240]), _windows(x[240:], y[240:])
    cfg = TrainConfig(lr=1e-2, batch_size=32, max_epochs=4, patience=4, seed=5)
    runs = []
    for _ in range(2):
        pipe, history = train(_pipe("ld", "mlp", D=1, L=4, H=2, seed=1), train_set, val_set, cfg,
                              logger=_quiet())
        runs.append((pipe.params.flat(), history))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1].summary(include_wall_time=False) == runs[1][1].summary(include_wall_time=False)


def test_training_reaches_noise_floor():
    x, y = _linear_task(2400, seed=14)
    x_train, y_train, x_val, y_val = x[:2000], y[:2000], x[2000:], y[2000:]

    oracle = LinearRegression().fit(x_train[:, :, 0], y_train[:, :, 0])
    floor = float(np.mean((oracle.predict(x_val[:, :, 0]) - y_val[:, :, 0]) ** 2))

    cfg = TrainConfig(lr=5e-3, batch_size=128, max_epochs=60, patience=60, seed=0)
    pipe, history = train(_pipe("none", "linear", D=1, L=4, H=2), _windows(x_train, y_train),
                          _windows(x_val, y_val), cfg, logger=_quiet())
    assert evaluate_mse(pipe, _windows(x_val, y_val)) <= 1.1 * floor
    assert history.best_val_loss == min(history.val_loss)


def test_frozen_neutral_normalizers_match_plain_pipelines():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(160, 6, 2)).cumsum(axis=1)
    y = x[:, -3:, :] + 0.1 * rng.normal(size=(160, 3, 2))
    train_set, val_set = _windows(x[:128], y[:128]), _windows(x[128:], y[128:])
    cfg = TrainConfig(lr=1e-2, batch_size=16, max_epochs=3, patience=3, freeze_normalizer=True)

    for method, plain in [("ld", "zscore"), ("lcd-linear", "center"), ("lcd-as", "center")]:
        _, frozen = train(_pipe(method, "linear", seed=2), train_set, val_set, cfg, logger=_quiet())
        _, reference = train(_pipe(plain, "linear", seed=2), train_set, val_set, cfg, logger=_quiet())
        assert abs(frozen.best_val_loss - reference.best_val_loss) < 1e-9, method


def test_training_aborts_on_non_finite_input():
    x, y = _linear_task(40, seed=16)
    x[3, 1, 0] = np.nan
    try:
        train(_pipe("none", "linear", D=1, L=4, H=2), _windows(x, y), _windows(x[:5], y[:5]),
              TrainConfig(batch_size=64), logger=_quiet())
        raise AssertionError("expected NonFiniteActivation")
    except NonFiniteActivation as e:
        assert (e.epoch, e.batch) == (0, 0)


def test_training_reports_epoch_of_non_finite_validation():
    x, y = _linear_task(40, seed=18)
    x_val = x[:5].copy()
    x_val[2, 0, 0] = np.inf
    try:
        train(_pipe("none", "linear", D=1, L=4, H=2), _windows(x, y), _windows(x_val, y[:5]),
              TrainConfig(batch_size=64), logger=_quiet())
        raise AssertionError("expected NonFiniteActivation")
    except NonFiniteActivation as e:
        assert (e.epoch, e.batch) == (0, None)
        assert "epoch 0, validation" in str(e)


def test_normalizer_learning_rate_applies_to_norm_tensors_only():
    x, y = _linear_task(64, seed=19)
    pipe = _pipe("ld", "linear", D=1, L=4, H=2, seed=3)
    norm = pipe.params.slice_of(NORM_PREFIX)
    before = pipe.params.flat().copy()
    cfg = TrainConfig(lr=1e-8, norm_lr=1e-2, batch_size=64, max_epochs=1, patience=1)
    pipe, _ = train(pipe, _windows(x, y), _windows(x[:8], y[:8]), cfg, logger=_quiet())
    moved = np.abs(pipe.params.flat() - before)
    assert moved[norm].max() > 5e-3
    assert moved[~norm].max() <= 1.0001e-8


def test_training_needs_validation_windows():
    x, y = _linear_task(20, seed=17)
    empty = _windows(np.zeros((0, 4, 1)), np.zeros((0, 2, 1)))
    for train_set, val_set in [(_windows(x, y), empty), (empty, _windows(x, y))]:
        try:
            train(_pipe("none", "linear", D=1, L=4, H=2), train_set, val_set, TrainConfig(), logger=_quiet())
            raise AssertionError("expected EmptySet")
        except EmptySet:
            pass


def main():
    """Run all tests"""
    print("🚀 Starting engine tests")
    print("=" * 50)

    tests = [
        test_forward_examples,
        test_forward_rejects_bad_input,
        test_loss_mse_examples,
        test_gradient_vanishes_at_least_squares_optimum,
        test_ld_shift_gradient_formula,
        test_gradient_is_linear_in_residual,
        test_joint_optimization_reaches_normalizer,
        test_grad_check_every_combination,
        test_grad_check_linear_pipeline_is_exact,
        test_grad_check_notices_corruption,
        test_grad_check_subsets_large_models,
        test_adam_zero_gradient,
        test_adam_first_step_has_magnitude_lr,
        test_adam_per_coordinate_step_size,
        test_adam_descends_a_parabola,
        test_adam_rejects_step_zero,
        test_train_config_validation,
        test_patience_zero_runs_one_epoch,
        test_training_is_deterministic,
        test_training_reaches_noise_floor,
        test_frozen_neutral_normalizers_match_plain_pipelines,
        test_training_aborts_on_non_finite_input,
        test_training_reports_epoch_of_non_finite_validation,
        test_normalizer_learning_rate_applies_to_norm_tensors_only,
        test_training_needs_validation_windows,
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
