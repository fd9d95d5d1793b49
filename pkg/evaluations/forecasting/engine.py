"""
Normalizer + backbone pipeline: forward, exact backward, finite-difference
gradient check, Adam, and the early-stopping training loop.
"""

import time
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .backbones import Backbone
from .dataset import WindowSet
from .errors import EmptySet, NonFiniteActivation, ShapeMismatch
from .normalizers import Normalizer, NormState
from .params import ModelParams
from .run_logging import RunLogger, get_logger

NORM_PREFIX = "norm."
BACKBONE_PREFIX = "backbone."


class Pipeline:
    """
    One trainable forecaster G(x) = denorm(g_theta(norm(x))).

    Normalizer tensors live under "norm.", backbone tensors under
    "backbone."; both are optimized jointly.
    """

    def __init__(self, normalizer: Normalizer, backbone: Backbone, D: int, L: int, H: int, seed: int = 0):
        self.normalizer = normalizer
        self.backbone = backbone
        self.D, self.L, self.H = D, L, H
        self.params = ModelParams()
        for name, value in normalizer.allocate(D, L, H).items():
            self.params.add(NORM_PREFIX + name, value)
        for name, value in backbone.allocate(D, L, H, np.random.default_rng(seed)).items():
            self.params.add(BACKBONE_PREFIX + name, value)

    @property
    def eps(self) -> float:
        return self.normalizer.eps

    def _group(self, prefix: str) -> Dict[str, np.ndarray]:
        return {name[len(prefix):]: self.params[name] for name in self.params.names(prefix)}

    def norm_params(self) -> Dict[str, np.ndarray]:
        return self._group(NORM_PREFIX)

    def backbone_params(self) -> Dict[str, np.ndarray]:
        return self._group(BACKBONE_PREFIX)

    def n_norm_params(self) -> int:
        return self.params.count(NORM_PREFIX)

    def randomize(self, seed: int, scale: float = 0.3) -> "Pipeline":
        """Perturb every trainable scalar around its initial value (for gradient checks)"""
        rng = np.random.default_rng(seed)
        for name in self.params:
            value = self.params[name]
            self.params.tensors[name] = value + scale * rng.standard_normal(value.shape)
        return self

    def describe(self) -> Dict[str, Any]:
        return {
            "normalizer": self.normalizer.describe(),
            "backbone": self.backbone.describe(),
            "D": self.D, "L": self.L, "H": self.H,
            "n_params": self.params.count(),
            "n_norm_params": self.n_norm_params(),
        }


@dataclass
class Trace:
    """Intermediate activations of one forward pass"""
    x: np.ndarray
    norm_state: NormState
    x_tilde: np.ndarray
    backbone_cache: Dict[str, Any]
    y_tilde: np.ndarray
    y_hat: np.ndarray
    squeeze: bool = False


def _check_finite(arr: np.ndarray, stage: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivation(stage)


def forward(pipe: Pipeline, x: np.ndarray) -> Tuple[np.ndarray, Trace]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (pipe.L, pipe.D):
        raise ShapeMismatch(f"pipeline expects (B, {pipe.L}, {pipe.D}), got {x.shape}")
    _check_finite(x, "input")

    norm_p = pipe.norm_params()
    x_tilde, state = pipe.normalizer.normalize(x, norm_p)
    _check_finite(x_tilde, "normalize")
    y_tilde, cache = pipe.backbone.forward(x_tilde, pipe.backbone_params())
    _check_finite(y_tilde, "backbone")
    y_hat = pipe.normalizer.denormalize(y_tilde, norm_p, state)
    _check_finite(y_hat, "denormalize")

    trace = Trace(x=x, norm_state=state, x_tilde=x_tilde, backbone_cache=cache,
                  y_tilde=y_tilde, y_hat=y_hat, squeeze=squeeze)
    return (y_hat[0] if squeeze else y_hat), trace


def loss_mse(y_hat: np.ndarray, y: np.ndarray) -> float:
    y_hat, y = np.asarray(y_hat), np.asarray(y)
    if y_hat.shape != y.shape:
        raise ShapeMismatch(f"prediction {y_hat.shape} vs target {y.shape}")
    return float(np.mean((y_hat - y) ** 2))


def _merge(*grad_dicts: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    merged: Dict[str, np.ndarray] = {}
    for grads in grad_dicts:
        for name, g in grads.items():
            merged[name] = merged[name] + g if name in merged else g
    return merged


def backward(pipe: Pipeline, trace: Trace, y: np.ndarray) -> np.ndarray:
    """Exact gradient of loss_mse over every trainable scalar, in flat order"""
    y = np.asarray(y, dtype=np.float64)
    if trace.squeeze:
        y = y[None]
    if y.shape != trace.y_hat.shape:
        raise ShapeMismatch(f"target {y.shape} vs prediction {trace.y_hat.shape}")

    d_y_hat = 2.0 * (trace.y_hat - y) / y.size
    norm_p = pipe.norm_params()
    d_y_tilde, g_denorm = pipe.normalizer.denormalize_backward(d_y_hat, norm_p, trace.norm_state)
    d_x_tilde, g_backbone = pipe.backbone.backward(d_y_tilde, pipe.backbone_params(), trace.backbone_cache)
    g_norm = pipe.normalizer.normalize_backward(d_x_tilde, norm_p, trace.norm_state)

    grads = {NORM_PREFIX + n: g for n, g in _merge(g_denorm, g_norm).items()}
    grads.update({BACKBONE_PREFIX + n: g for n, g in g_backbone.items()})
    return pipe.params.flatten_like(grads)


def loss_and_grad(pipe: Pipeline, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    y_hat, trace = forward(pipe, x)
    return loss_mse(y_hat, y), backward(pipe, trace, y)


# ---------------------------------------------------------------------------
# gradient check

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    worst_param: str
    worst_position: Tuple[int, ...]
    n_checked: int
    n_params: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def grad_check(pipe: Pipeline, x: np.ndarray, y: np.ndarray, step: float = 1e-5,
               max_params: int = 10000, seed: int = 0, corrupt: bool = False) -> GradCheckResult:
    """
    Compare backward() against central differences.

    Above max_params a seeded random subset of coordinates is checked.
    corrupt doubles the largest analytic entry, to prove the checker notices.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"finite-difference step must lie in [1e-7, 1e-3], got {step}")
    _, analytic = loss_and_grad(pipe, x, y)
    n_params = analytic.size
    if n_params == 0:
        return GradCheckResult(0.0, -1, "", (), 0, 0)
    if corrupt:
        analytic = analytic.copy()
        analytic[int(np.argmax(np.abs(analytic)))] *= 2.0

    if n_params > max_params:
        indices = np.sort(np.random.default_rng(seed).choice(n_params, size=max_params, replace=False))
    else:
        indices = np.arange(n_params)

    worst, worst_index = -1.0, int(indices[0])
    for index in indices:
        name, position = pipe.params.locate(int(index))
        tensor = pipe.params.tensors[name]
        original = tensor[position]
        tensor[position] = original + step
        loss_plus = loss_mse(forward(pipe, x)[0], y)
        tensor[position] = original - step
        loss_minus = loss_mse(forward(pipe, x)[0], y)
        tensor[position] = original
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        g = analytic[index]
        rel = abs(g - numeric) / max(1.0, abs(g), abs(numeric))
        if rel > worst:
            worst, worst_index = rel, int(index)

    name, position = pipe.params.locate(worst_index)
    return GradCheckResult(max_rel_error=float(worst), worst_index=worst_index, worst_param=name,
                           worst_position=position, n_checked=int(indices.size), n_params=int(n_params))


# ---------------------------------------------------------------------------
# Adam

@dataclass
class TrainConfig:
    lr: float = 1e-4
    # Adam step size for the norm.* tensors, lr when unset
    norm_lr: Optional[float] = None
    batch_size: int = 128
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_normalizer: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.norm_lr is not None and self.norm_lr <= 0:
            raise ValueError(f"norm_lr must be > 0, got {self.norm_lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamMoments":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, moments: AdamMoments, t: int,
              cfg: TrainConfig, lr: Optional[Any] = None) -> Tuple[np.ndarray, AdamMoments]:
    """
    One bias-corrected Adam update; returns new arrays, inputs are left untouched.

    ``lr`` overrides ``cfg.lr`` and may be a per-coordinate array.
    """
    if t < 1:
        raise ValueError(f"Adam step index starts at 1, got {t}")
    if params.shape != grads.shape or params.shape != moments.m.shape:
        raise ShapeMismatch("params, grads and moments must have the same shape")
    m = cfg.adam_beta1 * moments.m + (1.0 - cfg.adam_beta1) * grads
    v = cfg.adam_beta2 * moments.v + (1.0 - cfg.adam_beta2) * (grads * grads)
    bc1 = 1.0 - cfg.adam_beta1 ** t
    bc2 = 1.0 - cfg.adam_beta2 ** t
    denom = np.sqrt(v / bc2) + cfg.adam_eps
    step_size = cfg.lr if lr is None else lr
    return params - (step_size / bc1) * m / denom, AdamMoments(m, v)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    wall_time: float = 0.0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def summary(self, include_wall_time: bool = True) -> Dict[str, Any]:
        out = {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_early": self.stopped_early,
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
        }
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out


def predict(pipe: Pipeline, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Forecasts for a stack of lookbacks, evaluated in chunks"""
    outputs = [forward(pipe, x[i:i + chunk])[0] for i in range(0, x.shape[0], chunk)]
    return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, pipe.H, pipe.D))


def evaluate_mse(pipe: Pipeline, data: WindowSet, chunk: int = 1024) -> float:
    if len(data) == 0:
        raise EmptySet("cannot evaluate on an empty window set")
    return loss_mse(predict(pipe, data.x, chunk), data.y)


def train(pipe: Pipeline, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig,
          run_name: str = "run", logger: Optional[RunLogger] = None) -> Tuple[Pipeline, TrainHistory]:
    """Mini-batch Adam with per-epoch validation, patience stopping and best-epoch restore"""
    if train_set is None or len(train_set) == 0:
        raise EmptySet("training needs a non-empty train set")
    if val_set is None or len(val_set) == 0:
        raise EmptySet("training needs a non-empty validation set")

    logger = logger or get_logger()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    start = time.time()

    flat = pipe.params.flat()
    moments = AdamMoments.zeros(flat.size)
    frozen = pipe.params.slice_of(NORM_PREFIX) if cfg.freeze_normalizer else None
    lr = None
    if cfg.norm_lr is not None:
        lr = np.full(flat.size, cfg.lr)
        lr[pipe.params.slice_of(NORM_PREFIX)] = cfg.norm_lr
    best_flat = flat.copy()
    epochs_since_best = 0
    step = 0
    n = len(train_set)

    logger.log_event(run_name, "start", "training started",
                     {"n_train": n, "n_val": len(val_set), "n_params": int(flat.size)})

    for epoch in range(cfg.max_epochs):
        epoch_start = time.time()
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for batch_index, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            try:
                loss, grad = loss_and_grad(pipe, train_set.x[idx], train_set.y[idx])
            except NonFiniteActivation as e:
                logger.log_event(run_name, "error", str(e), {"epoch": epoch, "batch": batch_index})
                raise NonFiniteActivation(e.stage, epoch, batch_index) from e
            if frozen is not None:
                grad[frozen] = 0.0
            step += 1
            flat, moments = adam_step(flat, grad, moments, step, cfg, lr=lr)
            pipe.params.set_flat(flat)
            total += loss * idx.size
            seen += idx.size

        train_loss = total / seen
        try:
            val_loss = evaluate_mse(pipe, val_set)
        except NonFiniteActivation as e:
            logger.log_event(run_name, "error", str(e), {"epoch": epoch, "stage": "validation"})
            raise NonFiniteActivation(e.stage, epoch, None) from e
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)

        improved = val_loss < history.best_val_loss
        if improved:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_flat = flat.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1

        logger.log_epoch(run_name, epoch, train_loss, val_loss, improved, time.time() - epoch_start)
        if cfg.verbose:
            marker = "✅" if improved else "  "
            print(f"      {marker} epoch {epoch + 1}: train {train_loss:.5f}, val {val_loss:.5f}")

        if epochs_since_best >= cfg.patience:
            history.stopped_early = epoch + 1 < cfg.max_epochs
            break

    pipe.params.set_flat(best_flat)
    logger.log_event(run_name, "restore_best", f"restored epoch {history.best_epoch}",
                     {"best_val_loss": history.best_val_loss})
    history.wall_time = time.time() - start
    return pipe, history
