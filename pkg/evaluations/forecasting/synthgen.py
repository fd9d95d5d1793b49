"""
Regime-switching synthetic series with controllable inner-instance shift.

Every feature k draws from its own numpy PCG64 generator seeded with
``seed ^ k``, so features can be generated independently and in any order.
"""

from dataclasses import dataclass, asdict
from typing import Any, Dict

import numpy as np
import pandas as pd

from .dataset import SeriesFrame
from .errors import ConfigError


@dataclass
class SynthConfig:
    T: int = 4096
    D: int = 4
    regime_len_mean: float = 32.0
    mean_drift_scale: float = 0.5
    var_drift_scale: float = 0.0
    ar_coeff: float = 0.7
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("synth.T", f"must be >= 2, got {self.T}")
        if self.D < 1:
            raise ConfigError("synth.D", f"must be >= 1, got {self.D}")
        if self.regime_len_mean < 2:
            raise ConfigError("synth.regime_len_mean", f"must be >= 2, got {self.regime_len_mean}")
        if not -1 < self.ar_coeff < 1:
            raise ConfigError("synth.ar_coeff", f"must lie in (-1, 1), got {self.ar_coeff}")
        if self.noise_std <= 0:
            raise ConfigError("synth.noise_std", f"must be > 0, got {self.noise_std}")
        if self.mean_drift_scale < 0 or self.var_drift_scale < 0:
            raise ConfigError("synth", "drift scales must be >= 0")

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"synth.{sorted(unknown)[0]}", "unknown field")
        return cls(**raw)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _regime_ids(rng: np.random.Generator, T: int, regime_len_mean: float) -> np.ndarray:
    """Label each step with its regime; lengths are geometric with the given mean"""
    ids = np.empty(T, dtype=np.int64)
    pos, regime = 0, 0
    p = 1.0 / regime_len_mean
    while pos < T:
        length = int(rng.geometric(p))
        ids[pos:pos + length] = regime
        pos += length
        regime += 1
    return ids


def _gen_feature(config: SynthConfig, k: int) -> np.ndarray:
    rng = np.random.default_rng(config.seed ^ k)
    ids = _regime_ids(rng, config.T, config.regime_len_mean)
    n_regimes = int(ids[-1]) + 1

    level_steps = rng.normal(0.0, config.mean_drift_scale, size=n_regimes) if config.mean_drift_scale > 0 \
        else np.zeros(n_regimes)
    levels = np.cumsum(level_steps)
    log_scale_steps = rng.normal(0.0, config.var_drift_scale, size=n_regimes) if config.var_drift_scale > 0 \
        else np.zeros(n_regimes)
    scales = np.exp(np.cumsum(log_scale_steps))

    shocks = rng.normal(0.0, config.noise_std, size=config.T)
    noise = np.empty(config.T)
    noise[0] = shocks[0]
    for t in range(1, config.T):
        noise[t] = config.ar_coeff * noise[t - 1] + shocks[t]

    return levels[ids] + scales[ids] * noise


def gen_piecewise(config: SynthConfig) -> SeriesFrame:
    """AR(1) noise under piecewise-constant level and scale, one column per feature"""
    values = np.column_stack([_gen_feature(config, k) for k in range(config.D)])
    return SeriesFrame(values, [f"x{k}" for k in range(config.D)], [str(t) for t in range(config.T)])


def write_csv(frame: SeriesFrame, path: str) -> None:
    """Write in the layout load_csv(path, has_timestamp_column=True) reads back"""
    df = pd.DataFrame(frame.values, columns=frame.feature_names)
    stamps = frame.timestamps if frame.timestamps is not None else [str(t) for t in range(frame.T)]
    df.insert(0, "date", stamps)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def window_mean_dispersion(values: np.ndarray, window: int = 32) -> float:
    """Variance of non-overlapping window means, pooled over features"""
    n = (values.shape[0] // window) * window
    means = values[:n].reshape(-1, window, values.shape[1]).mean(axis=1)
    return float(means.var(axis=0, ddof=1).mean())
