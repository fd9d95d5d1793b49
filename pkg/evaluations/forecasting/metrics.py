import statistics
from typing import Dict, List, Any, Sequence
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import mean_absolute_error, mean_squared_error

from .errors import DivisionByZero, EmptySet, ShapeMismatch


@dataclass
class MetricPair:
    """MSE and MAE over instances x H x D"""
    mse: float
    mae: float
    n_instances: int

    def to_dict(self) -> Dict[str, Any]:
        return {"mse": self.mse, "mae": self.mae, "n_instances": self.n_instances}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "MetricPair":
        return cls(mse=float(raw["mse"]), mae=float(raw["mae"]), n_instances=int(raw["n_instances"]))


def metrics(y_hat: np.ndarray, y: np.ndarray) -> MetricPair:
    """Errors over a stack of forecasts (N, H, D); a single H x D forecast counts as one instance"""
    y_hat, y = np.asarray(y_hat, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeMismatch(f"prediction {y_hat.shape} vs target {y.shape}")
    if y.ndim == 2:
        y_hat, y = y_hat[None], y[None]
    if y.shape[0] == 0 or y.size == 0:
        raise EmptySet("no instances to score")
    flat_true, flat_pred = y.reshape(-1), y_hat.reshape(-1)
    return MetricPair(
        mse=float(mean_squared_error(flat_true, flat_pred)),
        mae=float(mean_absolute_error(flat_true, flat_pred)),
        n_instances=int(y.shape[0]),
    )


def improvement(base: Sequence[MetricPair], new: Sequence[MetricPair]) -> Dict[str, float]:
    """
    Relative error reduction of new over base, computed per horizon and then
    averaged; returned as percentages per metric.
    """
    if len(base) != len(new):
        raise ShapeMismatch(f"{len(base)} base horizons vs {len(new)} new horizons")
    if not base:
        raise EmptySet("no horizons to compare")
    out = {}
    for metric in ("mse", "mae"):
        ratios = []
        for b, n in zip(base, new):
            b_value, n_value = getattr(b, metric), getattr(n, metric)
            if b_value == 0:
                raise DivisionByZero(f"base {metric} is zero")
            ratios.append((b_value - n_value) / b_value)
        out[metric] = 100.0 * sum(ratios) / len(ratios)
    return out


def improvement_from_values(base_mse: Sequence[float], new_mse: Sequence[float]) -> float:
    """MSE-only improvement for published per-horizon columns"""
    base = [MetricPair(mse=v, mae=v, n_instances=1) for v in base_mse]
    new = [MetricPair(mse=v, mae=v, n_instances=1) for v in new_mse]
    return improvement(base, new)["mse"]


@dataclass
class MethodResult:
    """Per-horizon test metrics of one method under one seed"""
    method: str
    seed: int
    horizons: List[int]
    pairs: List[MetricPair]
    extra: Dict[str, Any] = field(default_factory=dict)


class MethodComparison:
    """Collects results of several normalization methods and compares them to a baseline"""

    def __init__(self, baseline: str):
        self.baseline = baseline
        self.results: List[MethodResult] = []

    def add(self, result: MethodResult) -> None:
        self.results.append(result)

    def methods(self) -> List[str]:
        seen = []
        for r in self.results:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def _by_seed(self, method: str) -> Dict[int, MethodResult]:
        return {r.seed: r for r in self.results if r.method == method}

    def wins(self, method: str, metric: str = "mse") -> Dict[str, int]:
        """Seeds where method's horizon-averaged metric beats the baseline's"""
        mine, base = self._by_seed(method), self._by_seed(self.baseline)
        shared = sorted(set(mine) & set(base))
        won = 0
        for seed in shared:
            ours = statistics.mean(getattr(p, metric) for p in mine[seed].pairs)
            theirs = statistics.mean(getattr(p, metric) for p in base[seed].pairs)
            won += ours < theirs
        return {"wins": won, "seeds": len(shared)}

    def compare_methods(self) -> Dict[str, Any]:
        """Per-method mean/std per horizon, improvement over baseline and win counts"""
        if not self.results:
            return {}

        comparison: Dict[str, Any] = {"baseline": self.baseline, "methods": {}}
        base_by_seed = self._by_seed(self.baseline)
        for method in self.methods():
            runs = self._by_seed(method)
            horizons = next(iter(runs.values())).horizons
            per_horizon = {}
            for i, H in enumerate(horizons):
                mses = [r.pairs[i].mse for r in runs.values()]
                maes = [r.pairs[i].mae for r in runs.values()]
                per_horizon[str(H)] = {
                    "mse_mean": statistics.mean(mses),
                    "mse_std": statistics.stdev(mses) if len(mses) > 1 else 0.0,
                    "mae_mean": statistics.mean(maes),
                    "mae_std": statistics.stdev(maes) if len(maes) > 1 else 0.0,
                }
            entry: Dict[str, Any] = {"per_horizon": per_horizon, "seeds": sorted(runs)}
            if method != self.baseline and base_by_seed:
                imps = [improvement(base_by_seed[s].pairs, runs[s].pairs)
                        for s in sorted(runs) if s in base_by_seed]
                if imps:
                    entry["improvement_vs_baseline"] = {
                        "mse": statistics.mean(i["mse"] for i in imps),
                        "mae": statistics.mean(i["mae"] for i in imps),
                    }
                entry["wins_vs_baseline"] = self.wins(method)
            comparison["methods"][method] = entry
        return comparison
