import os
import json
import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .metrics import MetricPair

WALL_TIME_FIELDS = ("wall_time",)


def config_hash(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class HorizonResult:
    H: int
    L: int
    metrics: MetricPair
    history: Dict[str, Any] = field(default_factory=dict)
    n_params: int = 0
    n_norm_params: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "H": self.H,
            "L": self.L,
            "metrics": self.metrics.to_dict(),
            "history": self.history,
            "n_params": self.n_params,
            "n_norm_params": self.n_norm_params,
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "HorizonResult":
        return cls(H=int(raw["H"]), L=int(raw["L"]), metrics=MetricPair.from_dict(raw["metrics"]),
                   history=raw.get("history", {}), n_params=int(raw.get("n_params", 0)),
                   n_norm_params=int(raw.get("n_norm_params", 0)))


@dataclass
class RunReport:
    """Everything needed to reproduce and judge one seed of one experiment"""
    config: Dict[str, Any]
    config_hash: str
    seed: int
    horizons: List[HorizonResult]
    evaluation_only: bool = False
    wall_time: float = 0.0
    caveats: List[str] = field(default_factory=list)
    diagnostics: Optional[Dict[str, Any]] = None

    def metric_pairs(self) -> List[MetricPair]:
        return [h.metrics for h in self.horizons]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "evaluation_only": self.evaluation_only,
            "horizons": [h.to_dict() for h in self.horizons],
            "caveats": list(self.caveats),
            "diagnostics": self.diagnostics,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunReport":
        return cls(config=raw["config"], config_hash=raw["config_hash"], seed=int(raw["seed"]),
                   horizons=[HorizonResult.from_dict(h) for h in raw["horizons"]],
                   evaluation_only=bool(raw.get("evaluation_only", False)),
                   wall_time=float(raw.get("wall_time", 0.0)), caveats=list(raw.get("caveats", [])),
                   diagnostics=raw.get("diagnostics"))


def report_to_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=True) + "\n"


def report_from_json(text: str) -> RunReport:
    return RunReport.from_dict(json.loads(text))


def write_report(report: RunReport, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(report_to_json(report))
    return path


def metrics_frame(reports: List[RunReport]) -> pd.DataFrame:
    rows = [{"seed": r.seed, "horizon": h.H, "mse": h.metrics.mse, "mae": h.metrics.mae}
            for r in reports for h in r.horizons]
    frame = pd.DataFrame(rows, columns=["seed", "horizon", "mse", "mae"])
    return frame.sort_values(["seed", "horizon"], kind="mergesort").reset_index(drop=True)


def write_metrics_csv(reports: List[RunReport], path: str) -> str:
    metrics_frame(reports).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def residual_step_stats(y_hat: np.ndarray, y: np.ndarray) -> Dict[str, List[float]]:
    """Mean and std of (ŷ - y) at each horizon step, pooled over instances and features"""
    resid = np.asarray(y_hat) - np.asarray(y)
    per_step = resid.transpose(1, 0, 2).reshape(resid.shape[1], -1)
    return {
        "residual_mean": per_step.mean(axis=1).tolist(),
        "residual_std": per_step.std(axis=1).tolist(),
    }


def write_diagnostics_csv(reports: List[RunReport], path: str) -> Optional[str]:
    rows = []
    for r in reports:
        if not r.diagnostics:
            continue
        for H, stats in sorted(r.diagnostics.get("residuals", {}).items(), key=lambda kv: int(kv[0])):
            for step, (mean, std) in enumerate(zip(stats["residual_mean"], stats["residual_std"])):
                rows.append({"seed": r.seed, "horizon": int(H), "kind": "residual", "step": step,
                             "value": mean, "aux": std})
        for name, value in sorted(r.diagnostics.get("adf", {}).items()):
            rows.append({"seed": r.seed, "horizon": -1, "kind": f"adf_{name}", "step": -1,
                         "value": value, "aux": float("nan")})
    if not rows:
        return None
    pd.DataFrame(rows, columns=["seed", "horizon", "kind", "step", "value", "aux"]).to_csv(
        path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def strip_wall_time(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Copy of a report dict without wall-clock fields, for reproducibility comparisons"""
    if isinstance(raw, dict):
        return {k: strip_wall_time(v) for k, v in raw.items() if k not in WALL_TIME_FIELDS}
    if isinstance(raw, list):
        return [strip_wall_time(v) for v in raw]
    return raw
