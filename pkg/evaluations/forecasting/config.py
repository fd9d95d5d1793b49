"""
Experiment configuration: one flat YAML document per experiment.

Every field has a default except the dataset block. Validation errors name the
offending field path (``normalizer.method``, ``train.lr``, ...).
"""

import os
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .backbones import BACKBONE_KINDS
from .dataset import DEFAULT_RATIOS
from .engine import TrainConfig
from .errors import ConfigError
from .normalizers import DEFAULT_EPS, NORMALIZER_METHODS
from .settings import BUILTIN_DATASETS, builtin_dataset_path, get_evaluation_config
from .synthgen import SynthConfig

# horizon -> lookback
LOOKBACK_PRESET = {24: 24, 48: 48, 96: 72, 168: 96, 192: 120, 336: 192, 720: 360}


def _reject_unknown(block: str, raw: Dict[str, Any], cls) -> None:
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{block}.{key}" if block else key, "unknown field")


def _as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {value!r}")
    return value


def _as_float(value: Any, path: str) -> float:
    # PyYAML reads "1e-4" (no dot) as a string
    try:
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}")


def _as_int(value: Any, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


@dataclass
class DatasetConfig:
    """Exactly one of path, name (builtin) or synth"""
    path: Optional[str] = None
    name: Optional[str] = None
    synth: Optional[SynthConfig] = None
    timestamp_column: Optional[bool] = None
    max_features: Optional[int] = None
    # synth only: draw the series with synth.seed + run seed, one series per seed
    reseed: bool = False

    @classmethod
    def from_dict(cls, raw: Any) -> "DatasetConfig":
        if isinstance(raw, str):
            raw = {"name": raw} if raw in BUILTIN_DATASETS else {"path": raw}
        if not isinstance(raw, dict):
            raise ConfigError("dataset", "expected a mapping, a builtin name or a CSV path")
        _reject_unknown("dataset", raw, cls)

        sources = [k for k in ("path", "name", "synth") if raw.get(k) is not None]
        if len(sources) != 1:
            raise ConfigError("dataset", "give exactly one of path, name or synth")

        synth = None
        if raw.get("synth") is not None:
            if not isinstance(raw["synth"], dict):
                raise ConfigError("dataset.synth", "expected a mapping")
            try:
                synth = SynthConfig.from_dict(raw["synth"])
            except ConfigError as e:
                raise ConfigError(f"dataset.{e.field}", e.message) from e
            except TypeError as e:
                raise ConfigError("dataset.synth", str(e)) from e

        name = raw.get("name")
        if name is not None and name not in BUILTIN_DATASETS:
            raise ConfigError("dataset.name", f"unknown builtin dataset {name!r}, "
                                              f"choose from {', '.join(BUILTIN_DATASETS)}")
        max_features = raw.get("max_features")
        if max_features is not None:
            _as_int(max_features, "dataset.max_features", 1)
        timestamp_column = raw.get("timestamp_column")
        if timestamp_column is not None:
            _as_bool(timestamp_column, "dataset.timestamp_column")
        reseed = _as_bool(raw.get("reseed", False), "dataset.reseed")
        if reseed and synth is None:
            raise ConfigError("dataset.reseed", "only synthetic datasets can be redrawn per seed")
        return cls(path=raw.get("path"), name=name, synth=synth,
                   timestamp_column=timestamp_column, max_features=max_features, reseed=reseed)

    def synth_for(self, run_seed: int) -> SynthConfig:
        if not self.reseed:
            return self.synth
        return replace(self.synth, seed=self.synth.seed + run_seed)

    def resolved_path(self) -> Optional[str]:
        if self.name is not None:
            return builtin_dataset_path(self.name)
        return self.path

    def has_timestamp_column(self) -> bool:
        if self.timestamp_column is not None:
            return self.timestamp_column
        # builtin benchmark files lead with a date column
        return self.name is not None

    def check_exists(self) -> None:
        path = self.resolved_path()
        if path is not None and not os.path.isfile(path):
            raise ConfigError("dataset.name" if self.name else "dataset.path", f"file not found: {path}")

    def to_dict(self) -> Dict[str, Any]:
        out = {"path": self.path, "name": self.name,
               "synth": self.synth.to_dict() if self.synth else None,
               "timestamp_column": self.timestamp_column, "max_features": self.max_features,
               "reseed": self.reseed or None}
        return {k: v for k, v in out.items() if v is not None}


@dataclass
class NormalizerConfig:
    method: str = "zscore"
    level: str = "point"
    individual: bool = True
    centered_input: bool = True
    use_scale: bool = False
    eps: float = DEFAULT_EPS
    freeze: bool = False
    label: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]], block: str = "normalizer") -> "NormalizerConfig":
        raw = raw or {}
        if isinstance(raw, str):
            raw = {"method": raw}
        _reject_unknown(block, raw, cls)
        cfg = cls(**raw)
        cfg.method = str(cfg.method).lower()
        if cfg.method not in NORMALIZER_METHODS:
            raise ConfigError(f"{block}.method", f"unknown normalizer {cfg.method!r}, "
                                                 f"choose from {', '.join(NORMALIZER_METHODS)}")
        if cfg.level not in ("point", "instance"):
            raise ConfigError(f"{block}.level", f"must be 'point' or 'instance', got {cfg.level!r}")
        for flag in ("individual", "centered_input", "use_scale", "freeze"):
            _as_bool(getattr(cfg, flag), f"{block}.{flag}")
        cfg.eps = _as_float(cfg.eps, f"{block}.eps")
        if cfg.eps <= 0:
            raise ConfigError(f"{block}.eps", f"must be > 0, got {cfg.eps}")
        return cfg

    @property
    def tag(self) -> str:
        """Name used for report files and comparison entries"""
        if self.label:
            return str(self.label)
        tag = self.method
        if self.level == "instance":
            tag += "-instance"
        if not self.individual:
            tag += "-shared"
        return tag

    def build_kwargs(self) -> Dict[str, Any]:
        return {"level": self.level, "individual": self.individual, "centered_input": self.centered_input,
                "use_scale": self.use_scale, "eps": self.eps}


@dataclass
class BackboneConfig:
    kind: str = "linear"
    individual: bool = True
    kernel_size: int = 25
    hidden: int = 64

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]]) -> "BackboneConfig":
        raw = raw or {}
        if isinstance(raw, str):
            raw = {"kind": raw}
        _reject_unknown("backbone", raw, cls)
        cfg = cls(**raw)
        cfg.kind = str(cfg.kind).lower()
        if cfg.kind not in BACKBONE_KINDS:
            raise ConfigError("backbone.kind", f"unknown backbone {cfg.kind!r}, "
                                               f"choose from {', '.join(BACKBONE_KINDS)}")
        _as_bool(cfg.individual, "backbone.individual")
        _as_int(cfg.kernel_size, "backbone.kernel_size", 1)
        _as_int(cfg.hidden, "backbone.hidden", 1)
        return cfg

    def build_kwargs(self) -> Dict[str, Any]:
        return {"individual": self.individual, "kernel_size": self.kernel_size, "hidden": self.hidden}


@dataclass
class GradcheckConfig:
    n_instances: int = 4
    draws: int = 3
    step: float = 1e-5
    tolerance: float = 1e-4
    max_params: int = 10000

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]]) -> "GradcheckConfig":
        raw = raw or {}
        _reject_unknown("gradcheck", raw, cls)
        cfg = cls(**raw)
        _as_int(cfg.n_instances, "gradcheck.n_instances", 1)
        _as_int(cfg.draws, "gradcheck.draws", 1)
        _as_int(cfg.max_params, "gradcheck.max_params", 1)
        cfg.step = _as_float(cfg.step, "gradcheck.step")
        cfg.tolerance = _as_float(cfg.tolerance, "gradcheck.tolerance")
        if not 1e-7 <= cfg.step <= 1e-3:
            raise ConfigError("gradcheck.step", f"must lie in [1e-7, 1e-3], got {cfg.step}")
        if cfg.tolerance <= 0:
            raise ConfigError("gradcheck.tolerance", f"must be > 0, got {cfg.tolerance}")
        return cfg


def _train_config(raw: Optional[Dict[str, Any]]) -> TrainConfig:
    raw = dict(raw or {})
    _reject_unknown("train", raw, TrainConfig)
    if "seed" in raw:
        raise ConfigError("train.seed", "seeds are set by the top-level seeds list")
    for name in ("batch_size", "max_epochs", "patience"):
        if name in raw:
            _as_int(raw[name], f"train.{name}")
    for name in ("lr", "norm_lr", "adam_beta1", "adam_beta2", "adam_eps"):
        if raw.get(name) is not None:
            raw[name] = _as_float(raw[name], f"train.{name}")
    try:
        return TrainConfig(**raw)
    except ValueError as e:
        field_name = str(e).split(" ", 1)[0]
        raise ConfigError(f"train.{field_name}", str(e)) from e


@dataclass
class ExperimentConfig:
    name: str
    dataset: DatasetConfig
    L: Union[int, str] = "preset"
    horizons: List[int] = field(default_factory=lambda: [96])
    stride: int = 1
    split: Tuple[float, float, float] = DEFAULT_RATIOS
    normalizer: NormalizerConfig = field(default_factory=NormalizerConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    out_dir: Optional[str] = None
    compare: List[NormalizerConfig] = field(default_factory=list)
    diagnostics: bool = False
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def lookback(self, H: int) -> int:
        """L for a horizon, either the fixed value or the preset pairing"""
        if self.L == "preset":
            return LOOKBACK_PRESET[H]
        return int(self.L)

    def results_dir(self) -> str:
        return self.out_dir or get_evaluation_config()["results_dir"]

    def methods(self) -> List[NormalizerConfig]:
        """The configured normalizer first, then every comparison entry with a new tag"""
        out = [self.normalizer]
        for entry in self.compare:
            if entry.tag not in [m.tag for m in out]:
                out.append(entry)
        return out

    def to_dict(self) -> Dict[str, Any]:
        """Canonical echo of the configuration, embedded in every report"""
        train = asdict(self.train)
        train.pop("seed")
        return {
            "name": self.name,
            "dataset": self.dataset.to_dict(),
            "L": self.L,
            "horizons": list(self.horizons),
            "stride": self.stride,
            "split": list(self.split),
            "normalizer": asdict(self.normalizer),
            "backbone": asdict(self.backbone),
            "train": train,
            "seeds": list(self.seeds),
            "compare": [asdict(c) for c in self.compare],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any], name: str = "experiment") -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("", "config document must be a mapping")
        _reject_unknown("", raw, cls)
        if raw.get("dataset") is None:
            raise ConfigError("dataset", "required")

        dataset = DatasetConfig.from_dict(raw["dataset"])
        normalizer = NormalizerConfig.from_dict(raw.get("normalizer"))
        backbone = BackboneConfig.from_dict(raw.get("backbone"))
        train = _train_config(raw.get("train"))
        gradcheck = GradcheckConfig.from_dict(raw.get("gradcheck"))

        horizons = raw.get("horizons", [96])
        if isinstance(horizons, int) and not isinstance(horizons, bool):
            horizons = [horizons]
        if not isinstance(horizons, list) or not horizons:
            raise ConfigError("horizons", "expected a non-empty list of integers")
        horizons = [_as_int(h, f"horizons[{i}]", 1) for i, h in enumerate(horizons)]

        L = raw.get("L", "preset")
        if L == "preset":
            for H in horizons:
                if H not in LOOKBACK_PRESET:
                    raise ConfigError("L", f"no preset lookback for H={H}; "
                                           f"preset horizons are {sorted(LOOKBACK_PRESET)}")
        else:
            L = _as_int(L, "L", 2)

        split = raw.get("split", list(DEFAULT_RATIOS))
        if not isinstance(split, (list, tuple)) or len(split) != 3 \
                or any(not isinstance(r, (int, float)) or r <= 0 for r in split) or sum(split) > 1 + 1e-9:
            raise ConfigError("split", f"expected three positive ratios summing to at most 1, got {split!r}")

        seeds = raw.get("seeds", [0])
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            seeds = [seeds]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "expected a non-empty list of integers")
        seeds = [_as_int(s, f"seeds[{i}]", 0) for i, s in enumerate(seeds)]

        compare = raw.get("compare", []) or []
        if not isinstance(compare, list):
            raise ConfigError("compare", "expected a list of normalizer methods or normalizer blocks")
        compare = [NormalizerConfig.from_dict(entry, block=f"compare[{i}]") for i, entry in enumerate(compare)]

        return cls(
            name=str(raw.get("name", name)),
            dataset=dataset,
            L=L,
            horizons=horizons,
            stride=_as_int(raw.get("stride", 1), "stride", 1),
            split=tuple(float(r) for r in split),
            normalizer=normalizer,
            backbone=backbone,
            train=train,
            seeds=seeds,
            out_dir=raw.get("out_dir"),
            compare=compare,
            diagnostics=_as_bool(raw.get("diagnostics", False), "diagnostics"),
            gradcheck=gradcheck,
        )


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a YAML experiment file; the file stem is the default run name"""
    if not os.path.isfile(path):
        raise ConfigError("config", f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError("config", f"invalid YAML: {e}") from e
    name = os.path.splitext(os.path.basename(path))[0]
    return ExperimentConfig.from_dict(raw or {}, name=name)
