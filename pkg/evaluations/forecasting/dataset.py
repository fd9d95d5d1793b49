"""
CSV loading, train-statistics standardization, 7:1:2 splitting and
sliding-window instance enumeration.
"""

import math
import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import DegenerateFeature, DimensionMismatch, EmptyDataset, ParseError, TooShort

Interval = Tuple[int, int]

DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class SeriesFrame:
    """Raw multivariate series: T rows by D features"""
    values: np.ndarray
    feature_names: List[str]
    timestamps: Optional[List[str]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch(f"values must be T x D, got shape {self.values.shape}")
        if self.values.shape[0] < 2:
            raise EmptyDataset(f"series needs at least 2 rows, got {self.values.shape[0]}")
        if len(self.feature_names) != self.values.shape[1]:
            raise DimensionMismatch(
                f"{len(self.feature_names)} feature names for {self.values.shape[1]} columns")
        if self.timestamps is not None and len(self.timestamps) != self.values.shape[0]:
            raise DimensionMismatch("timestamp count does not match row count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains NaN or Inf")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "SeriesFrame":
        return SeriesFrame(values, list(self.feature_names),
                           None if self.timestamps is None else list(self.timestamps))

    def truncate_features(self, max_features: Optional[int]) -> "SeriesFrame":
        """Keep the first K columns (the Traffic-s / ECL-s reduction)"""
        if max_features is None or max_features >= self.D:
            return self
        if max_features < 1:
            raise ValueError("max_features must be >= 1")
        return SeriesFrame(self.values[:, :max_features].copy(),
                           self.feature_names[:max_features],
                           None if self.timestamps is None else list(self.timestamps))


@dataclass
class StandardStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass
class SplitSpec:
    """Half-open, contiguous, ordered train < val < test intervals"""
    train_range: Interval
    val_range: Interval
    test_range: Interval


@dataclass
class InstancePair:
    x: np.ndarray  # L x D
    y: np.ndarray  # H x D
    origin_index: int


@dataclass
class WindowSet:
    """All instances of one split stacked as arrays: x (N, L, D), y (N, H, D)"""
    x: np.ndarray
    y: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def pairs(self) -> List[InstancePair]:
        return [InstancePair(self.x[i], self.y[i], int(self.origins[i])) for i in range(len(self))]


@dataclass
class PreparedData:
    frame: SeriesFrame  # standardized
    stats: StandardStats
    split: SplitSpec
    train: WindowSet
    val: Optional[WindowSet]
    test: WindowSet
    raw_train_values: np.ndarray = field(repr=False, default=None)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except (TypeError, ValueError):
        return False
    return True


def load_csv(path: str, has_timestamp_column: bool = False) -> SeriesFrame:
    """
    Load a comma-separated series file.

    A first row whose value cells are all non-numeric is taken as the header.
    ParseError rows are 1-based file lines, columns 0-based file columns.
    """
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                          skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyDataset(f"{path} is empty")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+), saw (\d+)", str(e))
        if match:
            raise ParseError(int(match.group(1)), int(match.group(2)) - 1)
        raise ParseError(-1, -1, str(e))

    first_value_col = 1 if has_timestamp_column else 0
    if raw.shape[1] <= first_value_col:
        raise EmptyDataset(f"{path} has no value columns")

    first_row = [str(c).strip() for c in raw.iloc[0, first_value_col:]]
    has_header = not any(_is_number(c) for c in first_row)
    if has_header:
        feature_names = first_row
        body = raw.iloc[1:].reset_index(drop=True)
        line_offset = 2
    else:
        feature_names = [f"f{k}" for k in range(raw.shape[1] - first_value_col)]
        body = raw
        line_offset = 1

    if len(body) < 2:
        raise EmptyDataset(f"{path} has {len(body)} data rows, need at least 2")

    cells = body.iloc[:, first_value_col:]
    values = cells.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = values.isna().to_numpy() | ~np.isfinite(values.to_numpy(dtype=np.float64))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(int(row) + line_offset, int(col) + first_value_col,
                         str(cells.iat[row, col]))

    timestamps = body.iloc[:, 0].astype(str).tolist() if has_timestamp_column else None
    return SeriesFrame(values.to_numpy(dtype=np.float64), feature_names, timestamps)


def make_split(T: int, ratios: Tuple[float, float, float] = DEFAULT_RATIOS) -> SplitSpec:
    """train gets floor(r0*T), val floor(r1*T), test the remainder"""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive numbers, got {ratios}")
    if sum(ratios) > 1 + 1e-9:
        raise ValueError(f"split ratios sum to {sum(ratios)} > 1")
    # the 1e-9 nudge keeps 0.7 * 17420 at 12194 despite binary rounding
    n_train = int(math.floor(ratios[0] * T + 1e-9))
    n_val = int(math.floor(ratios[1] * T + 1e-9))
    return SplitSpec((0, n_train), (n_train, n_train + n_val), (n_train + n_val, T))


def fit_standardizer(frame: SeriesFrame, split: SplitSpec) -> StandardStats:
    start, end = split.train_range
    train = frame.values[start:end]
    if train.shape[0] < 2:
        raise EmptyDataset(f"train range {split.train_range} needs at least 2 rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0, ddof=1)
    for k in range(frame.D):
        if std[k] == 0:
            raise DegenerateFeature(k, frame.feature_names[k])
    return StandardStats(mean=mean, std=std)


def apply_standardizer(frame: SeriesFrame, stats: StandardStats) -> SeriesFrame:
    if stats.mean.shape != (frame.D,) or stats.std.shape != (frame.D,):
        raise DimensionMismatch(f"stats for {stats.mean.shape} features, frame has {frame.D}")
    return frame.with_values((frame.values - stats.mean) / stats.std)


def window_set(frame: SeriesFrame, interval: Interval, L: int, H: int, stride: int = 1) -> WindowSet:
    """Stack every (lookback, horizon) pair that fits entirely inside interval"""
    if L < 2 or H < 1:
        raise ValueError(f"need L >= 2 and H >= 1, got L={L}, H={H}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    start, end = interval
    length = end - start
    if length < L + H:
        raise TooShort(f"interval {interval} of length {length} is shorter than L+H={L + H}")

    block = frame.values[start:end]
    # (n_windows, D, L+H) -> (n_windows, L+H, D)
    views = np.lib.stride_tricks.sliding_window_view(block, L + H, axis=0)[::stride]
    views = np.ascontiguousarray(views.transpose(0, 2, 1))
    origins = start + np.arange(views.shape[0]) * stride
    return WindowSet(x=views[:, :L, :].copy(), y=views[:, L:, :].copy(), origins=origins)


def windows(frame: SeriesFrame, interval: Interval, L: int, H: int, stride: int = 1) -> List[InstancePair]:
    return window_set(frame, interval, L, H, stride).pairs()


def prepare(frame: SeriesFrame, L: int, H: int, ratios: Tuple[float, float, float] = DEFAULT_RATIOS,
            stride: int = 1, max_features: Optional[int] = None) -> PreparedData:
    """Split, standardize with train statistics, and window each split on its own"""
    frame = frame.truncate_features(max_features)
    split = make_split(frame.T, ratios)
    stats = fit_standardizer(frame, split)
    standardized = apply_standardizer(frame, stats)

    train = window_set(standardized, split.train_range, L, H, stride)
    try:
        val = window_set(standardized, split.val_range, L, H, stride)
    except TooShort:
        val = None
    test = window_set(standardized, split.test_range, L, H, stride)
    return PreparedData(frame=standardized, stats=stats, split=split, train=train, val=val, test=test,
                        raw_train_values=frame.values[split.train_range[0]:split.train_range[1]])
