"""Exceptions raised across the forecasting lab."""

from typing import Optional


class ForecastLabError(Exception):
    """Base class for every error raised by the lab"""


class ParseError(ForecastLabError, ValueError):
    def __init__(self, row: int, col: int, cell: str = ""):
        self.row = row
        self.col = col
        self.cell = cell
        super().__init__(f"cannot parse cell at row {row}, column {col}: {cell!r}")


class EmptyDataset(ForecastLabError, ValueError):
    pass


class TooShort(ForecastLabError, ValueError):
    pass


class DegenerateFeature(ForecastLabError, ValueError):
    def __init__(self, feature: int, name: Optional[str] = None):
        self.feature = feature
        label = f"{feature} ({name})" if name else str(feature)
        super().__init__(f"feature {label} has zero standard deviation on the train split")


class DimensionMismatch(ForecastLabError, ValueError):
    pass


class ShapeMismatch(ForecastLabError, ValueError):
    pass


class DivisionByZero(ForecastLabError, ZeroDivisionError):
    pass


class UnknownMethod(ForecastLabError, ValueError):
    pass


class NonFiniteActivation(ForecastLabError, ArithmeticError):
    def __init__(self, stage: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        where = ""
        if epoch is not None:
            where = f" (epoch {epoch}, batch {batch})" if batch is not None else f" (epoch {epoch}, validation)"
        super().__init__(f"non-finite values after {stage}{where}")


class SingularRegression(ForecastLabError, ArithmeticError):
    pass


class EmptySet(ForecastLabError, ValueError):
    pass


class ConfigError(ForecastLabError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")
