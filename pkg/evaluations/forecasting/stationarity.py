"""Augmented Dickey-Fuller t-statistic, constant-only regression, fixed lag order."""

import math
from typing import Optional

import numpy as np

from .errors import SingularRegression


def schwert_lag(n: int) -> int:
    """floor(12 * (n / 100) ** 0.25)"""
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_design(series: np.ndarray, max_lag: int):
    """
    Regression Δy_t = α + γ y_{t-1} + Σ_{i=1..p} δ_i Δy_{t-i} + ε_t
    for t = p+1 .. n-1; returns (X, dy) with columns [1, y_{t-1}, Δy_{t-1}, ...].
    """
    y = np.asarray(series, dtype=np.float64).ravel()
    dy = np.diff(y)
    n_obs = dy.size - max_lag
    columns = [np.ones(n_obs), y[max_lag:-1]]
    for i in range(1, max_lag + 1):
        columns.append(dy[max_lag - i:dy.size - i])
    return np.column_stack(columns), dy[max_lag:]


def adf_stat(series: np.ndarray, max_lag: Optional[int] = None) -> float:
    """More negative means stronger evidence against a unit root"""
    y = np.asarray(series, dtype=np.float64).ravel()
    if max_lag is None:
        max_lag = schwert_lag(y.size)
    if max_lag < 0:
        raise ValueError(f"max_lag must be >= 0, got {max_lag}")
    if y.size <= max_lag + 2:
        raise ValueError(f"series of length {y.size} is too short for {max_lag} lags")

    X, target = adf_design(y, max_lag)
    dof = X.shape[0] - X.shape[1]
    if dof <= 0:
        raise SingularRegression(f"{X.shape[0]} observations for {X.shape[1]} regressors")

    # OLS via the normal equations
    xtx = X.T @ X
    if not np.all(np.isfinite(xtx)) or np.linalg.cond(xtx) > 1e14:
        raise SingularRegression("design matrix is rank deficient (constant or degenerate series)")
    try:
        xtx_inv = np.linalg.inv(xtx)
    except np.linalg.LinAlgError as e:
        raise SingularRegression(str(e)) from e
    beta = xtx_inv @ (X.T @ target)
    resid = target - X @ beta
    sigma2 = float(resid @ resid) / dof
    se_gamma = math.sqrt(sigma2 * xtx_inv[1, 1])
    if se_gamma == 0:
        raise SingularRegression("zero standard error on the lagged level")
    return float(beta[1] / se_gamma)
