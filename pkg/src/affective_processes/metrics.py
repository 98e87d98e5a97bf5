"""Agreement metrics used for affect regression: CCC, ICC and MSE."""
from __future__ import annotations

from typing import Tuple, Union

import numpy as np

from .errors import ContractError, ShapeError


def _pair(y, y_hat, min_len: int) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ShapeError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < min_len:
        raise ContractError(f"need at least {min_len} values, got {y.size}")
    return y, y_hat


def ccc(y, y_hat, return_degenerate: bool = False) -> Union[float, Tuple[float, bool]]:
    """Concordance correlation coefficient with population (1/N) moments.

    ``2 cov(y, y_hat) / (var(y) + var(y_hat) + (mean(y) - mean(y_hat))^2)``.
    When both inputs are constant the value is reported as 0 and flagged
    degenerate.
    """
    y, y_hat = _pair(y, y_hat, 2)
    my, mh = y.mean(), y_hat.mean()
    dy, dh = y - my, y_hat - mh
    vy, vh = np.mean(dy * dy), np.mean(dh * dh)
    degenerate = vy == 0.0 and vh == 0.0
    if degenerate:
        value = 0.0
    else:
        value = float(2.0 * np.mean(dy * dh) / (vy + vh + (my - mh) ** 2))
    return (value, degenerate) if return_degenerate else value


def icc(y, y_hat) -> float:
    """Intra-class correlation ``(W - S) / (W + S)`` as used for AU intensity.

    ``W`` is the mean squared deviation of both raters from their pooled mean
    and ``S`` the *sum* (not the mean) of squared differences, so the value
    depends on series length for a fixed per-frame error. It is 1 when both
    series are constant and equal.
    """
    y, y_hat = _pair(y, y_hat, 1)
    n = y.size
    pooled = (y.sum() + y_hat.sum()) / (2.0 * n)
    W = np.sum((y - pooled) ** 2 + (y_hat - pooled) ** 2) / n
    S = np.sum((y - y_hat) ** 2)
    if W + S == 0.0:
        return 1.0
    return float((W - S) / (W + S))


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 1)
    return float(np.mean((y - y_hat) ** 2))


def pearson(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 2)
    dy, dh = y - y.mean(), y_hat - y_hat.mean()
    denom = np.sqrt(np.sum(dy * dy) * np.sum(dh * dh))
    return 0.0 if denom == 0 else float(np.sum(dy * dh) / denom)
