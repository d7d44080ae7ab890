"""Input validation helpers shared by the learners."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .sim import CorridorConfig


def check_corridor(corridor) -> CorridorConfig:
    if isinstance(corridor, dict):
        corridor = CorridorConfig(**corridor)
    if not isinstance(corridor, CorridorConfig):
        raise TypeError(f"expected a CorridorConfig, got {type(corridor).__name__}")
    corridor.validate()
    return corridor


def check_observations(X, n_features: int) -> np.ndarray:
    """2-D float array of joint observations with ``n_features`` columns."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    X = np.atleast_2d(X)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_probability(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
