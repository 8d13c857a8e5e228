"""Input checks shared by the estimator wrapper and the drivers."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array, check_X_y


def check_positive(name: str, value, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a number, got {type(value).__name__}")
    if integer and int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be positive, got {value!r}")
    return int(value) if integer else float(value)


def check_unit_interval(name: str, value) -> float:
    """Momentum-style parameter in [0, 1)."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not (0.0 <= value < 1.0):
        raise ValueError(f"{name} must lie in [0, 1), got {value!r}")
    return float(value)


def check_seed(seed) -> int:
    if seed is None:
        return 0
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ValueError(f"random_state must be a nonnegative int or None, got {seed!r}")
    return int(seed)


def check_hidden(hidden) -> tuple:
    if isinstance(hidden, numbers.Integral):
        hidden = (hidden,)
    hidden = tuple(hidden)
    if any(isinstance(h, bool) or not isinstance(h, numbers.Integral) or h < 1 for h in hidden):
        raise ValueError(f"hidden_layer_sizes must be positive ints, got {hidden!r}")
    return tuple(int(h) for h in hidden)


def check_training_data(X, y):
    """(X, Y) as float arrays with Y always 2-d; also whether y was 1-d."""
    X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
    flat = y.ndim == 1
    return X, (y[:, None] if flat else y), flat


def check_inputs(X, n_features: int) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, the model was fit with {n_features}")
    return X
