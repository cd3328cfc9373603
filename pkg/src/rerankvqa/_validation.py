"""Input validation helpers, thin wrappers over :mod:`sklearn.utils`."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import ShapeError, ValidationError


def check_matrix(X, name, ndim=2):
    """Return ``X`` as a finite float64 array with exactly ``ndim`` dimensions."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {X.shape}")
    if 0 in X.shape:
        raise ShapeError(f"{name} has an empty dimension: shape {X.shape}")
    try:
        if ndim == 2:
            check_array(X, dtype=np.float64, input_name=name, ensure_all_finite=True)
        elif not np.all(np.isfinite(X)):
            raise ValueError(f"{name} contains NaN or infinity")
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return X


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonempty_text(text, name):
    if not isinstance(text, str) or not text.strip():
        raise ValidationError(f"{name} must be a non-empty string")
    return text
