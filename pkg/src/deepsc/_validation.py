"""Small input-validation helpers built on top of sklearn.utils."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidInputError, NumericalError


def check_positive(value, name, *, strict=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise InvalidInputError(f"{name} must be a real number, got {value!r}")
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise InvalidInputError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_int(value, name, *, minimum=None):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise InvalidInputError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise InvalidInputError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_matrix(X, name="X", *, ensure_min_samples=1):
    """Return `X` as a finite float64 C-contiguous 2-D array."""
    try:
        return check_array(
            X,
            dtype=np.float64,
            order="C",
            ensure_min_samples=ensure_min_samples,
            input_name=name,
        )
    except ValueError as exc:
        if "NaN" in str(exc) or "infinity" in str(exc):
            raise NumericalError(str(exc)) from exc
        raise InvalidInputError(str(exc)) from exc


def check_vector(x, name="x", size=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise InvalidInputError(f"{name} must have length {size}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{name} contains non-finite values")
    return np.ascontiguousarray(x)


def check_image(img):
    """Validate a grayscale image: finite 2-D array with values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidInputError(f"image must be 2-D (grayscale), got shape {img.shape}")
    if img.size == 0:
        raise InvalidInputError("image is empty")
    if not np.all(np.isfinite(img)):
        raise NumericalError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise InvalidInputError("image intensities must lie in [0, 1]")
    return np.ascontiguousarray(img)


def unit_ball_project(M, axis=0):
    """Scale each column (axis=0) or row (axis=1) of `M` to norm at most one, in place."""
    norms = np.sqrt(np.sum(M * M, axis=axis, keepdims=True))
    np.maximum(norms, 1.0, out=norms)
    M /= norms
    return M
