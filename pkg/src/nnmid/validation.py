"""Small input-validation helpers used across the estimators.

These mirror the spirit of :func:`sklearn.utils.validation.check_array` but
accept complex spectra and raise the package's own :class:`ParameterError`.
"""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ParameterError


def check_array(x, *, ndim=None, dtype=float, name="array", allow_complex=False,
                finite=True, copy=False):
    """Convert ``x`` to an ndarray and validate its dimensionality.

    Parameters
    ----------
    x : array_like
    ndim : int or tuple of int, optional
        Accepted number(s) of dimensions.
    dtype : numpy dtype
        Target dtype for real data; ignored when ``allow_complex`` and the
        input is complex.
    name : str
        Used in error messages.
    allow_complex : bool
    finite : bool
        Reject NaN/inf entries.
    copy : bool
    """
    arr = np.array(x, copy=copy) if copy else np.asarray(x)
    if np.iscomplexobj(arr):
        if not allow_complex:
            raise ParameterError(f"{name} must be real-valued")
        arr = arr.astype(complex, copy=False)
    else:
        arr = arr.astype(dtype, copy=False)
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in allowed:
            raise ParameterError(
                f"{name} must have ndim in {allowed}, got shape {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def check_square(a, name="matrix", symmetric=False, rtol=1e-10):
    a = check_array(a, ndim=2, name=name)
    if a.shape[0] != a.shape[1]:
        raise ParameterError(f"{name} must be square, got {a.shape}")
    if symmetric:
        scale = max(np.abs(a).max(), np.finfo(float).tiny)
        if np.abs(a - a.T).max() > rtol * scale:
            raise ParameterError(f"{name} must be symmetric")
    return a


def check_positive(value, name, *, strict=True, integer=False):
    if integer and not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ParameterError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ParameterError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ParameterError(f"{name} must be >= 0, got {value!r}")
    return value


def check_index(i, n, name="index"):
    if not isinstance(i, numbers.Integral) or not 0 <= i < n:
        raise ParameterError(f"{name} must be an integer in [0, {n}), got {i!r}")
    return int(i)


def check_is_fitted(estimator, attributes):
    """Raise if the estimator has not been fitted (sklearn convention)."""
    from sklearn.exceptions import NotFittedError

    if isinstance(attributes, str):
        attributes = [attributes]
    if not all(getattr(estimator, attr, None) is not None for attr in attributes):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. "
            "Call 'fit' first.")
