"""Input validation helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, DomainError


def check_vector(x, name="x", *, nonnegative=True, positive=False, copy=True):
    """Return ``x`` as a finite 1-D float array, raising :class:`DomainError` otherwise."""
    try:
        arr = check_array(x, ensure_2d=False, dtype=np.float64, copy=copy,
                          ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise DomainError(str(exc)) from exc
    if arr.ndim != 1:
        raise DomainError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DomainError(f"{name} must contain at least one entry")
    if positive and np.any(arr <= 0):
        raise DomainError(f"{name} must be strictly positive")
    if nonnegative and np.any(arr < 0):
        raise DomainError(f"{name} must be nonnegative")
    return arr


def check_profiles_2d(X, n_players, name="X"):
    """Validate a batch of action profiles, one profile per row.

    A 1-d input is read as a single profile.
    """
    if np.ndim(X) == 1:
        X = np.reshape(X, (1, -1))
    try:
        arr = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise DomainError(str(exc)) from exc
    if arr.shape[1] != n_players:
        raise DomainError(f"{name} has {arr.shape[1]} columns, expected {n_players} players")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be nonnegative")
    return arr


def check_scalar(value, name, *, lower=None, upper=None, lower_open=True,
                 upper_open=True, error=ConfigurationError):
    """Check a real scalar against (optionally open) bounds."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise error(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise error(f"{name} must be finite, got {value!r}")
    if lower is not None:
        if (lower_open and value <= lower) or (not lower_open and value < lower):
            sym = ">" if lower_open else ">="
            raise error(f"{name} must be {sym} {lower}, got {value!r}")
    if upper is not None:
        if (upper_open and value >= upper) or (not upper_open and value > upper):
            sym = "<" if upper_open else "<="
            raise error(f"{name} must be {sym} {upper}, got {value!r}")
    return value


def check_player_index(i, n_players):
    if isinstance(i, bool) or not isinstance(i, numbers.Integral):
        raise DomainError(f"player index must be an integer, got {i!r}")
    if not 0 <= i < n_players:
        raise DomainError(f"player index {i} out of range for {n_players} players")
    return int(i)


def check_step_sizes(kappa, n_players, name="kappa"):
    """Broadcast a scalar or per-player step size to a positive vector."""
    arr = np.asarray(kappa, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n_players, float(arr))
    if arr.shape != (n_players,):
        raise ConfigurationError(f"{name} must be a scalar or have length {n_players}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ConfigurationError(f"{name} entries must be positive and finite")
    return arr
