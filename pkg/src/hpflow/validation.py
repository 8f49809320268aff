"""Input checking helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DimensionError

SYMMETRY_TOL = 1e-12
DEFINITENESS_TOL = 1e-12
CONDITION_LIMIT = 1e12


def check_matrix(M, shape=None, name="matrix", dtype=complex):
    """Return ``M`` as a 2-D array of ``dtype``, optionally checking its shape."""
    arr = np.asarray(M, dtype=dtype)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    return arr


def check_compound(M, name="compound matrix", dtype=complex):
    """A 3x3 phase-coupled block."""
    return check_matrix(M, (3, 3), name=name, dtype=dtype)


def check_flat9(values, name):
    """Nine row-major floats -> real 3x3."""
    arr = np.asarray(values, dtype=float)
    if arr.shape != (9,):
        raise DimensionError(f"{name} needs 9 values, got {arr.size}")
    return arr.reshape(3, 3)


def is_symmetric(M, tol=SYMMETRY_TOL):
    return float(np.max(np.abs(M - M.T), initial=0.0)) < tol


def min_real_part_eig(M):
    """Smallest eigenvalue of the symmetrized real part of ``M``."""
    R = np.real(M)
    return float(np.linalg.eigvalsh(0.5 * (R + R.T)).min())


def condition_number(M):
    with np.errstate(all="ignore"):
        c = np.linalg.cond(M)
    return float(c) if np.isfinite(c) else np.inf


def check_conjugate_symmetric(coeffs, h_max, tol=1e-12, name="signal"):
    """Check X[-h] == conj(X[h]) on a (K, ...) coefficient array.

    Returns the worst violation so callers can decide how strict to be.
    """
    coeffs = np.asarray(coeffs)
    K = 2 * h_max + 1
    if coeffs.shape[0] != K:
        raise DimensionError(f"{name}: expected {K} harmonic rows, got {coeffs.shape[0]}")
    err = np.abs(coeffs[::-1] - np.conj(coeffs))
    return float(err.max(initial=0.0))
