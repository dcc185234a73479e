"""Dense float64 matrix helpers shared by every other module.

Matrices are plain 2-D ``numpy.ndarray`` objects in C (row-major) order and
double precision throughout; 32-bit floats are deliberately not supported
because the finite-difference gradient checks need the headroom.  Functions
here never mutate their inputs, so arrays can be shared freely across
threads.  Randomness goes through :func:`make_rng` (PCG64), which produces
the same stream for the same seed on every platform.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

__all__ = [
    "SingularMatrixError",
    "as_matrix",
    "frobenius_norm",
    "make_rng",
    "matmul",
    "solve_linear",
    "uniform_matrix",
]

PIVOT_TOL = 1e-12


class SingularMatrixError(ValueError):
    """Linear solve hit a pivot below the singularity threshold."""

    def __init__(self, pivot: float, message: str | None = None):
        self.pivot = float(pivot)
        super().__init__(
            message or f"matrix is singular to working precision "
            f"(smallest pivot magnitude {self.pivot:.3e} < {PIVOT_TOL:.0e})"
        )


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate *data* as a finite 2-D float64 array (copying only if needed)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(a)


def require_nonnegative(a: np.ndarray, name: str = "matrix") -> None:
    if a.min(initial=0.0) < 0.0:
        raise ValueError(f"{name} must be entrywise non-negative "
                         f"(min entry {a.min():.3e})")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape diagnostic on mismatch."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.shape} @ {b.shape} "
            f"(inner dimensions {a.shape[-1]} != {b.shape[0]})"
        )
    return a @ b


def frobenius_norm(a: np.ndarray) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(a, "fro")) if a.ndim == 2 else float(np.linalg.norm(a))


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ s = b`` by partially pivoted LU.

    Raises :class:`SingularMatrixError` (carrying the offending pivot
    magnitude) when the smallest pivot falls below ``PIVOT_TOL``; no
    condition-number estimate is attempted beyond that.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"coefficient matrix must be square, got {a.shape}")
    b = np.asarray(b, dtype=np.float64)
    b2 = b[:, None] if b.ndim == 1 else b
    if b2.shape[0] != a.shape[0]:
        raise ValueError(f"rhs rows {b2.shape[0]} != matrix rows {a.shape[0]}")
    with warnings.catch_warnings():
        # the pivot check below turns exact singularity into our own error
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    min_pivot = float(np.abs(np.diag(lu)).min()) if lu.size else 0.0
    if min_pivot < PIVOT_TOL:
        raise SingularMatrixError(min_pivot)
    s = scipy.linalg.lu_solve((lu, piv), b2, check_finite=False)
    return s[:, 0] if b.ndim == 1 else s


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seed gives an identical stream."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def uniform_matrix(rng: np.random.Generator, rows: int, cols: int,
                   lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Matrix of i.i.d. uniform samples on [lo, hi)."""
    if not lo < hi:
        raise ValueError(f"uniform_matrix requires lo < hi, got [{lo}, {hi})")
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    return lo + (hi - lo) * rng.random((rows, cols))
