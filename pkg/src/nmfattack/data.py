"""Synthetic benchmark data, matrix file IO, and normalization.

The synthetic construction builds a rank-3 ground truth: two components are
Gaussian bumps over the row index, each with a single-row spike added; the
third is a fixed mixture of the two Gaussians plus an independent spike, so
the spikes are exactly what lifts the numerical rank from 2 to 3.  H is
uniform on [0, 1).  Removing the spike contributions yields an exactly
rank-2 factor matrix, whose product with the same H is a semantically
perturbed input used by the interpolation experiment.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_error import BalancedFeatures, balance
from .matrixcore import as_matrix, make_rng

__all__ = [
    "DatasetBundle",
    "SyntheticSpec",
    "gen_synthetic",
    "load_matrix",
    "normalize_unit",
    "remove_spikes",
    "save_matrix",
]

_RAW_MAGIC_LEN = 16  # two little-endian u64: rows, cols


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the rank-3 synthetic benchmark (defaults are tuned so
    the interpolation jump and attack bands of the test suite land where
    they should; all of them are free to vary)."""

    m: int = 100
    n: int = 200
    gaussian_centers: tuple[float, float] = (30.0, 70.0)
    gaussian_widths: tuple[float, float] = (10.0, 10.0)
    spike_positions: tuple[int, int, int] = (15, 85, 50)
    spike_heights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    mix_coefficients: tuple[float, float] = (0.5, 0.5)
    seed: int = 0

    rank = 3

    def __post_init__(self):
        if self.m < 3 or self.n < 3:
            raise ValueError("synthetic matrices need at least 3 rows/cols")
        if any(not 0 <= p < self.m for p in self.spike_positions):
            raise ValueError(f"spike positions {self.spike_positions} outside "
                             f"[0, {self.m})")
        if any(w <= 0 for w in self.gaussian_widths):
            raise ValueError("gaussian widths must be positive")
        if any(h_ <= 0 for h_ in self.spike_heights):
            raise ValueError("spike heights must be positive")


@dataclass
class DatasetBundle:
    """An input matrix (normalized to [0, 1]) plus optional ground truth.

    ``w_true`` and ``h_true`` are stored in units consistent with the raw
    (un-normalized) product; ``normalization`` records the (offset, scale)
    with raw = x * scale + offset.  :meth:`scaled_truth` returns the factor
    pair rescaled so its product equals the normalized ``x``.
    """

    x: np.ndarray
    w_true: np.ndarray | None
    h_true: np.ndarray | None
    name: str
    normalization: tuple[float, float]

    def scaled_truth(self) -> tuple[np.ndarray, np.ndarray]:
        if self.w_true is None or self.h_true is None:
            raise ValueError(f"dataset {self.name!r} carries no ground truth")
        offset, scale = self.normalization
        return self.w_true, self.h_true / scale

    def truth_features(self) -> BalancedFeatures:
        """Balanced ground-truth features in normalized-x units."""
        return balance(*self.scaled_truth())


def _gaussian_columns(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(spec.m, dtype=np.float64)
    c1, c2 = spec.gaussian_centers
    w1, w2 = spec.gaussian_widths
    g1 = np.exp(-((rows - c1) ** 2) / (2.0 * w1 * w1))
    g2 = np.exp(-((rows - c2) ** 2) / (2.0 * w2 * w2))
    return g1, g2


def _spike_matrix(spec: SyntheticSpec) -> np.ndarray:
    s = np.zeros((spec.m, 3))
    for col, (pos, height) in enumerate(zip(spec.spike_positions,
                                            spec.spike_heights)):
        s[pos, col] = height
    return s


def _w_true(spec: SyntheticSpec) -> np.ndarray:
    g1, g2 = _gaussian_columns(spec)
    a, b = spec.mix_coefficients
    smooth = np.column_stack([g1, g2, a * g1 + b * g2])
    return smooth + _spike_matrix(spec)


def gen_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> DatasetBundle:
    """Generate the rank-3 benchmark: x = W_true @ H_true scaled into [0, 1].

    Scaling divides by the max entry only (the product is non-negative with
    min essentially zero already), so the ground-truth factors stay exact
    for the normalized matrix after rescaling one side.
    """
    w_true = _w_true(spec)
    sv = np.linalg.svd(w_true, compute_uv=False)
    if not sv[2] / sv[0] > 1e-6:
        raise ValueError(
            f"spec produces a rank-deficient W_true (sigma3/sigma1 = "
            f"{sv[2] / sv[0]:.3e} <= 1e-6)"
        )
    rng = make_rng(spec.seed)
    h_true = rng.random((3, spec.n))
    x_raw = w_true @ h_true
    scale = float(x_raw.max())
    return DatasetBundle(
        x=x_raw / scale,
        w_true=w_true,
        h_true=h_true,
        name=f"synthetic-{spec.m}x{spec.n}-seed{spec.seed}",
        normalization=(0.0, scale),
    )


def remove_spikes(w_true: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """Subtract the spike contributions, leaving the exactly rank-2 part."""
    if w_true.shape != (spec.m, 3):
        raise ValueError(f"w_true shape {w_true.shape} does not match spec "
                         f"({spec.m}, 3)")
    return w_true - _spike_matrix(spec)


def normalize_unit(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max rescale to [0, 1]; constant input maps to zeros with the
    degenerate scale recorded as 0.0."""
    x = as_matrix(x, "x")
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        return np.zeros_like(x), lo, 0.0
    return (x - lo) / (hi - lo), lo, hi - lo


def save_matrix(path, mat: np.ndarray, fmt: str = "raw-f64") -> None:
    """Write a matrix as raw-f64 (16-byte header + row-major LE doubles)
    or CSV."""
    mat = as_matrix(mat, "matrix")
    path = Path(path)
    if fmt == "raw-f64":
        with open(path, "wb") as fh:
            fh.write(struct.pack("<QQ", mat.shape[0], mat.shape[1]))
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())
    elif fmt == "csv":
        np.savetxt(path, mat, delimiter=",", fmt="%.17g")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load_matrix(path, fmt: str = "csv", allow_shift: bool = False) -> np.ndarray:
    """Read a matrix from CSV (header line optional) or raw-f64.

    Entries must be non-negative; with *allow_shift* a negative minimum is
    shifted to zero instead of rejected.
    """
    path = Path(path)
    if fmt == "raw-f64":
        blob = path.read_bytes()
        if len(blob) < _RAW_MAGIC_LEN:
            raise ValueError(f"{path}: truncated header "
                             f"({len(blob)} bytes < {_RAW_MAGIC_LEN})")
        rows, cols = struct.unpack("<QQ", blob[:_RAW_MAGIC_LEN])
        expected = _RAW_MAGIC_LEN + rows * cols * 8
        if len(blob) != expected:
            raise ValueError(f"{path}: expected {expected} bytes for "
                             f"{rows}x{cols}, found {len(blob)} "
                             f"(mismatch at byte {min(len(blob), expected)})")
        mat = np.frombuffer(blob, dtype="<f8", offset=_RAW_MAGIC_LEN)
        mat = mat.reshape(rows, cols).astype(np.float64)
    elif fmt == "csv":
        mat = _load_csv(path)
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{path}: non-finite entries")
    if mat.min() < 0:
        if not allow_shift:
            raise ValueError(f"{path}: negative entries (min {mat.min():.3e}); "
                             f"pass allow_shift to shift the minimum to zero")
        mat = mat - mat.min()
    return mat


def _load_csv(path: Path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header line
                raise ValueError(
                    f"{path}: unparseable value on line {lineno}"
                ) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ValueError(
                    f"{path}: row on line {lineno} has {len(values)} fields, "
                    f"expected {width}"
                )
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)
