"""Feature-error loss between two factorizations.

Two factor pairs that reconstruct the same matrix can differ by a diagonal
rescaling and a permutation of the k latent components.  The loss here
removes both ambiguities: each component is magnitude-balanced so its W-side
and H-side columns share the norm sqrt(|W_i| * |H_i|), the balanced columns
of W and H^T are stacked into one (M+N) x k feature matrix, and an optimal
component permutation is found by linear sum assignment on the squared
pairwise column distances.  Squaring the distance matrix makes the
assignment objective equal the squared Frobenius norm of the aligned
difference, so the Hungarian solution is exactly the permutation minimizing
the full matrix error, without enumerating all k! candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .matrixcore import frobenius_norm

__all__ = [
    "Assignment",
    "BalancedFeatures",
    "DegenerateComponentError",
    "balance",
    "fe_loss",
    "fem",
    "hungarian",
    "w_only_error",
]


class DegenerateComponentError(ValueError):
    """A component has a zero W column or zero H row, so balancing is undefined."""

    def __init__(self, index: int, side: str):
        self.index = index
        self.side = side
        super().__init__(
            f"component {index} has zero norm on the {side} side; "
            f"balancing is undefined (rank collapse?)"
        )


@dataclass(frozen=True)
class BalancedFeatures:
    """Stacked balanced features: rows [0, m_rows) hold the W block,
    rows [m_rows, end) hold the H^T block."""

    wh: np.ndarray
    m_rows: int

    @property
    def k(self) -> int:
        return self.wh.shape[1]

    @property
    def w_block(self) -> np.ndarray:
        return self.wh[: self.m_rows]

    @property
    def h_block(self) -> np.ndarray:
        """The balanced H^T block ((N x k))."""
        return self.wh[self.m_rows:]


@dataclass(frozen=True)
class Assignment:
    """Bijection i -> perm[i] from one set of components onto another,
    minimal in total cost[i, perm[i]]."""

    perm: tuple[int, ...]
    total_cost: float


def balance(w: np.ndarray, h: np.ndarray,
            norm_floor: float | None = None) -> BalancedFeatures:
    """Magnitude-balance the component columns and stack W over H^T.

    Column i of the result is concat(W_i * s_i/|W_i|, H_i^T * s_i/|H_i|)
    with s_i = sqrt(|W_i| * |H_i|), which leaves W @ H unchanged while
    forcing both halves of every component to the same norm.  A zero
    component raises :class:`DegenerateComponentError` unless *norm_floor*
    is given, in which case norms are floored there (used when computing
    metrics on degenerate attacked factorizations).
    """
    if w.shape[1] != h.shape[0]:
        raise ValueError(f"rank mismatch: w {w.shape} vs h {h.shape}")
    wn = np.linalg.norm(w, axis=0)
    hn = np.linalg.norm(h, axis=1)
    if norm_floor is None:
        for i in range(w.shape[1]):
            if wn[i] == 0.0:
                raise DegenerateComponentError(i, "W")
            if hn[i] == 0.0:
                raise DegenerateComponentError(i, "H")
    else:
        wn = np.maximum(wn, norm_floor)
        hn = np.maximum(hn, norm_floor)
    s = np.sqrt(wn * hn)
    w_bal = w * (s / wn)
    ht_bal = h.T * (s / hn)
    return BalancedFeatures(np.vstack([w_bal, ht_bal]), w.shape[0])


def fem(a: BalancedFeatures, b: BalancedFeatures) -> np.ndarray:
    """k x k matrix of pairwise column distances |a_i - b_j|_2."""
    if a.wh.shape != b.wh.shape or a.m_rows != b.m_rows:
        raise ValueError(
            f"feature dimensions differ: {a.wh.shape} (split {a.m_rows}) vs "
            f"{b.wh.shape} (split {b.m_rows})"
        )
    diff = a.wh[:, :, None] - b.wh[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=0))


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimal-total-cost bijection for a square cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    perm = tuple(int(c) for c in cols[np.argsort(rows)])
    total = float(cost[rows, cols].sum())
    return Assignment(perm, total)


def apply_assignment(mat: np.ndarray, assignment: Assignment) -> np.ndarray:
    """Place column i of *mat* at position perm[i]."""
    out = np.empty_like(mat)
    out[:, list(assignment.perm)] = mat
    return out


def fe_loss(nmf: BalancedFeatures, ref: BalancedFeatures) -> tuple[float, Assignment]:
    """Relative Frobenius error between aligned balanced features.

    The assignment cost is the elementwise square of :func:`fem`, whose
    optimal permutation also minimizes |aligned(nmf) - ref|_F.
    """
    d = fem(nmf, ref)
    assignment = hungarian(d * d)
    aligned = apply_assignment(nmf.wh, assignment)
    ref_norm = frobenius_norm(ref.wh)
    if ref_norm == 0.0:
        raise ValueError("reference features have zero norm")
    return frobenius_norm(aligned - ref.wh) / ref_norm, assignment


def w_only_error(w_nmf: np.ndarray, w_ref: np.ndarray,
                 assignment: Assignment) -> float:
    """Relative error of the (balanced) W blocks under a fixed alignment."""
    if w_nmf.shape != w_ref.shape:
        raise ValueError(f"shape mismatch: {w_nmf.shape} vs {w_ref.shape}")
    aligned = apply_assignment(w_nmf, assignment)
    ref_norm = frobenius_norm(w_ref)
    if ref_norm == 0.0:
        raise ValueError("reference W block has zero norm")
    return frobenius_norm(aligned - w_ref) / ref_norm
