"""Attack objectives and their gradients with respect to the factors.

Both gradient engines consume a loss "head": a function of (x, w, h) that
returns the loss value together with its partial gradients with respect to
w, h and (directly) x.  The feature-error head freezes the optimal component
assignment at its argmin and differentiates the smooth branch, including
through the magnitude-balancing map; the reconstruction head is the plain
Frobenius distance |X - WH|.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .feature_error import (
    Assignment,
    BalancedFeatures,
    apply_assignment,
    balance,
    fe_loss,
)
from .matrixcore import frobenius_norm

__all__ = [
    "HeadResult",
    "LossHead",
    "balance_vjp",
    "feature_error_head",
    "reconstruction_head",
]


class HeadResult(NamedTuple):
    value: float
    grad_w: np.ndarray
    grad_h: np.ndarray
    grad_x_direct: np.ndarray | None   # None means identically zero
    assignment: Assignment | None


LossHead = Callable[[np.ndarray, np.ndarray, np.ndarray], HeadResult]


def balance_vjp(w: np.ndarray, h: np.ndarray,
                cot_wh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull a cotangent of the stacked balanced features back to (w, h).

    Smooth wherever all component norms are positive; callers are expected
    to have gone through :func:`~nmfattack.feature_error.balance` first,
    which rejects zero components.
    """
    m = w.shape[0]
    g_w = cot_wh[:m]            # M x k
    g_ht = cot_wh[m:]           # N x k
    a = np.linalg.norm(w, axis=0)
    b = np.linalg.norm(h, axis=1)
    f = np.sqrt(b / a)
    alpha = np.sum(g_w * w, axis=0)
    beta = np.sum(g_ht * h.T, axis=0)
    c = alpha - beta / (f * f)
    cot_w = f * g_w - (c * f / (2.0 * a * a)) * w
    cot_ht = g_ht / f + (c * f / (2.0 * b * b)) * h.T
    return cot_w, cot_ht.T


def feature_error_head(ref: BalancedFeatures,
                       assignment: Assignment | None = None) -> LossHead:
    """Head for the aligned balanced-feature loss against *ref*.

    When *assignment* is None the argmin permutation is recomputed on every
    call (the usual forward pass); passing one freezes it, which is what the
    reverse passes do between their own forward and backward sweeps.
    """

    def head(x: np.ndarray, w: np.ndarray, h: np.ndarray) -> HeadResult:
        feats = balance(w, h)
        if assignment is None:
            value, chosen = fe_loss(feats, ref)
        else:
            chosen = assignment
            aligned = apply_assignment(feats.wh, chosen)
            value = frobenius_norm(aligned - ref.wh) / frobenius_norm(ref.wh)
        if value == 0.0:
            # at the exact minimum the norm is not differentiable; use the
            # zero subgradient
            return HeadResult(0.0, np.zeros_like(w), np.zeros_like(h),
                              None, chosen)
        aligned = apply_assignment(feats.wh, chosen)
        resid = aligned - ref.wh
        cot_aligned = resid / (frobenius_norm(resid) * frobenius_norm(ref.wh))
        cot_wh = cot_aligned[:, list(chosen.perm)]
        grad_w, grad_h = balance_vjp(w, h, cot_wh)
        return HeadResult(value, grad_w, grad_h, None, chosen)

    return head


def reconstruction_head() -> LossHead:
    """Head for the Frobenius reconstruction distance |X - WH|."""

    def head(x: np.ndarray, w: np.ndarray, h: np.ndarray) -> HeadResult:
        resid = x - w @ h
        value = frobenius_norm(resid)
        if value == 0.0:
            return HeadResult(0.0, np.zeros_like(w), np.zeros_like(h),
                              None, None)
        scaled = resid / value
        return HeadResult(value, -scaled @ h.T, -w.T @ scaled, scaled, None)

    return head
