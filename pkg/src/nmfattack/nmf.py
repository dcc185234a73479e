"""KL-divergence NMF via multiplicative updates.

The factorization X ~= W @ H (W: M x k, H: k x N, all entrywise >= 0) is fit
by the classical multiplicative update rules for the generalized KL
divergence.  One iteration updates W first using the old H, then H using the
already-updated W; this order is fixed so that the gradient engines
differentiate a well-defined map.  All denominators (and the reconstruction
inside the log) are floored at a small guard so the ratio X / (WH) can never
divide by zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .matrixcore import frobenius_norm, require_nonnegative

__all__ = [
    "NmfConfig",
    "NmfModel",
    "ReconError",
    "kl_divergence",
    "mu_step",
    "reconstruction_error",
    "run_nmf",
    "seed_factors",
]

DEFAULT_GUARD = 1e-12


@dataclass(frozen=True)
class NmfConfig:
    """Solver settings.

    ``rel_change_tol`` enables optional early stopping on the relative
    Frobenius change of the stacked (W, H) pair; it is off by default so a
    run performs exactly ``max_iterations`` updates (the gradient engines
    rely on a fixed iteration count).
    """

    max_iterations: int
    rel_change_tol: float | None = None
    epsilon_guard: float = DEFAULT_GUARD
    record_every: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.epsilon_guard <= 0:
            raise ValueError("epsilon_guard must be > 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.rel_change_tol is not None and self.rel_change_tol <= 0:
            raise ValueError("rel_change_tol must be > 0 when set")


@dataclass
class NmfModel:
    """Fitted factor pair plus the recorded divergence trace."""

    w: np.ndarray
    h: np.ndarray
    rank: int
    iterations_run: int
    divergence_history: list[float] = field(default_factory=list)


class ReconError(NamedTuple):
    absolute: float
    relative: float


def _check_shapes(x, w, h):
    m, n = x.shape
    if w.shape[0] != m or h.shape[1] != n or w.shape[1] != h.shape[0]:
        raise ValueError(
            f"shape mismatch: x {x.shape}, w {w.shape}, h {h.shape}"
        )


def kl_divergence(x: np.ndarray, w: np.ndarray, h: np.ndarray,
                  guard: float = DEFAULT_GUARD) -> float:
    """Generalized KL divergence sum(x*log(x/(WH)) - x + WH).

    Uses the convention 0*log(0/q) = 0 and floors the reconstruction at
    *guard* inside the log.
    """
    _check_shapes(x, w, h)
    wh = w @ h
    return float(np.sum(xlogy(x, x / np.maximum(wh, guard)) - x + wh))


class _StepIntermediates(NamedTuple):
    """Everything the forward pass of one update computes, kept for VJPs."""

    p1: np.ndarray      # W @ H before the W update
    r1: np.ndarray      # X / max(p1, guard)
    num_w: np.ndarray   # r1 @ H^T
    hs: np.ndarray      # row sums of H (the W-update denominator, unclamped)
    w2: np.ndarray      # updated W
    p2: np.ndarray      # w2 @ H
    r2: np.ndarray      # X / max(p2, guard)
    num_h: np.ndarray   # w2^T @ r2
    ws: np.ndarray      # column sums of w2 (the H-update denominator, unclamped)
    h2: np.ndarray      # updated H


def _mu_forward(x, w, h, guard) -> _StepIntermediates:
    p1 = w @ h
    r1 = x / np.maximum(p1, guard)
    num_w = r1 @ h.T
    hs = h.sum(axis=1)
    w2 = w * num_w / np.maximum(hs, guard)
    p2 = w2 @ h
    r2 = x / np.maximum(p2, guard)
    num_h = w2.T @ r2
    ws = w2.sum(axis=0)
    h2 = h * num_h / np.maximum(ws, guard)[:, None]
    return _StepIntermediates(p1, r1, num_w, hs, w2, p2, r2, num_h, ws, h2)


def mu_step(x: np.ndarray, w: np.ndarray, h: np.ndarray,
            guard: float = DEFAULT_GUARD) -> tuple[np.ndarray, np.ndarray]:
    """One multiplicative update: W with the old H, then H with the new W."""
    _check_shapes(x, w, h)
    inter = _mu_forward(x, w, h, guard)
    return inter.w2, inter.h2


def run_nmf(x: np.ndarray, w_init: np.ndarray, h_init: np.ndarray,
            cfg: NmfConfig) -> NmfModel:
    """Iterate :func:`mu_step` from strictly positive initial factors.

    Multiplicative updates preserve zeros, so zero init entries can never
    recover and are rejected outright.
    """
    _check_shapes(x, w_init, h_init)
    require_nonnegative(x, "x")
    if w_init.min() <= 0 or h_init.min() <= 0:
        raise ValueError("initial factors must be strictly positive "
                         "(multiplicative updates cannot escape zeros)")
    w, h = w_init, h_init
    history: list[float] = []
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        w_new, h_new = mu_step(x, w, h, cfg.epsilon_guard)
        if cfg.rel_change_tol is not None:
            delta = np.sqrt(frobenius_norm(w_new - w) ** 2
                            + frobenius_norm(h_new - h) ** 2)
            scale = np.sqrt(frobenius_norm(w) ** 2 + frobenius_norm(h) ** 2)
            stop = delta < cfg.rel_change_tol * scale
        else:
            stop = False
        w, h = w_new, h_new
        if it % cfg.record_every == 0 or it == cfg.max_iterations or stop:
            history.append(kl_divergence(x, w, h, cfg.epsilon_guard))
        if stop:
            break
    return NmfModel(w=w, h=h, rank=w.shape[1], iterations_run=it,
                    divergence_history=history)


def seed_factors(rng: np.random.Generator, m: int, n: int,
                 k: int) -> tuple[np.ndarray, np.ndarray]:
    """Strictly positive random inits, entries in (0, 1]."""
    if k < 1:
        raise ValueError("rank k must be >= 1")
    w0 = 1.0 - rng.random((m, k))
    h0 = 1.0 - rng.random((k, n))
    return w0, h0


def reconstruction_error(x: np.ndarray, model: NmfModel) -> ReconError:
    """Absolute and relative Frobenius error of X against W @ H."""
    _check_shapes(x, model.w, model.h)
    absolute = frobenius_norm(x - model.w @ model.h)
    denom = frobenius_norm(x)
    return ReconError(absolute, absolute / denom if denom > 0 else 0.0)
