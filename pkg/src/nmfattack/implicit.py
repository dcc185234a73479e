"""Objective gradients via implicit differentiation at the NMF fixed point.

At convergence one more multiplicative update leaves (W, H) unchanged, so
the converged factors satisfy a fixed-point equation in the flattened
variables y = [vec(W); vec(H)] (row-major, W block first).  Differentiating
that equation gives dy/dx = -(J_y - I)^{-1} J_x, where J_y and J_x are the
Jacobians of a single update with respect to the factors and the input.
Instead of forming the inverse, the input-side gradient is obtained from one
adjoint solve (J_y - I)^T v = -g with g the objective gradient at the
factors, followed by the contraction v^T J_x.

The contraction has two modes: ``jx-free`` (default) evaluates v^T J_x as
the input cotangent of one update VJP, never materializing the
((M+N)k) x (MN) block; ``materialize-jx`` builds the block explicitly, which
is what the peak-memory accounting of the report reflects in that mode.
Peak memory is independent of the iteration count either way.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backprop import _B, vjp_workspace_bytes
from .feature_error import Assignment, BalancedFeatures
from .matrixcore import SingularMatrixError, solve_linear
from .nmf import DEFAULT_GUARD, NmfModel, _check_shapes, _mu_forward, mu_step
from .backprop import _vjp
from .objectives import LossHead, feature_error_head

__all__ = [
    "FixedPointError",
    "ImplicitGradientReport",
    "JacobianBlocks",
    "assemble_jacobians",
    "fixed_point_residual",
    "implicit_gradient",
    "implicit_peak_bytes",
]

FIXED_POINT_TOL = 1e-6
SOLVE_RESIDUAL_TOL = 1e-8


class FixedPointError(RuntimeError):
    """The factor pair is not close enough to a fixed point of the update."""

    def __init__(self, residual: float, tol: float):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"fixed-point residual {residual:.3e} exceeds tolerance {tol:.0e}; "
            f"converge the factorization further before taking implicit gradients"
        )


def implicit_peak_bytes(m: int, n: int, k: int, materialize_jx: bool) -> int:
    """Analytic peak bytes: input + J_y + max(LU copy, VJP workspace) +
    adjoint vectors + output gradient (+ J_x when materialized).
    Independent of the iteration count by construction."""
    d = (m + n) * k
    jy = d * d * _B
    lu = d * d * _B + d * _B
    vecs = 4 * d * _B
    jx = d * m * n * _B if materialize_jx else 0
    return m * n * _B + jy + max(lu, vjp_workspace_bytes(m, n, k)) + vecs \
        + m * n * _B + jx


def fixed_point_residual(x: np.ndarray, w: np.ndarray, h: np.ndarray,
                         guard: float = DEFAULT_GUARD) -> float:
    """Max-abs entry change of one multiplicative update applied to (w, h)."""
    w2, h2 = mu_step(x, w, h, guard)
    return max(float(np.abs(w2 - w).max()), float(np.abs(h2 - h).max()))


@dataclass
class JacobianBlocks:
    """Exact Jacobian blocks of one update in flattened coordinates.

    Flattening is row-major within each factor with the W block before the
    H block, so j_ww is (Mk x Mk), j_hx is (kN x MN), and so on.  The input
    blocks j_wx / j_hx are None unless assembled with ``include_x=True``.
    """

    j_ww: np.ndarray
    j_wh: np.ndarray
    j_hw: np.ndarray
    j_hh: np.ndarray
    j_wx: np.ndarray | None
    j_hx: np.ndarray | None
    guard_active: dict[str, int] = field(default_factory=dict)

    def j_y(self) -> np.ndarray:
        return np.block([[self.j_ww, self.j_wh], [self.j_hw, self.j_hh]])

    def j_x(self) -> np.ndarray:
        if self.j_wx is None or self.j_hx is None:
            raise ValueError("input-side blocks were not materialized "
                             "(assemble with include_x=True)")
        return np.vstack([self.j_wx, self.j_hx])

    @staticmethod
    def expected_shapes(m: int, n: int, k: int) -> dict[str, tuple[int, int]]:
        return {
            "j_ww": (m * k, m * k), "j_wh": (m * k, k * n),
            "j_hw": (k * n, m * k), "j_hh": (k * n, k * n),
            "j_wx": (m * k, m * n), "j_hx": (k * n, m * n),
            "j_y": ((m + n) * k, (m + n) * k),
            "j_x": ((m + n) * k, m * n),
        }


def assemble_jacobians(x: np.ndarray, w: np.ndarray, h: np.ndarray,
                       guard: float = DEFAULT_GUARD,
                       include_x: bool = True) -> JacobianBlocks:
    """Build the Jacobian blocks row by row from the analytic update VJP.

    Each row of the Jacobian is the VJP of the one-step map with a one-hot
    output cotangent, so the blocks are exactly consistent with the
    reverse-mode engine.  Entries where a guard floor was active are counted
    in ``guard_active`` for diagnostics.
    """
    _check_shapes(x, w, h)
    m, n = x.shape
    k = w.shape[1]
    inter = _mu_forward(x, w, h, guard)
    mk, kn, mn = m * k, k * n, m * n
    j_ww = np.empty((mk, mk))
    j_wh = np.empty((mk, kn))
    j_hw = np.empty((kn, mk))
    j_hh = np.empty((kn, kn))
    j_wx = np.empty((mk, mn)) if include_x else None
    j_hx = np.empty((kn, mn)) if include_x else None
    cot_w = np.zeros_like(w)
    cot_h = np.zeros_like(h)
    flat_w = cot_w.reshape(-1)
    flat_h = cot_h.reshape(-1)
    for i in range(mk):
        flat_w[i] = 1.0
        gx, gw, gh = _vjp(x, w, h, inter, cot_w, cot_h, guard)
        flat_w[i] = 0.0
        j_ww[i] = gw.reshape(-1)
        j_wh[i] = gh.reshape(-1)
        if include_x:
            j_wx[i] = gx.reshape(-1)
    for i in range(kn):
        flat_h[i] = 1.0
        gx, gw, gh = _vjp(x, w, h, inter, cot_w, cot_h, guard)
        flat_h[i] = 0.0
        j_hw[i] = gw.reshape(-1)
        j_hh[i] = gh.reshape(-1)
        if include_x:
            j_hx[i] = gx.reshape(-1)
    guard_active = {
        "recon_w_update": int(np.sum(inter.p1 <= guard)),
        "recon_h_update": int(np.sum(inter.p2 <= guard)),
        "den_w_update": int(np.sum(inter.hs <= guard)),
        "den_h_update": int(np.sum(inter.ws <= guard)),
    }
    return JacobianBlocks(j_ww, j_wh, j_hw, j_hh, j_wx, j_hx, guard_active)


@dataclass
class ImplicitGradientReport:
    grad_x: np.ndarray
    loss_value: float
    solve_residual: float
    bytes_peak: int
    wall_time: float
    assignment: Assignment | None = None
    residual_flagged: bool = False


def implicit_via_head(x: np.ndarray, model: NmfModel, head: LossHead,
                      guard: float = DEFAULT_GUARD, mode: str = "jx-free",
                      fp_tol: float = FIXED_POINT_TOL) -> ImplicitGradientReport:
    """Implicit gradient of an arbitrary loss head at a converged model."""
    if mode not in ("jx-free", "materialize-jx"):
        raise ValueError(f"unknown mode {mode!r}")
    start = time.perf_counter()
    w, h = model.w, model.h
    residual = fixed_point_residual(x, w, h, guard)
    if not residual < fp_tol:
        raise FixedPointError(residual, fp_tol)
    res = head(x, w, h)
    m, n = x.shape
    k = w.shape[1]
    bytes_peak = implicit_peak_bytes(m, n, k, mode == "materialize-jx")
    g = np.concatenate([res.grad_w.reshape(-1), res.grad_h.reshape(-1)])
    direct = res.grad_x_direct
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        grad_x = np.zeros_like(x) if direct is None else direct.copy()
        return ImplicitGradientReport(grad_x, res.value, 0.0, bytes_peak,
                                      time.perf_counter() - start,
                                      res.assignment)
    blocks = assemble_jacobians(x, w, h, guard,
                                include_x=(mode == "materialize-jx"))
    a = blocks.j_y()
    np.fill_diagonal(a, a.diagonal() - 1.0)   # J_y - I, transposed below
    try:
        v = solve_linear(a.T, -g)
    except SingularMatrixError as err:
        raise SingularMatrixError(
            err.pivot,
            f"(J_y - I) is singular (pivot {err.pivot:.3e}): the fixed point "
            f"is degenerate or non-isolated",
        ) from err
    solve_residual = float(np.linalg.norm(a.T @ v + g)) / g_norm
    if mode == "materialize-jx":
        grad_x = (v @ blocks.j_x()).reshape(m, n)
    else:
        mk = m * k
        gx, _, _ = _vjp(x, w, h, _mu_forward(x, w, h, guard),
                        v[:mk].reshape(m, k), v[mk:].reshape(k, n), guard)
        grad_x = gx
    if direct is not None:
        grad_x = grad_x + direct
    return ImplicitGradientReport(
        grad_x, res.value, solve_residual, bytes_peak,
        time.perf_counter() - start, res.assignment,
        residual_flagged=not solve_residual < SOLVE_RESIDUAL_TOL,
    )


def implicit_gradient(x: np.ndarray, model: NmfModel, ref: BalancedFeatures,
                      guard: float = DEFAULT_GUARD, mode: str = "jx-free",
                      fp_tol: float = FIXED_POINT_TOL) -> ImplicitGradientReport:
    """Implicit gradient of the aligned feature error against *ref*.

    The model must satisfy the fixed-point precondition (one extra update
    moves no entry by more than *fp_tol*); the assignment is frozen at its
    argmin exactly as in the unrolled engine.
    """
    return implicit_via_head(x, model, feature_error_head(ref), guard, mode,
                             fp_tol)
