"""Gradient-ascent adversarial drivers: FGSM, PGD, and the interpolation probe.

A PGD run ascends the configured objective (aligned feature error by
default, plain reconstruction distance as the baseline objective) under an
L2 or Linf budget, projecting the perturbation back onto the epsilon ball
and clamping into [0, clamp_hi] after every step.  The same random factor
initialization is reused for every step's inner NMF solve so the ascent
direction is not polluted by init noise, and the perturbation starts at
zero.  Because the objective is nonconvex the best iterate (not the last)
is reported.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backprop import GradientReport, record_tape, reverse_sweep
from .feature_error import BalancedFeatures, balance, fe_loss, w_only_error
from .implicit import FIXED_POINT_TOL, implicit_via_head
from .matrixcore import frobenius_norm, make_rng, require_nonnegative
from .nmf import DEFAULT_GUARD, NmfConfig, NmfModel, ReconError, run_nmf, seed_factors
from .objectives import LossHead, feature_error_head, reconstruction_head

__all__ = [
    "AttackConfig",
    "AttackResult",
    "PathPoint",
    "StepReport",
    "fgsm",
    "interpolation_path",
    "pgd",
    "rank_profile",
]

METRIC_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters; epsilon is in normalized-input units."""

    norm: str = "linf"                 # "l2" | "linf"
    epsilon: float = 0.02
    steps: int = 40
    step_size: float | None = None     # default 2.5 * epsilon / steps
    grad_method: str = "implicit"      # "backprop" | "implicit"
    nmf_iterations: int = 2000
    seed: int = 0
    clamp_hi: float | None = 1.0
    objective: str = "feature-error"   # "feature-error" | "reconstruction"
    guard: float = DEFAULT_GUARD
    fp_tol: float = FIXED_POINT_TOL

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.grad_method not in ("backprop", "implicit"):
            raise ValueError(f"unknown gradient method {self.grad_method!r}")
        if self.objective not in ("feature-error", "reconstruction"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.nmf_iterations < 1:
            raise ValueError("nmf_iterations must be >= 1")
        if self.step_size is not None and self.step_size <= 0 and self.epsilon > 0:
            raise ValueError("step_size must be > 0")

    @property
    def effective_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


@dataclass
class StepReport:
    step: int
    loss_value: float
    bytes_peak: int
    wall_time: float


@dataclass
class AttackResult:
    x_adv: np.ndarray
    fe_trace: list[float]
    recon_trace: list[ReconError]
    w_error_trace: list[float]
    perturbation_norm: float
    grad_reports: list[StepReport] = field(default_factory=list)
    assignment_flips: int = 0
    best_step: int = 0

    @property
    def final_fe(self) -> float:
        return self.fe_trace[self.best_step]


def rank_profile(w: np.ndarray) -> np.ndarray:
    """Singular values of W, descending (rank-collapse diagnostics)."""
    return np.linalg.svd(np.asarray(w, dtype=np.float64), compute_uv=False)


def _head_for(cfg: AttackConfig, ref: BalancedFeatures) -> LossHead:
    if cfg.objective == "reconstruction":
        return reconstruction_head()
    return feature_error_head(ref)


def _solver_config(cfg: AttackConfig) -> NmfConfig:
    # skip intermediate divergence recording inside attack loops
    return NmfConfig(max_iterations=cfg.nmf_iterations,
                     epsilon_guard=cfg.guard,
                     record_every=cfg.nmf_iterations)


def _grad_and_model(x_cur: np.ndarray, w0: np.ndarray, h0: np.ndarray,
                    cfg: AttackConfig, head: LossHead):
    """One inner solve at x_cur plus the objective gradient there.

    The forward pass of the gradient engine doubles as the metric
    evaluation model, so each PGD step costs a single NMF run.
    """
    if cfg.grad_method == "backprop":
        tape = record_tape(x_cur, w0, h0, cfg.nmf_iterations, cfg.guard)
        report = reverse_sweep(tape, head, cfg.guard)
        w_t, h_t = tape.checkpoints[-1]
        model = NmfModel(w_t, h_t, w0.shape[1], cfg.nmf_iterations)
        return report, model
    model = run_nmf(x_cur, w0, h0, _solver_config(cfg))
    rep = implicit_via_head(x_cur, model, head, cfg.guard, fp_tol=cfg.fp_tol)
    report = GradientReport(rep.grad_x, rep.loss_value, rep.bytes_peak,
                            rep.wall_time, rep.assignment)
    return report, model


def _metrics(x_cur: np.ndarray, model: NmfModel, ref: BalancedFeatures):
    """Guarded metric evaluation (degenerate components floored, not fatal)."""
    feats = balance(model.w, model.h, norm_floor=METRIC_NORM_FLOOR)
    fe, assignment = fe_loss(feats, ref)
    w_err = w_only_error(feats.w_block, ref.w_block, assignment)
    err = frobenius_norm(x_cur - model.w @ model.h)
    denom = frobenius_norm(x_cur)
    return fe, ReconError(err, err / denom if denom > 0 else 0.0), w_err, assignment


def _check_input(x: np.ndarray, cfg: AttackConfig) -> None:
    require_nonnegative(x, "x")
    if cfg.clamp_hi is not None and x.max() > cfg.clamp_hi + 1e-12:
        raise ValueError(
            f"input exceeds clamp_hi={cfg.clamp_hi} (max entry {x.max():.6g}); "
            f"normalize it first or raise clamp_hi"
        )


def _project(x: np.ndarray, delta: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Project the perturbation onto the budget ball, then clamp the point."""
    if cfg.norm == "linf":
        delta = np.clip(delta, -cfg.epsilon, cfg.epsilon)
    else:
        nrm = frobenius_norm(delta)
        if nrm > cfg.epsilon and nrm > 0:
            delta = delta * (cfg.epsilon / nrm)
    hi = cfg.clamp_hi if cfg.clamp_hi is not None else np.inf
    return np.clip(x + delta, 0.0, hi)


def perturbation_norm(x_adv: np.ndarray, x: np.ndarray, norm: str) -> float:
    d = x_adv - x
    return float(np.abs(d).max()) if norm == "linf" else frobenius_norm(d)


def _baseline_result(x, w0, h0, cfg, ref, points: int) -> AttackResult:
    model = run_nmf(x, w0, h0, _solver_config(cfg))
    fe, recon, w_err, _ = _metrics(x, model, ref)
    return AttackResult(
        x_adv=x.copy(),
        fe_trace=[fe] * points,
        recon_trace=[recon] * points,
        w_error_trace=[w_err] * points,
        perturbation_norm=0.0,
    )


def pgd(x: np.ndarray, ref: BalancedFeatures, cfg: AttackConfig) -> AttackResult:
    """Projected gradient ascent on the configured objective.

    Trace entry t holds the metrics of the iterate before step t+1; the last
    entry evaluates the final point, so fe_trace has steps+1 entries.  The
    reported x_adv is the best-FE iterate.
    """
    _check_input(x, cfg)
    rng = make_rng(cfg.seed)
    w0, h0 = seed_factors(rng, x.shape[0], x.shape[1], ref.k)
    if cfg.epsilon == 0.0:
        return _baseline_result(x, w0, h0, cfg, ref, cfg.steps + 1)
    head = _head_for(cfg, ref)
    step_size = cfg.effective_step_size
    x_cur = x.copy()
    fe_trace: list[float] = []
    recon_trace: list[ReconError] = []
    w_error_trace: list[float] = []
    grad_reports: list[StepReport] = []
    flips = 0
    prev_assignment = None
    best_fe = -np.inf
    best_x = x.copy()
    best_step = 0
    for step in range(cfg.steps):
        report, model = _grad_and_model(x_cur, w0, h0, cfg, head)
        fe, recon, w_err, assignment = _metrics(x_cur, model, ref)
        fe_trace.append(fe)
        recon_trace.append(recon)
        w_error_trace.append(w_err)
        grad_reports.append(StepReport(step, report.loss_value,
                                       report.bytes_peak, report.wall_time))
        if prev_assignment is not None and assignment.perm != prev_assignment.perm:
            flips += 1
        prev_assignment = assignment
        if fe > best_fe:
            best_fe, best_x, best_step = fe, x_cur.copy(), step
        g = report.grad_x
        if cfg.norm == "linf":
            ascent = step_size * np.sign(g)
        else:
            gn = frobenius_norm(g)
            ascent = step_size * g / gn if gn > 0 else np.zeros_like(g)
        x_cur = _project(x, (x_cur - x) + ascent, cfg)
    # evaluate the final iterate
    model = run_nmf(x_cur, w0, h0, _solver_config(cfg))
    fe, recon, w_err, assignment = _metrics(x_cur, model, ref)
    fe_trace.append(fe)
    recon_trace.append(recon)
    w_error_trace.append(w_err)
    if prev_assignment is not None and assignment.perm != prev_assignment.perm:
        flips += 1
    if fe > best_fe:
        best_fe, best_x, best_step = fe, x_cur.copy(), cfg.steps
    return AttackResult(
        x_adv=best_x,
        fe_trace=fe_trace,
        recon_trace=recon_trace,
        w_error_trace=w_error_trace,
        perturbation_norm=perturbation_norm(best_x, x, cfg.norm),
        grad_reports=grad_reports,
        assignment_flips=flips,
        best_step=best_step,
    )


def fgsm(x: np.ndarray, ref: BalancedFeatures, cfg: AttackConfig) -> AttackResult:
    """Single gradient step: sign step for Linf, normalized step for L2."""
    _check_input(x, cfg)
    rng = make_rng(cfg.seed)
    w0, h0 = seed_factors(rng, x.shape[0], x.shape[1], ref.k)
    if cfg.epsilon == 0.0:
        return _baseline_result(x, w0, h0, cfg, ref, 2)
    head = _head_for(cfg, ref)
    report, model = _grad_and_model(x, w0, h0, cfg, head)
    fe0, recon0, werr0, _ = _metrics(x, model, ref)
    g = report.grad_x
    if cfg.norm == "linf":
        step = cfg.epsilon * np.sign(g)
    else:
        gn = frobenius_norm(g)
        step = cfg.epsilon * g / gn if gn > 0 else np.zeros_like(g)
    x_adv = _project(x, step, cfg)
    model = run_nmf(x_adv, w0, h0, _solver_config(cfg))
    fe, recon, w_err, _ = _metrics(x_adv, model, ref)
    best = int(fe >= fe0)
    return AttackResult(
        x_adv=x_adv if best else x.copy(),
        fe_trace=[fe0, fe],
        recon_trace=[recon0, recon],
        w_error_trace=[werr0, w_err],
        perturbation_norm=perturbation_norm(x_adv if best else x, x, cfg.norm),
        grad_reports=[StepReport(0, report.loss_value, report.bytes_peak,
                                 report.wall_time)],
        best_step=best,
    )


@dataclass
class PathPoint:
    alpha: float
    fe: float
    recon_rel: float
    w_error: float


def interpolation_path(x: np.ndarray, x_tilde: np.ndarray,
                       alphas: list[float], ref: BalancedFeatures,
                       cfg: AttackConfig) -> list[PathPoint]:
    """Factorize blends alpha*x_tilde + (1-alpha)*x with a fixed init and
    report the metrics of each against *ref*."""
    if x.shape != x_tilde.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_tilde.shape}")
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ValueError("alphas must lie in [0, 1]")
    require_nonnegative(x, "x")
    require_nonnegative(x_tilde, "x_tilde")
    rng = make_rng(cfg.seed)
    w0, h0 = seed_factors(rng, x.shape[0], x.shape[1], ref.k)
    solver = _solver_config(cfg)
    points = []
    for alpha in alphas:
        blend = alpha * x_tilde + (1.0 - alpha) * x
        model = run_nmf(blend, w0, h0, solver)
        fe, recon, w_err, _ = _metrics(blend, model, ref)
        points.append(PathPoint(float(alpha), fe, recon.relative, w_err))
    return points
