"""Command-line front end.

Subcommands:

* ``factorize`` -- run the NMF solver on a matrix, write W/H and the
  divergence trace.
* ``attack``    -- FGSM or PGD on the feature-error (or reconstruction)
  objective, write the adversarial matrix, per-step trace and a JSON summary.
* ``sweep``     -- one attack per epsilon in a list, aggregated curve CSV.
* ``path``      -- factorize blends between an input and a perturbed input,
  write the metric-versus-alpha trace.
* ``gradcheck`` -- cross-validate finite-difference, unrolled and implicit
  gradients on a seeded toy instance.

Exit codes: 0 success, 1 gradcheck tolerance breach, 2 input/usage errors,
3 numerical failures.  Matrices are written both as raw-f64 (16-byte header
of two little-endian u64 then row-major little-endian doubles) and CSV;
traces are CSV; summaries are schema-versioned JSON.  The default seed can
be overridden with the NMFATTACK_SEED environment variable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, fgsm, interpolation_path, pgd
from .backprop import backprop_gradient
from .data import (
    DatasetBundle,
    SyntheticSpec,
    gen_synthetic,
    load_matrix,
    normalize_unit,
    remove_spikes,
    save_matrix,
)
from .feature_error import BalancedFeatures, DegenerateComponentError, balance
from .implicit import FixedPointError, implicit_gradient
from .matrixcore import SingularMatrixError, frobenius_norm, make_rng
from .nmf import NmfConfig, kl_divergence, run_nmf, seed_factors
from .objectives import feature_error_head

SCHEMA_VERSION = 1

USAGE_ERROR = 2
NUMERICAL_ERROR = 3


def _default_seed() -> int:
    return int(os.environ.get("NMFATTACK_SEED", "0"))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_summary(path: Path, command: str, config: dict, results: dict) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "environment": {
            "tool_version": __version__,
            "seed": config.get("seed"),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
        "results": results,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _save_both(out_dir: Path, stem: str, mat: np.ndarray) -> None:
    save_matrix(out_dir / f"{stem}.f64", mat, "raw-f64")
    save_matrix(out_dir / f"{stem}.csv", mat, "csv")


def _load_input(args) -> tuple[np.ndarray, DatasetBundle | None]:
    """Input matrix plus the synthetic bundle when one was generated."""
    if getattr(args, "synthetic", False):
        spec = SyntheticSpec(m=args.m, n=args.n, seed=args.data_seed)
        bundle = gen_synthetic(spec)
        return bundle.x, bundle
    if args.input is None:
        raise ValueError("provide --input FILE or --synthetic")
    x = load_matrix(args.input, args.format, allow_shift=args.allow_shift)
    if args.normalize:
        x, _, _ = normalize_unit(x)
    return x, None


def _reference(args, x: np.ndarray, bundle: DatasetBundle | None,
               rank: int) -> BalancedFeatures:
    if args.ref == "ground-truth":
        if bundle is None:
            raise ValueError("--ref ground-truth requires --synthetic")
        return bundle.truth_features()
    rng = make_rng(args.seed)
    w0, h0 = seed_factors(rng, x.shape[0], x.shape[1], rank)
    model = run_nmf(x, w0, h0, NmfConfig(max_iterations=args.iters,
                                         record_every=args.iters))
    return balance(model.w, model.h)


def _add_input_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="matrix file (csv or raw-f64)")
    p.add_argument("--format", choices=["csv", "raw-f64"], default="csv")
    p.add_argument("--normalize", action="store_true",
                   help="min-max normalize the input to [0, 1]")
    p.add_argument("--allow-shift", action="store_true",
                   help="shift negative minima to zero instead of rejecting")
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in rank-3 synthetic benchmark")
    p.add_argument("--m", type=int, default=100, help="synthetic rows")
    p.add_argument("--n", type=int, default=200, help="synthetic cols")
    p.add_argument("--data-seed", type=int, default=0,
                   help="synthetic generator seed")


def _add_attack_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=["backprop", "implicit"],
                   default="implicit")
    p.add_argument("--objective", choices=["feature-error", "reconstruction"],
                   default="feature-error")
    p.add_argument("--norm", choices=["l2", "linf"], default="linf")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--fgsm", action="store_true",
                   help="single-step attack instead of PGD")
    p.add_argument("--iters", type=int, default=2000,
                   help="inner NMF iterations per gradient step")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--ref", choices=["ground-truth", "clean-nmf"],
                   default=None,
                   help="reference features (default: ground-truth when "
                        "--synthetic, else clean-nmf)")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--clamp-hi", type=float, default=1.0)
    p.add_argument("--fp-tol", type=float, default=1e-6,
                   help="fixed-point residual tolerance of the implicit engine")


def _resolve_ref_default(args) -> None:
    if args.ref is None:
        args.ref = "ground-truth" if args.synthetic else "clean-nmf"


def _attack_config(args, epsilon: float) -> AttackConfig:
    return AttackConfig(
        norm=args.norm,
        epsilon=epsilon,
        steps=args.steps,
        step_size=args.step_size,
        grad_method=args.method,
        nmf_iterations=args.iters,
        seed=args.seed,
        clamp_hi=args.clamp_hi,
        objective=args.objective,
        fp_tol=args.fp_tol,
    )


def _echo_config(args, keys: list[str]) -> dict:
    return {k: getattr(args, k) for k in keys}


# ----------------------------------------------------------------- factorize

def cmd_factorize(args) -> int:
    x, _ = _load_input(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = make_rng(args.seed)
    w0, h0 = seed_factors(rng, x.shape[0], x.shape[1], args.rank)
    cfg = NmfConfig(max_iterations=args.iters,
                    rel_change_tol=args.tol,
                    record_every=args.record_every)
    model = run_nmf(x, w0, h0, cfg)
    _save_both(out_dir, "w", model.w)
    _save_both(out_dir, "h", model.h)
    _write_csv(out_dir / "divergence.csv", ["iteration", "kl_divergence"],
               [[(i + 1) * args.record_every, d]
                for i, d in enumerate(model.divergence_history)])
    err = frobenius_norm(x - model.w @ model.h)
    config = _echo_config(args, ["input", "format", "normalize", "allow_shift",
                                 "synthetic", "m", "n", "data_seed", "rank",
                                 "iters", "tol", "record_every", "seed",
                                 "out_dir"])
    _write_summary(out_dir / "summary.json", "factorize", config, {
        "iterations_run": model.iterations_run,
        "final_kl_divergence": kl_divergence(x, model.w, model.h),
        "recon_abs": err,
        "recon_rel": err / frobenius_norm(x),
    })
    print(f"factorize: rank {args.rank}, {model.iterations_run} iterations, "
          f"relative error {err / frobenius_norm(x):.4g} -> {out_dir}")
    return 0


# -------------------------------------------------------------------- attack

def _gradcheck_cosine(x, ref, args) -> float:
    rng = make_rng(args.seed)
    w0, h0 = seed_factors(rng, x.shape[0], x.shape[1], ref.k)
    bp = backprop_gradient(x, w0, h0, args.iters, ref)
    model = run_nmf(x, w0, h0, NmfConfig(max_iterations=args.iters,
                                         record_every=args.iters))
    im = implicit_gradient(x, model, ref, fp_tol=args.fp_tol)
    denom = frobenius_norm(bp.grad_x) * frobenius_norm(im.grad_x)
    return float(np.sum(bp.grad_x * im.grad_x)) / denom if denom > 0 else 1.0


def cmd_attack(args) -> int:
    _resolve_ref_default(args)
    x, bundle = _load_input(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rank = bundle.w_true.shape[1] if (bundle is not None
                                      and args.ref == "ground-truth") else args.rank
    ref = _reference(args, x, bundle, rank)
    cfg = _attack_config(args, args.eps)
    results: dict = {}
    if args.gradcheck:
        results["gradcheck_cosine"] = _gradcheck_cosine(x, ref, args)
    attack_fn = fgsm if args.fgsm else pgd
    res = attack_fn(x, ref, cfg)
    _save_both(out_dir, "x_adv", res.x_adv)
    rows = []
    for i, fe in enumerate(res.fe_trace):
        rep = res.grad_reports[i] if i < len(res.grad_reports) else None
        rows.append([
            i, fe, res.recon_trace[i].absolute, res.recon_trace[i].relative,
            res.w_error_trace[i],
            rep.bytes_peak if rep else 0,
            rep.wall_time * 1e3 if rep else 0.0,
        ])
    _write_csv(out_dir / "trace.csv",
               ["step", "fe", "recon_abs", "recon_rel", "w_error",
                "bytes_peak", "wall_ms"], rows)
    config = _echo_config(args, ["input", "format", "normalize", "allow_shift",
                                 "synthetic", "m", "n", "data_seed", "method",
                                 "objective", "norm", "eps", "steps",
                                 "step_size", "fgsm", "iters", "rank", "ref",
                                 "seed", "clamp_hi", "fp_tol", "out_dir"])
    results.update({
        "final_fe": res.final_fe,
        "best_step": res.best_step,
        "perturbation_norm": res.perturbation_norm,
        "recon_rel_at_best": res.recon_trace[res.best_step].relative,
        "assignment_flips": res.assignment_flips,
        "bytes_peak_max": max((r.bytes_peak for r in res.grad_reports),
                              default=0),
        "wall_ms_total": sum(r.wall_time for r in res.grad_reports) * 1e3,
    })
    _write_summary(out_dir / "summary.json", "attack", config, results)
    print(f"attack: eps={args.eps} ({args.norm}, {args.method}) "
          f"final FE {res.final_fe:.4g}, "
          f"recon_rel {res.recon_trace[res.best_step].relative:.4g} -> {out_dir}")
    return 0


# --------------------------------------------------------------------- sweep

def _sweep_one(payload):
    x, ref, args_dict, eps = payload
    ns = argparse.Namespace(**args_dict)
    cfg = _attack_config(ns, eps)
    res = pgd(x, ref, cfg)
    return eps, res.final_fe, res.recon_trace[res.best_step].relative, \
        res.perturbation_norm


def cmd_sweep(args) -> int:
    _resolve_ref_default(args)
    eps_list = [float(tok) for tok in args.eps_list.split(",") if tok.strip()]
    if not eps_list:
        raise ValueError("--eps-list must contain at least one value")
    x, bundle = _load_input(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rank = bundle.w_true.shape[1] if (bundle is not None
                                      and args.ref == "ground-truth") else args.rank
    ref = _reference(args, x, bundle, rank)
    args_dict = vars(args).copy()
    payloads = [(x, ref, args_dict, eps) for eps in eps_list]
    outcomes: dict[float, tuple] = {}
    errors: dict[float, str] = {}
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as ex:
            futures = {ex.submit(_sweep_one, p): p[3] for p in payloads}
            for fut in concurrent.futures.as_completed(futures):
                eps = futures[fut]
                try:
                    outcomes[eps] = fut.result()
                except Exception as err:  # per-epsilon failures are recorded
                    errors[eps] = str(err)
    else:
        for payload in payloads:
            try:
                outcomes[payload[3]] = _sweep_one(payload)
            except (ValueError, ArithmeticError, SingularMatrixError,
                    FixedPointError, DegenerateComponentError) as err:
                errors[payload[3]] = str(err)
    rows = []
    for eps in eps_list:   # aggregation ordered by the requested list
        if eps in outcomes:
            _, fe, recon_rel, pert = outcomes[eps]
            rows.append([eps, fe, recon_rel, pert, "ok"])
        else:
            rows.append([eps, float("nan"), float("nan"), float("nan"),
                         "failed"])
            print(f"sweep: eps={eps} failed: {errors[eps]}", file=sys.stderr)
    _write_csv(out_dir / "sweep.csv",
               ["epsilon", "fe", "recon_rel", "perturbation_norm", "status"],
               rows)
    config = _echo_config(args, ["input", "format", "normalize", "allow_shift",
                                 "synthetic", "m", "n", "data_seed", "method",
                                 "objective", "norm", "eps_list", "steps",
                                 "step_size", "iters", "rank", "ref", "seed",
                                 "clamp_hi", "fp_tol", "jobs", "out_dir"])
    _write_summary(out_dir / "summary.json", "sweep", config, {
        "succeeded": len(outcomes),
        "failed": len(errors),
    })
    print(f"sweep: {len(outcomes)}/{len(eps_list)} epsilon values succeeded "
          f"-> {out_dir}")
    return 0 if outcomes else NUMERICAL_ERROR


# ---------------------------------------------------------------------- path

def cmd_path(args) -> int:
    _resolve_ref_default(args)
    x, bundle = _load_input(args)
    if bundle is not None:
        x_tilde = remove_spikes(bundle.w_true, SyntheticSpec(
            m=args.m, n=args.n, seed=args.data_seed)) @ bundle.scaled_truth()[1]
        x_tilde = np.clip(x_tilde, 0.0, None)
    elif args.tilde is not None:
        x_tilde = load_matrix(args.tilde, args.format,
                              allow_shift=args.allow_shift)
        if args.normalize:
            x_tilde, _, _ = normalize_unit(x_tilde)
    else:
        raise ValueError("provide --tilde FILE or --synthetic")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rank = bundle.w_true.shape[1] if (bundle is not None
                                      and args.ref == "ground-truth") else args.rank
    ref = _reference(args, x, bundle, rank)
    count = int(round(1.0 / args.alpha_step)) + 1
    alphas = np.linspace(0.0, 1.0, count).tolist()
    cfg = _attack_config(args, 0.0)
    points = interpolation_path(x, x_tilde, alphas, ref, cfg)
    _write_csv(out_dir / "path.csv", ["alpha", "fe", "recon_rel", "w_error"],
               [[p.alpha, p.fe, p.recon_rel, p.w_error] for p in points])
    config = _echo_config(args, ["input", "format", "normalize", "allow_shift",
                                 "synthetic", "m", "n", "data_seed", "tilde",
                                 "alpha_step", "iters", "rank", "ref", "seed",
                                 "out_dir"])
    fes = [p.fe for p in points]
    jumps = [b - a for a, b in zip(fes, fes[1:])]
    jump_at = points[int(np.argmax(jumps)) + 1].alpha if jumps else 0.0
    _write_summary(out_dir / "summary.json", "path", config, {
        "fe_start": points[0].fe,
        "fe_end": points[-1].fe,
        "largest_jump_alpha": jump_at,
    })
    print(f"path: FE {points[0].fe:.4g} -> {points[-1].fe:.4g}, largest jump "
          f"at alpha={jump_at:.3g} -> {out_dir}")
    return 0


# ----------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    rng = make_rng(args.seed)
    w_gen, h_gen = seed_factors(rng, args.m, args.n, args.k)
    x = w_gen @ h_gen
    ref_w, ref_h = seed_factors(make_rng(args.seed + 1), args.m, args.n, args.k)
    ref = balance(ref_w, ref_h)
    rng_init = make_rng(args.seed + 2)
    w0, h0 = seed_factors(rng_init, args.m, args.n, args.k)

    failures: list[str] = []
    bp = backprop_gradient(x, w0, h0, args.t, ref)
    head = feature_error_head(ref)

    def pipeline_loss(xq: np.ndarray) -> float:
        model = run_nmf(xq, w0, h0, NmfConfig(max_iterations=args.t,
                                              record_every=args.t))
        return head(xq, model.w, model.h).value

    fd_rng = make_rng(args.seed + 3)
    h_step = args.fd_step
    worst = 0.0
    for _ in range(args.directions):
        d = fd_rng.standard_normal(x.shape)
        d /= frobenius_norm(d)
        fd = (pipeline_loss(x + h_step * d)
              - pipeline_loss(x - h_step * d)) / (2.0 * h_step)
        an = float(np.sum(bp.grad_x * d))
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-30)
        worst = max(worst, rel)
    print(f"gradcheck: unrolled vs finite differences, max relative error "
          f"{worst:.3e} over {args.directions} directions "
          f"(tolerance {args.fd_tol:g})")
    if not worst < args.fd_tol:
        failures.append(f"finite-difference mismatch {worst:.3e}")

    model = run_nmf(x, w0, h0, NmfConfig(max_iterations=args.t,
                                         record_every=args.t))
    try:
        im = implicit_gradient(x, model, ref, fp_tol=args.fp_tol)
        denom = frobenius_norm(bp.grad_x) * frobenius_norm(im.grad_x)
        cosine = float(np.sum(bp.grad_x * im.grad_x)) / denom if denom else 1.0
        gap = abs(frobenius_norm(im.grad_x) - frobenius_norm(bp.grad_x)) \
            / max(frobenius_norm(bp.grad_x), 1e-30)
        print(f"gradcheck: implicit vs unrolled, cosine {cosine:.6f} "
              f"(> 0.99 required), relative norm gap {gap:.3e} (< 0.05)")
        if not (cosine > 0.99 and gap < 0.05):
            failures.append(f"implicit/unrolled disagreement: cosine {cosine:.4f}, "
                            f"gap {gap:.3e}")
    except FixedPointError as err:
        print(f"gradcheck: implicit path unavailable: {err}")
        failures.append(str(err))

    if failures:
        for f in failures:
            print(f"gradcheck FAILED: {f}")
        return 1
    print("gradcheck: all comparisons within tolerance")
    return 0


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmfattack",
        description="Adversarial robustness probes for KL-divergence NMF.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="run the NMF solver")
    _add_input_options(p)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--tol", type=float, default=None,
                   help="optional early-stop relative change tolerance")
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out-dir", default="factorize-out")
    p.set_defaults(fn=cmd_factorize)

    p = sub.add_parser("attack", help="run an FGSM/PGD attack")
    _add_input_options(p)
    _add_attack_options(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--gradcheck", action="store_true",
                   help="also report the cross-engine gradient cosine")
    p.add_argument("--out-dir", default="attack-out")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("sweep", help="attacks over a list of epsilons")
    _add_input_options(p)
    _add_attack_options(p)
    p.add_argument("--eps-list", required=True,
                   help="comma-separated epsilon values")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="sweep-out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("path", help="interpolation experiment")
    _add_input_options(p)
    p.add_argument("--tilde", help="perturbed matrix file (unless --synthetic)")
    p.add_argument("--alpha-step", type=float, default=0.02)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--ref", choices=["ground-truth", "clean-nmf"], default=None)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out-dir", default="path-out")
    p.set_defaults(fn=cmd_path)

    p = sub.add_parser("gradcheck", help="cross-validate the gradient engines")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--t", type=int, default=300, help="NMF iterations")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--fd-tol", type=float, default=1e-4)
    p.add_argument("--fp-tol", type=float, default=1e-6)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def _validate(args, parser: argparse.ArgumentParser) -> None:
    rank = getattr(args, "rank", None)
    if rank is not None and rank < 1:
        parser.error(f"--rank must be >= 1, got {rank}")
    iters = getattr(args, "iters", None)
    if iters is not None and iters < 1:
        parser.error(f"--iters must be >= 1, got {iters}")
    if getattr(args, "alpha_step", None) is not None \
            and not 0.0 < args.alpha_step <= 1.0:
        parser.error(f"--alpha-step must be in (0, 1], got {args.alpha_step}")
    eps = getattr(args, "eps", None)
    if eps is not None and eps < 0:
        parser.error(f"--eps must be >= 0, got {eps}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(args, parser)
    try:
        return args.fn(args)
    except (SingularMatrixError, FixedPointError, DegenerateComponentError,
            FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
