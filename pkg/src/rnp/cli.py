"""Command-line entry point: experiment sweeps and dense-oracle diagnostics.

Configuration files are flat ``key=value`` text (one per line, ``#`` starts
a comment); keys use the long flag names with dashes or underscores.  Flags
given on the command line override file values.  The default output root is
``$RNP_OUT_DIR`` or ``./out``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .core import Rng, standard_normal_matrix
from .harness import ExperimentSpec, run_experiment, saved_time
from .linops import matrix_operator
from .sketch import (build_preconditioner, effective_dimension, nystrom_approx,
                     nystrom_oracle_dense, recommended_sketch_size)
from .solvers import half_quadratic_constants

CONDITION_NUMBER_BOUND = 28.0


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--n", type=int, default=64, help="image side length")
    sub.add_argument("--lambda", dest="lam", type=float, default=None,
                     help="single regularization weight")
    sub.add_argument("--lambda-grid", type=_parse_floats, default=None,
                     help="comma-separated weights to sweep")
    sub.add_argument("--K", type=_parse_ints, default=None,
                     help="comma-separated sketch sizes (0 = no preconditioner)")
    sub.add_argument("--seed", type=_parse_ints, default=(0,),
                     help="comma-separated seeds")
    sub.add_argument("--jobs", type=int, default=1, help="parallel run slots")
    sub.add_argument("--out", default=None, help="output root directory")
    sub.add_argument("--tol", type=float, default=None,
                     help="inner solver tolerance (default: 1e-4 PCG, 1e-6 dual)")
    sub.add_argument("--max-iter", type=int, default=None, help="outer iterations")
    sub.add_argument("--sqrt-tail", choices=["on", "off"], default=None,
                     help="replace the sketch tail value by its square root")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnp",
        description="Sketch-preconditioned variational image reconstruction")
    subs = parser.add_subparsers(dest="command", required=True)

    deblur = subs.add_parser("deblur", help="blur + salt-and-pepper restoration",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(deblur)
    deblur.add_argument("--kernel", choices=["uniform9", "gauss9"], default="gauss9")
    deblur.add_argument("--p", type=float, default=1.0)
    deblur.add_argument("--q", type=float, default=1.0)
    deblur.add_argument("--noise-frac", type=float, default=0.05)

    sr = subs.add_parser("sr", help="super-resolution restoration",
                         formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(sr)
    sr.add_argument("--factor", type=int, default=2)
    sr.add_argument("--p", type=float, default=1.0)
    sr.add_argument("--q", type=float, default=1.0)
    sr.add_argument("--noise-frac", type=float, default=0.05)

    ct = subs.add_parser("ct", help="parallel-beam tomography reconstruction",
                         formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(ct)
    ct.add_argument("--reg", choices=["wavelet", "tv", "hs"], default="tv")
    ct.add_argument("--views", type=int, default=60)
    ct.add_argument("--phi", type=float, default=1.0)
    ct.add_argument("--noise-sigma", type=float, default=0.01)

    diag = subs.add_parser("diag", help="dense-oracle diagnostic suite",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--identity-grid", choices=["coarse", "fine"], default="coarse")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Load --config values as defaults on the active subcommand's parser;
    explicit flags still win because they are parsed afterwards."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    subparsers = next(a for a in parser._actions
                      if isinstance(a, argparse._SubParsersAction))
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    sub = subparsers.choices.get(command)
    if sub is None:
        return argv  # let argparse report the bad subcommand
    actions = {opt.lstrip("-").replace("-", "_"): a for a in sub._actions
               for opt in a.option_strings if opt.startswith("--")}
    with open(known.config, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{known.config}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            action = actions.get(key.replace("-", "_"))
            if action is None:
                raise SystemExit(f"{known.config}:{lineno}: unknown key {key!r}")
            sub.set_defaults(**{action.dest: action.type(value) if action.type else value})
    return argv


def _default_k(command: str, args) -> tuple[int, ...]:
    if command == "ct":
        return (0, 100) if args.reg == "hs" else (0, 20)
    return (0, 100)


def _default_lam(command: str, args) -> tuple[float, ...]:
    if command == "ct":
        return {"wavelet": (2e-2,), "tv": (5e-2,), "hs": (5e-2,)}[args.reg]
    return (2e-3,)


def _run_task(command: str, args) -> int:
    out = args.out or os.environ.get("RNP_OUT_DIR", "out")
    lam_grid = args.lambda_grid or ((args.lam,) if args.lam is not None
                                    else _default_lam(command, args))
    sketch_sizes = args.K if args.K is not None else _default_k(command, args)
    sqrt_tail = None if args.sqrt_tail is None else args.sqrt_tail == "on"
    variant = {"deblur": lambda: args.kernel, "sr": lambda: f"x{args.factor}",
               "ct": lambda: args.reg}[command]()
    spec = ExperimentSpec(
        name=f"{command}_{variant}_n{args.n}",
        task=command,
        solver="wapg" if command == "ct" else "irm",
        out_dir=out,
        n=args.n,
        sketch_sizes=sketch_sizes,
        lam_grid=lam_grid,
        seeds=args.seed,
        kernel=getattr(args, "kernel", "gauss9"),
        factor=getattr(args, "factor", 2),
        views=getattr(args, "views", 60),
        regularizer=getattr(args, "reg", "tv"),
        noise_frac=getattr(args, "noise_frac", 0.05),
        noise_sigma=getattr(args, "noise_sigma", 0.01),
        p=getattr(args, "p", 1.0),
        q=getattr(args, "q", 1.0),
        phi=getattr(args, "phi", 1.0),
        outer_max=args.max_iter or (60 if command == "ct" else 20),
        inner_tol=args.tol,
        box_lo=0.0 if command == "ct" else -math.inf,
        box_hi=1.0 if command == "ct" else math.inf,
        sqrt_tail=sqrt_tail,
        jobs=args.jobs,
    )
    results = run_experiment(spec)
    baseline = {(r.lam, r.seed): r.wall_s for r in results if r.K == 0 and r.status == "ok"}
    print(f"{'run':34s} {'status':8s} {'best_psnr':>10s} {'wall_s':>9s} {'ST':>7s}")
    failures = 0
    for r in results:
        st = ""
        if r.K > 0 and r.status == "ok" and (r.lam, r.seed) in baseline:
            st = f"{saved_time(baseline[(r.lam, r.seed)], r.wall_s):.3f}"
        status = "ok" if r.status == "ok" else "FAIL"
        failures += status == "FAIL"
        best = "" if math.isnan(r.best_psnr) else f"{r.best_psnr:.2f}"
        print(f"{r.run_id:34s} {status:8s} {best:>10s} {r.wall_s:9.2f} {st:>7s}")
    print(f"summary: {os.path.join(out, spec.name, 'summary.csv')}")
    return 1 if failures else 0


def _run_diag(args) -> int:
    ok = True

    # Sketch vs the dense pseudo-inverse formulation on random PSD matrices.
    rng = Rng(args.seed)
    worst = 0.0
    for trial in range(5):
        n, k = 40, 15
        basis, _ = np.linalg.qr(standard_normal_matrix(n, n, rng.spawn(trial)))
        lam = np.exp(np.linspace(0.0, -6.0, n))
        dense = (basis * lam) @ basis.T
        probe_rng = rng.spawn(100 + trial)
        factor = nystrom_approx(matrix_operator(dense), k, probe_rng)
        omega = standard_normal_matrix(n, k, Rng(probe_rng.seed, probe_rng.stream))
        oracle = nystrom_oracle_dense(dense, omega)
        approx = (factor.U * factor.S_hat) @ factor.U.T
        worst = max(worst, np.linalg.norm(approx - oracle) / np.linalg.norm(oracle))
    print(f"sketch vs dense oracle: max relative error {worst:.3e} (threshold 1e-6)")
    ok &= worst <= 1e-6

    # Condition number of the preconditioned matrix at the recommended sketch size.
    n, mu = 200, 1e-2
    lam = 0.9 ** np.arange(1, n + 1)
    phi = np.diag(lam)
    k = recommended_sketch_size(effective_dimension(phi, mu))
    kappas = []
    for trial in range(20):
        factor = nystrom_approx(matrix_operator(phi), min(k, n), Rng(args.seed).spawn(trial))
        pre = build_preconditioner(factor, mu, sqrt_tail=False)
        half = np.column_stack([pre.apply_Pinvhalf(col) for col in np.eye(n)])
        mat = half @ (phi + mu * np.eye(n)) @ half
        eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        kappas.append(eig[-1] / eig[0])
    med = float(np.median(kappas))
    print(f"preconditioned condition number: median {med:.2f} "
          f"(K={k}, threshold {CONDITION_NUMBER_BOUND})")
    ok &= med < CONDITION_NUMBER_BOUND

    # Envelope identity for the half-quadratic constants.
    grid = 200 if args.identity_grid == "fine" else 50
    worst_val, worst_arg = 0.0, 0.0
    for p in (0.3, 0.5, 1.0, 1.5):
        a, b = half_quadratic_constants(p)
        for r in np.logspace(-1, 1, grid):
            beta = 0.5 * p * r ** (p - 2.0)
            value = beta * r * r + 1.0 / (b * beta ** a)
            worst_val = max(worst_val, abs(value - r ** p))
            # stationarity of the bracket at the closed-form minimizer
            deriv = r * r - a / (b * beta ** (a + 1.0))
            worst_arg = max(worst_arg, abs(deriv) * abs(beta) / max(r * r, 1.0))
    print(f"half-quadratic identity: max envelope error {worst_val:.3e}, "
          f"max scaled stationarity {worst_arg:.3e} (threshold 1e-8)")
    ok &= worst_val <= 1e-8 and worst_arg <= 1e-8

    print("diagnostics:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = _build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    try:
        if args.command == "diag":
            return _run_diag(args)
        return _run_task(args.command, args)
    except (ValueError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
