"""Experiment orchestration: parameter sweeps, trace CSVs, saved-time summary.

Every run owns one CSV under ``out_dir/<experiment>/<run-id>.csv`` with the
fixed schema ``iter,elapsed_s,cost,psnr,inner_iters,sketch_s``; a sweep also
writes ``summary.csv``.  Re-running with the same seeds reproduces every
non-timing column exactly.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Rng
from .problems import ProblemInstance, make_ct, make_deblur, make_sr
from .prox import BoxConstraint
from .solvers import (IrmConfig, SolverTrace, WapgConfig,
                      build_wapg_preconditioner, irm_solve, wapg_solve)

__all__ = [
    "ExperimentSpec",
    "RunResult",
    "saved_time",
    "run_experiment",
    "compare_inner_iterations",
    "write_trace_csv",
    "TRACE_HEADER",
]

TRACE_HEADER = ["iter", "elapsed_s", "cost", "psnr", "inner_iters", "sketch_s"]
_TIMING_COLUMNS = {"elapsed_s", "sketch_s"}


def saved_time(t_without: float, t_with: float) -> float:
    """Fraction of wall time removed by preconditioning."""
    if t_without <= 0:
        raise ValueError("baseline time must be positive")
    return (t_without - t_with) / t_without


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    task: str  # deblur | sr | ct
    solver: str  # irm | wapg
    out_dir: str
    n: int = 64
    sketch_sizes: tuple[int, ...] = (0, 100)
    lam_grid: tuple[float, ...] = (1e-2,)
    seeds: tuple[int, ...] = (0,)
    kernel: str = "gauss9"
    factor: int = 2
    views: int = 60
    regularizer: str = "tv"
    noise_frac: float = 0.05
    noise_sigma: float = 0.01
    p: float = 1.0
    q: float = 1.0
    phi: float = 1
    outer_max: int = 20
    inner_tol: Optional[float] = None  # None: solver default (1e-4 PCG, 1e-6 dual)
    inner_max: int = 200
    box_lo: float = -math.inf
    box_hi: float = math.inf
    sqrt_tail: Optional[bool] = None  # None: solver-appropriate default
    jobs: int = 1

    def __post_init__(self):
        if self.task not in ("deblur", "sr", "ct"):
            raise ValueError("task must be deblur, sr, or ct")
        if self.solver not in ("irm", "wapg"):
            raise ValueError("solver must be irm or wapg")
        if not self.sketch_sizes or not self.lam_grid or not self.seeds:
            raise ValueError("sketch sizes, lambda grid, and seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


@dataclass(frozen=True)
class RunResult:
    run_id: str
    K: int
    lam: float
    seed: int
    status: str  # "ok" or the error message
    iterations: int
    wall_s: float
    sketch_s: float
    final_cost: float
    final_psnr: float
    best_psnr: float
    csv_path: str


def build_problem(spec: ExperimentSpec, seed: int) -> ProblemInstance:
    rng = Rng(seed)
    if spec.task == "deblur":
        return make_deblur(spec.kernel, spec.n, spec.noise_frac, rng)
    if spec.task == "sr":
        return make_sr(spec.n, spec.factor, spec.noise_frac, rng)
    return make_ct(spec.n, spec.views, spec.regularizer, spec.noise_sigma, rng)


def _run_one(spec: ExperimentSpec, lam: float, K: int, seed: int) -> RunResult:
    run_id = f"{spec.solver}_K{K}_lam{lam:g}_seed{seed}"
    out = Path(spec.out_dir) / spec.name
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{run_id}.csv"
    try:
        problem = build_problem(spec, seed)
        rng = Rng(seed).spawn(1)  # solver stream; problem noise used stream 0
        if spec.solver == "irm":
            cfg = IrmConfig(p=spec.p, q=spec.q, lam=lam, outer_max=spec.outer_max,
                            inner_tol=spec.inner_tol if spec.inner_tol is not None else 1e-4,
                            inner_max=spec.inner_max, sketch_size=K,
                            sqrt_tail=bool(spec.sqrt_tail) if spec.sqrt_tail is not None else False)
            _, trace = irm_solve(problem, cfg, rng)
        else:
            cfg = WapgConfig(lam=lam, phi=spec.phi, sketch_size=K,
                             outer_max=spec.outer_max,
                             box=BoxConstraint(spec.box_lo, spec.box_hi),
                             prox_mode="separable" if spec.regularizer == "wavelet" else "dual",
                             inner_tol=spec.inner_tol if spec.inner_tol is not None else 1e-6,
                             inner_max=spec.inner_max,
                             sqrt_tail=bool(spec.sqrt_tail) if spec.sqrt_tail is not None else False)
            pre, sketch_s = build_wapg_preconditioner(problem, cfg, rng.spawn(0))
            _, trace = wapg_solve(problem, cfg, pre, rng.spawn(1), sketch_seconds=sketch_s)
        # wall time is the trace's final elapsed_s (sketching included), so
        # every summary ST value can be recomputed from the CSVs alone
        wall = float(trace.records[-1].elapsed_s)
        write_trace_csv(csv_path, trace)
        return RunResult(run_id, K, lam, seed, "ok", len(trace.records), wall,
                         float(sum(r.sketch_s for r in trace.records)),
                         float(trace.costs[-1]), float(trace.psnrs[-1]),
                         float(trace.psnrs.max()), str(csv_path))
    except Exception as exc:  # record the failure, keep sweeping
        return RunResult(run_id, K, lam, seed, f"error: {exc}", 0, 0.0, 0.0,
                         math.nan, math.nan, math.nan, str(csv_path))


def run_experiment(spec: ExperimentSpec) -> list[RunResult]:
    """Run every (lambda, K, seed) combination and write per-run plus summary CSVs."""
    combos = [(lam, K, seed) for lam in spec.lam_grid
              for K in spec.sketch_sizes for seed in spec.seeds]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*[(spec, lam, K, seed)
                                                     for lam, K, seed in combos])))
    else:
        results = [_run_one(spec, lam, K, seed) for lam, K, seed in combos]
    _write_summary(spec, results)
    return results


def _write_summary(spec: ExperimentSpec, results: list[RunResult]) -> None:
    baseline = {(r.lam, r.seed): r.wall_s for r in results
                if r.K == 0 and r.status == "ok"}
    best_lam: dict[int, float] = {}
    for K in spec.sketch_sizes:
        scores = {}
        for lam in spec.lam_grid:
            vals = [r.best_psnr for r in results
                    if r.K == K and r.lam == lam and r.status == "ok"]
            if vals:
                scores[lam] = float(np.mean(vals))
        if scores:
            best_lam[K] = max(scores, key=scores.get)
    path = Path(spec.out_dir) / spec.name / "summary.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run_id", "solver", "task", "K", "lambda", "seed", "status",
                         "iters", "wall_s", "sketch_s", "final_cost", "final_psnr",
                         "best_psnr", "st", "best_lambda"])
        for r in results:
            st = ""
            if r.K > 0 and r.status == "ok" and (r.lam, r.seed) in baseline:
                st = _fmt(saved_time(baseline[(r.lam, r.seed)], r.wall_s))
            writer.writerow([r.run_id, spec.solver, spec.task, r.K, _fmt(r.lam),
                             r.seed, r.status, r.iterations, _fmt(r.wall_s),
                             _fmt(r.sketch_s), _fmt(r.final_cost), _fmt(r.final_psnr),
                             _fmt(r.best_psnr), st,
                             int(best_lam.get(r.K) == r.lam)])


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trace_csv(path, trace: SolverTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        for r in trace.records:
            writer.writerow([r.iter, _fmt(r.elapsed_s), _fmt(r.cost), _fmt(r.psnr),
                             r.inner_iters, _fmt(r.sketch_s)])


@dataclass(frozen=True)
class InnerIterationComparison:
    per_outer_without: list[list[int]]  # one list per seed
    per_outer_with: list[list[int]]
    per_seed_reduction: list[float]
    median_reduction: float


def compare_inner_iterations(problem: ProblemInstance, p: float, q: float,
                             lam: float, K: int, seeds: list[int],
                             inner_tol: float = 1e-4, outer_max: int = 8,
                             inner_max: int = 20000) -> InnerIterationComparison:
    """Run the reweighted solver twice per seed (without and with the
    preconditioner, identical streams) and report the inner-iteration
    reduction 1 - sum(with)/sum(without).

    Both runs start from zero with an uncapped inner budget so counts
    reflect solves to the same accuracy, never the iteration ceiling.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    x0 = np.zeros(problem.A.domain_dim)
    without, with_, reductions = [], [], []
    for seed in seeds:
        base_cfg = IrmConfig(p=p, q=q, lam=lam, inner_tol=inner_tol,
                             outer_max=outer_max, inner_max=inner_max,
                             sketch_size=0)
        pre_cfg = IrmConfig(p=p, q=q, lam=lam, inner_tol=inner_tol,
                            outer_max=outer_max, inner_max=inner_max,
                            sketch_size=K)
        _, trace0 = irm_solve(problem, base_cfg, Rng(seed), x0=x0)
        _, trace1 = irm_solve(problem, pre_cfg, Rng(seed), x0=x0)
        c0 = [int(v) for v in trace0.inner_iters]
        c1 = [int(v) for v in trace1.inner_iters]
        without.append(c0)
        with_.append(c1)
        total0 = sum(c0)
        reductions.append(0.0 if total0 == 0 else 1.0 - sum(c1) / total0)
    return InnerIterationComparison(without, with_, reductions,
                                    float(np.median(reductions)))
