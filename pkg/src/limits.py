"""Numerical checks of the positive limit theorems."""

import logging
import math
from typing import List, Optional

import numpy as np

from src.errors import ConfigurationError, DomainError
from src.models import (
    ConvergenceExperiment,
    ConvergenceTrace,
    DiagonalGap,
    L1Curve,
    L1Point,
    PanelRow,
    ProcessSpec,
    TracePoint,
    UStatSeries,
    WeakConvergencePanel,
)
from src.processes import generate, product_integral, validate_spec
from src.ustat import Kernel, analytic_target, build_kernel, u_series
from src.utils import split_seed
from src.worker import ReplicateWorker

logger = logging.getLogger(__name__)

TARGET_REPS = 1_000_000
MIN_L1_REPS = 30
PANEL_FREQUENCIES = range(1, 9)
_GAP_SLACK = 1e-12


def experiment_kernel(exp: ConvergenceExperiment) -> Kernel:
    """The built-in kernel an experiment names, with the bound for its marginal."""
    return build_kernel(exp.kernel, exp.spec.marginal, exp.kernel_params)


def resolve_target(exp: ConvergenceExperiment, kernel: Optional[Kernel] = None) -> float:
    """Double integral of h against F x F: given, analytic, or Monte-Carlo."""
    if exp.target is not None:
        return exp.target
    target = analytic_target(exp.kernel, exp.spec.marginal, exp.kernel_params)
    if target is not None:
        return target
    kernel = kernel or experiment_kernel(exp)
    estimate = product_integral(exp.spec, kernel, TARGET_REPS, split_seed(exp.seed, 2**32))
    logger.info(f"Target of {exp.kernel} estimated as {estimate.estimate} +- {estimate.stderr}")
    return estimate.estimate


def _replicate_series(exp: ConvergenceExperiment, kernel: Kernel, threads: Optional[int]) -> List[UStatSeries]:
    validate_spec(exp.spec)
    n_max = exp.n_grid[-1]

    def run(replicate: int) -> UStatSeries:
        path = generate(exp.spec, n_max, split_seed(exp.seed, replicate))
        return u_series(path, kernel, exp.n_grid)

    return ReplicateWorker(threads=threads, name=f"{exp.kernel} replicates").map(run, exp.reps)


def as_convergence_trace(exp: ConvergenceExperiment, threads: Optional[int] = None) -> ConvergenceTrace:
    """Trajectories |U_n - target| per replicate for a bounded kernel."""
    kernel = experiment_kernel(exp)
    if kernel.bound is None:
        raise ConfigurationError(
            f"kernel '{exp.kernel}' has no bound under a {exp.spec.marginal} marginal; "
            "almost sure convergence is only certified for bounded kernels",
            kernel=exp.kernel,
        )
    target = resolve_target(exp, kernel)
    if not math.isfinite(target):
        raise ConfigurationError(f"target must be finite, got {target}")

    points = []
    within = 0
    for replicate, series in enumerate(_replicate_series(exp, kernel, threads)):
        for n, u in zip(series.grid, series.u):
            points.append(TracePoint(replicate=replicate, n=n, u=u, error=abs(u - target)))
        if abs(series.u[-1] - target) <= exp.tolerance:
            within += 1

    trace = ConvergenceTrace(experiment=exp, target=target, points=points, fraction_within=within / exp.reps)
    logger.info(
        f"{exp.kernel} under {exp.spec.label()}: {trace.fraction_within:.1%} of {exp.reps} replicates "
        f"within {exp.tolerance} at n={exp.n_grid[-1]}"
    )
    return trace


def l1_error_curve(exp: ConvergenceExperiment, threads: Optional[int] = None) -> L1Curve:
    """Monte-Carlo estimate of E|U_n - target| at every grid point."""
    if exp.reps < MIN_L1_REPS:
        raise DomainError(f"an L1 curve needs reps >= {MIN_L1_REPS}, got {exp.reps}", reps=exp.reps)
    kernel = experiment_kernel(exp)
    target = resolve_target(exp, kernel)
    if not math.isfinite(target):
        raise ConfigurationError(f"target must be finite, got {target}")

    errors = np.array([[abs(u - target) for u in series.u] for series in _replicate_series(exp, kernel, threads)])
    means = errors.mean(axis=0)
    stderrs = errors.std(axis=0, ddof=1) / math.sqrt(exp.reps)
    points = [
        L1Point(n=n, mean_error=float(mean), stderr=float(stderr))
        for n, mean, stderr in zip(exp.n_grid, means, stderrs)
    ]

    final = points[-1]
    curve = L1Curve(
        experiment=exp,
        target=target,
        points=points,
        final_is_minimum=final.mean_error <= float(means.min()) + final.stderr,
        final_within_tolerance=final.mean_error <= exp.tolerance,
    )
    logger.info(f"L1 error of {exp.kernel} under {exp.spec.label()} at n={final.n}: {final.mean_error:.5f}")
    return curve


def weak_convergence_panel(spec: ProcessSpec, n_grid: List[int], seed: int) -> WeakConvergencePanel:
    """|integral of f dF_n| for f in {cos 2 pi m x, sin 2 pi m x : m = 1..8}.

    Every f integrates to 0 against the uniform law.
    """
    validate_spec(spec)
    if spec.marginal != "uniform":
        raise ConfigurationError(f"the trigonometric family is built for uniform marginals, not {spec.label()}")
    if not n_grid or n_grid[0] < 1 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigurationError("n_grid must be strictly increasing and start at n >= 1")

    path = generate(spec, n_grid[-1], seed)
    index = np.asarray(n_grid, dtype=np.int64) - 1
    counts = np.asarray(n_grid, dtype=np.float64)
    rows = []
    maxima = np.zeros(len(n_grid))
    for m in PANEL_FREQUENCIES:
        angle = 2.0 * np.pi * m * path.values
        for name, values in ((f"cos{m}", np.cos(angle)), (f"sin{m}", np.sin(angle))):
            averages = np.abs(np.cumsum(values)[index] / counts)
            maxima = np.maximum(maxima, averages)
            rows.extend(PanelRow(n=n, function=name, value=float(value)) for n, value in zip(n_grid, averages))

    rows.sort(key=lambda row: row.n)
    max_by_n = {n: float(value) for n, value in zip(n_grid, maxima)}
    logger.info(f"Weak convergence panel under {spec.label()}: max at n={n_grid[-1]} is {max_by_n[n_grid[-1]]:.5f}")
    return WeakConvergencePanel(spec=spec, seed=seed, rows=rows, max_by_n=max_by_n)


def diagonal_gap_check(series: UStatSeries, bound: float) -> List[DiagonalGap]:
    """|V_n - U_n| <= 2B/n at every grid point of a bounded kernel's series."""
    if bound is None or bound < 0:
        raise ConfigurationError("diagonal gap check needs a kernel bound")
    gaps = []
    for n, u, v in zip(series.grid, series.u, series.v):
        gap = abs(v - u)
        limit = 2.0 * bound / n
        gaps.append(DiagonalGap(n=n, gap=gap, limit=limit, within=gap <= limit + _GAP_SLACK))
    return gaps
