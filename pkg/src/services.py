"""Experiment services behind the command-line front end."""

import logging
import math
import time
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src import centered, limits, oscillate
from src.config import settings
from src.errors import AssertionFailure, ConfigurationError, DiagnosticError, DigitResourceError, LabError
from src.models import (
    Assertion,
    ConvergenceExperiment,
    ExperimentReport,
    LadderValidationReport,
    ProcessSpec,
    RunConfig,
    RunManifest,
)
from src.processes import generate, sample_marginal
from src.reports import ReportWriter
from src.ustat import (
    BUILTIN_KERNELS,
    build_kernel,
    diagonal_sum,
    u_naive,
    u_series,
    uv_identity_gap,
    uv_identity_tolerance,
    v_plugin,
)
from src.utils import dyadic_grid, format_fraction, format_timestamp, generate_run_id, get_current_timestamp, split_seed
from src.worker import ReplicateWorker

logger = logging.getLogger(__name__)

DEFAULT_PARAMETERS: Dict[str, Dict[str, Any]] = {
    "example1": {"levels": 12, "n": 64, "sim_seeds": 10, "guard_digits": 128},
    "example2": {"n": 4096, "reps": 20000, "ks_sample": 5000, "gap_n": 256, "gap_reps": 10000, "mcleish_max": 512},
    "theorem-as": {
        "process": {"kind": "doubling-map"},
        "kernel": "cos",
        "n_grid": [100, 500, 1000, 2500, 5000],
        "reps": 50,
        "tolerance": 0.05,
    },
    "theorem-l1": {
        "process": {"kind": "gaussian-ar1", "rho": 0.5},
        "kernel": "product",
        "n_grid": [64, 256, 1024, 4096],
        "reps": 100,
        "tolerance": 0.05,
    },
    "weak-conv": {"process": {"kind": "doubling-map"}, "n_grid": [1, 10, 100, 1000, 10000], "tolerance": 0.05},
    "engine-check": {"n": 200, "kernel": "abs-diff", "process": {"kind": "iid-uniform"}},
}

SEPARATION_LEVEL = 8
ASYMPTOTIC_LEVELS = 10
BRUTE_FORCE_LIMIT = 2000
EXACT_CHECK_N = 30
SYMMETRY_PAIRS = 10_000
GAP_FLOOR_RANGE = (8, 4096)
MEAN_TABLE_J = 1000
MEAN_TABLE_FIRST_EXCEEDING = 180
ORACLE_N = 16
ORACLE_REPLICATES = 5


def _fraction_cells(value: Optional[Fraction]) -> Tuple[Any, str]:
    if value is None:
        return "", ""
    return value, f"{value.numerator}/{value.denominator}"


class ExperimentService:
    """Runs one subcommand and turns its outcome into a report."""

    def __init__(self, threads: Optional[int] = None):
        """Initialize experiment service."""
        self.threads = threads or settings.threads

    @staticmethod
    def parameters(config: RunConfig) -> Dict[str, Any]:
        """Subcommand defaults overlaid with the configured parameters."""
        merged = dict(DEFAULT_PARAMETERS[config.subcommand])
        merged.update(config.parameters)
        return merged

    def dispatch(self, config: RunConfig) -> ExperimentReport:
        handlers: Dict[str, Callable[[Dict[str, Any], int], ExperimentReport]] = {
            "example1": self.example1,
            "example2": self.example2,
            "theorem-as": self.theorem_as,
            "theorem-l1": self.theorem_l1,
            "weak-conv": self.weak_conv,
            "engine-check": self.engine_check,
        }
        params = self.parameters(config)
        logger.info(f"Running {config.subcommand} with seed={config.seed} parameters={params}")
        return handlers[config.subcommand](params, config.seed)

    def run(self, config: RunConfig) -> Tuple[int, RunManifest]:
        """Execute a run, write its reports and manifest, and return the exit status.

        Configuration and domain errors propagate to the caller after the
        manifest records them; numerical failures end the run with status 1.
        """
        run_id = generate_run_id()
        started_at = get_current_timestamp()
        started = time.monotonic()
        writer = ReportWriter(config)
        files: List[Path] = []
        assertions: List[Assertion] = []
        error: Optional[Dict[str, Any]] = None
        failure: Optional[Exception] = None

        try:
            report = self.dispatch(config)
            files = writer.write(report)
            assertions = report.assertions
        except (DiagnosticError, DigitResourceError) as exc:
            logger.error(f"Run {run_id} failed: {exc.message}")
            error = exc.to_payload(run_id)["error"]
        except LabError as exc:
            error = exc.to_payload(run_id)["error"]
            failure = exc
        except ValidationError as exc:
            invalid = ConfigurationError(f"invalid parameters: {exc.error_count()} validation error(s)", errors=str(exc))
            error = invalid.to_payload(run_id)["error"]
            failure = exc

        failed = [assertion.name for assertion in assertions if not assertion.passed]
        for assertion in assertions:
            if assertion.passed:
                logger.info(f"Assertion {assertion.name} passed {assertion.detail}")
            else:
                logger.warning(f"Assertion {assertion.name} FAILED {assertion.detail}")

        if failed and error is None:
            error = AssertionFailure(f"assertions failed: {', '.join(failed)}", failed=failed).to_payload(run_id)["error"]

        manifest = RunManifest(
            tool=settings.app_name,
            tool_version=settings.app_version,
            run_id=run_id,
            config=config.provenance(),
            seed=config.seed,
            threads=self.threads,
            started_at=format_timestamp(started_at),
            wall_time_seconds=time.monotonic() - started,
            files=[str(path) for path in files],
            assertions=assertions,
            passed=error is None,
            failed_assertions=failed,
            error=error,
        )
        writer.write_manifest(manifest)
        if failure is not None:
            raise failure
        return (0 if manifest.passed else 1), manifest

    # Counterexample with oscillating U-statistics

    def example1(self, params: Dict[str, Any], seed: int) -> ExperimentReport:
        ladder = (
            oscillate.load_ladder(params["ladder_file"])
            if params.get("ladder_file")
            else oscillate.default_ladder(int(params["levels"]))
        )
        lagset = oscillate.LagSet(ladder)
        levels = ladder.levels
        rows = oscillate.oscillation_report(lagset)

        table = []
        for row in rows:
            u_value, u_exact = _fraction_cells(row.u_norm)
            p_value, p_exact = _fraction_cells(row.paper_norm)
            bound, _ = _fraction_cells(row.bound)
            table.append([row.level, row.n, row.which, row.S, u_value, p_value, u_exact, p_exact, bound])

        assertions = [Assertion(name="ladder_valid", passed=True, detail=f"L={levels}")]

        n_brute = min(BRUTE_FORCE_LIMIT, lagset.horizon + 1)
        brute = oscillate.brute_force_sums(n_brute, lagset)
        closed = [oscillate.exact_sum(n, lagset).S for n in range(2, n_brute + 1)]
        assertions.append(
            Assertion(
                name="closed_form_matches_pairs",
                passed=brute == closed,
                detail=f"n <= {n_brute}",
            )
        )

        ab_rows = [["level", "A", "B", "A_bound", "A_from_first", "A_from_first_bound", "B_triangular", "A_exact", "B_exact"]]
        decompositions = [oscillate.ab_decomposition(level, lagset) for level in range(3, levels + 1)]
        for ab in decompositions:
            ab_rows.append(
                [
                    ab.level,
                    ab.A,
                    ab.B,
                    ab.A_bound,
                    ab.A_from_first,
                    ab.A_from_first_bound,
                    ab.B_triangular,
                    _fraction_cells(ab.A)[1],
                    _fraction_cells(ab.B)[1],
                ]
            )
        if decompositions:
            totals = {row.n: row.paper_norm for row in rows if row.which == "N"}
            assertions.append(
                Assertion(
                    name="ab_identity",
                    passed=all(ab.total == totals[ladder.n_at(ab.level)] for ab in decompositions),
                    detail="A + B equals the normalized sum at every N_l",
                )
            )
            assertions.append(
                Assertion(
                    name="a_bound",
                    passed=all(ab.A <= ab.A_bound and ab.A_from_first <= ab.A_from_first_bound for ab in decompositions),
                )
            )
            assertions.append(
                Assertion(name="b_triangular", passed=all(ab.B == ab.B_triangular for ab in decompositions))
            )
            a_values = [ab.A for ab in decompositions]
            b_values = [ab.B for ab in decompositions]
            assertions.append(
                Assertion(
                    name="ab_trend",
                    passed=all(b < a for a, b in zip(a_values, a_values[1:]))
                    and all(b > a for a, b in zip(b_values, b_values[1:])),
                    detail="A decreasing, B increasing",
                )
            )

        primes = [row for row in rows if row.which == "N'"]
        assertions.append(
            Assertion(name="nprime_bound", passed=all(row.paper_norm <= row.bound for row in primes), detail="S/(n(n-1)) <= (N_l - 1)/N'_l")
        )

        summary: Dict[str, Any] = {"levels": levels, "horizon": str(lagset.horizon)}
        if levels >= ASYMPTOTIC_LEVELS:
            top = next(row for row in rows if row.which == "N" and row.level == levels)
            assertions.append(
                Assertion(
                    name="n_subsequence_limit",
                    passed=abs(top.paper_norm - Fraction(1, 2)) <= Fraction(1, 100),
                    detail=f"S/(n(n-1)) at N_{levels} = {format_fraction(top.paper_norm)}",
                )
            )
            window = [row for row in rows if row.level >= SEPARATION_LEVEL]
            upper = max(row.paper_norm for row in window if row.which == "N")
            lower = min(row.paper_norm for row in window if row.which == "N'")
            assertions.append(
                Assertion(
                    name="subsequence_separation",
                    passed=upper - lower >= Fraction(2, 5),
                    detail=f"levels {SEPARATION_LEVEL}..{levels}: {format_fraction(upper - lower)}",
                )
            )
            summary["separation"] = format_fraction(upper - lower)

        sim_n = int(params["n"])
        guard = int(params["guard_digits"])
        sim_seeds = int(params["sim_seeds"])
        checks = ReplicateWorker(threads=self.threads, name="orbit checks").map(
            lambda r: oscillate.simulate_check(sim_n, split_seed(seed, r), lagset, guard), sim_seeds
        )
        sim_rows = [["seed", "n", "guard_digits", "pairs", "mismatches", "simulated_sum", "exact_sum"]]
        for check in checks:
            sim_rows.append(
                [check.seed, check.n, check.guard_digits, check.pairs, check.mismatch_count, check.simulated_sum, check.exact_sum]
            )
        assertions.append(
            Assertion(
                name="orbit_simulation",
                passed=all(check.passed for check in checks),
                detail=f"{sim_seeds} seeds, n={sim_n}, guard={guard}, "
                f"{sum(check.mismatch_count for check in checks)} mismatches",
            )
        )
        summary["mismatches"] = [mismatch.model_dump() for check in checks for mismatch in check.mismatches]

        path = generate(ProcessSpec(kind="doubling-map"), sim_n, split_seed(seed, 2**32))
        grid = list(range(2, sim_n + 1))
        series = u_series(path, oscillate.oscillating_kernel(lagset, sim_n, guard), grid)
        expected = [float(oscillate.exact_sum(m, lagset).u_norm) for m in grid]
        assertions.append(
            Assertion(
                name="engine_matches_closed_form",
                passed=series.u == expected,
                detail=f"U_n from the kernel's lag form, n <= {sim_n}",
            )
        )

        return ExperimentReport(
            subcommand="example1",
            columns=["level", "n", "which", "S", "u_norm", "paper_norm", "u_norm_exact", "paper_norm_exact", "bound"],
            rows=table,
            summary=summary,
            assertions=assertions,
            extra_tables={"ab": ab_rows, "simulation": sim_rows},
        )

    # Centered counterexample

    def example2(self, params: Dict[str, Any], seed: int) -> ExperimentReport:
        n = int(params["n"])
        reps = int(params["reps"])
        gap_n = int(params["gap_n"])
        gap_reps = int(params["gap_reps"])
        mcleish_max = int(params["mcleish_max"])

        values = centered.sample_y(n, reps, seed, self.threads)
        distribution = centered.sample_distribution(n, reps, seed, ks_sample=int(params["ks_sample"]), values=values)
        gap_seed = split_seed(seed, 2**32)
        samples = centered.gap_samples(gap_n, gap_reps, gap_seed, self.threads)
        gap = centered.gap_statistic(gap_n, gap_reps, gap_seed, samples=samples)

        thresholds = distribution.thresholds
        assertions = [
            Assertion(
                name="mean",
                passed=abs(distribution.mean) <= thresholds["mean"],
                detail=f"|{distribution.mean:.6f}| <= {thresholds['mean']:.6f}",
            ),
            Assertion(
                name="variance",
                passed=abs(distribution.variance - 0.25) <= thresholds["variance"],
                detail=f"{distribution.variance:.6f} vs 0.25 +- {thresholds['variance']:.6f}",
            ),
            Assertion(
                name="ks_normal",
                passed=distribution.ks <= thresholds["ks"],
                detail=f"{distribution.ks:.6f} <= {thresholds['ks']:.6f}",
            ),
            Assertion(
                name="gap_variance",
                passed=abs(gap.empirical_variance - gap.exact_variance) <= gap.thresholds["variance"],
                detail=f"{gap.empirical_variance:.6f} vs exact {gap.exact_variance:.6f}",
            ),
            Assertion(
                name="gap_closed_form",
                passed=abs(gap.exact_variance - float(gap.closed_form_variance)) <= 1e-12,
                detail=f"closed form {gap.closed_form_variance}",
            ),
        ]

        floor_grid = dyadic_grid(*GAP_FLOOR_RANGE)
        floors = [math.fsum(centered.gap_coefficients(m) ** 2) / 4.0 for m in floor_grid]
        assertions.append(
            Assertion(
                name="gap_variance_floor",
                passed=all(value >= 0.05 for value in floors),
                detail=f"min over n in {floor_grid[0]}..{floor_grid[-1]} is {min(floors):.6f}",
            )
        )

        diagnostics = [centered.mcleish_diagnostics(m) for m in range(2, mcleish_max + 1)]
        maxima = [d.max_abs for d in diagnostics]
        assertions.append(
            Assertion(name="mcleish_sum_squares", passed=all(d.sum_squares == Fraction(1, 4) for d in diagnostics))
        )
        far = centered.mcleish_diagnostics(10_000)
        assertions.append(
            Assertion(
                name="mcleish_max_decay",
                passed=all(b < a for a, b in zip(maxima[1:], maxima[2:])) and far.max_abs < 0.011,
                detail=f"max |d| at n=10000 is {far.max_abs:.6f}",
            )
        )

        table = centered.unbounded_mean_table(MEAN_TABLE_J)
        assertions.append(
            Assertion(
                name="unbounded_means",
                passed=table.monotone
                and table.first_exceeding is not None
                and table.first_exceeding <= MEAN_TABLE_FIRST_EXCEEDING,
                detail=f"first j with a_(j-1)/2 > {table.bound}: {table.first_exceeding}",
            )
        )

        oracle_gaps = []
        for r in range(ORACLE_REPLICATES):
            point = centered.replicate_point(seed, r)
            oracle_gaps.append(abs(centered.pair_sum_oracle(point, ORACLE_N) - centered.y_n(point, ORACLE_N)))
        assertions.append(
            Assertion(
                name="pair_sum_oracle",
                passed=max(oracle_gaps) <= 1e-12,
                detail=f"Y_{ORACLE_N} from the kernel definition on {ORACLE_REPLICATES} streams, max gap {max(oracle_gaps):.3e}",
            )
        )

        mcleish_rows = [["n", "max_abs", "max_abs_radicand", "max_abs_denominator", "sum_squares"]]
        mcleish_rows += [[d.n, d.max_abs, d.max_abs_radicand, d.max_abs_denominator, str(d.sum_squares)] for d in diagnostics]
        histogram_rows = [["lower", "upper", "count"]]
        edges = distribution.histogram_edges
        histogram_rows += [[edges[i], edges[i + 1], count] for i, count in enumerate(distribution.histogram_counts)]

        return ExperimentReport(
            subcommand="example2",
            columns=["replicate", "value"],
            rows=[[r, float(value)] for r, value in enumerate(values)],
            summary={
                "distribution": distribution.model_dump(exclude={"histogram_edges", "histogram_counts"}),
                "gap": gap.model_dump(mode="json"),
            },
            assertions=assertions,
            extra_tables={
                "gap": [["replicate", "value"]] + [[r, float(value)] for r, value in enumerate(samples)],
                "mcleish": mcleish_rows,
                "histogram": histogram_rows,
                "means": [["j", "mean_abs"]] + [[row.j, row.mean_abs] for row in table.rows],
            },
        )

    # Positive theorems

    @staticmethod
    def _experiment(params: Dict[str, Any], seed: int) -> ConvergenceExperiment:
        return ConvergenceExperiment(
            spec=ProcessSpec.model_validate(params["process"]),
            kernel=params["kernel"],
            kernel_params=params.get("kernel_params") or {},
            target=params.get("target"),
            n_grid=list(params["n_grid"]),
            reps=int(params["reps"]),
            seed=seed,
            tolerance=float(params["tolerance"]),
        )

    def theorem_as(self, params: Dict[str, Any], seed: int) -> ExperimentReport:
        exp = self._experiment(params, seed)
        trace = limits.as_convergence_trace(exp, threads=self.threads)

        rows: List[List[Any]] = [[p.n, p.replicate, p.u, p.error] for p in trace.points]
        for n in exp.n_grid:
            at_n = [p for p in trace.points if p.n == n]
            rows.append([n, "mean", float(np.mean([p.u for p in at_n])), float(np.mean([p.error for p in at_n]))])

        kernel = limits.experiment_kernel(exp)
        path = generate(exp.spec, exp.n_grid[-1], split_seed(seed, 0))
        gaps = limits.diagonal_gap_check(u_series(path, kernel, exp.n_grid), kernel.bound)

        assertions = [
            Assertion(
                name="fraction_within_tolerance",
                passed=trace.passed,
                detail=f"{trace.fraction_within:.3f} >= {exp.required_fraction} at n={exp.n_grid[-1]}",
            ),
            Assertion(name="diagonal_gap", passed=all(g.within for g in gaps), detail="|V_n - U_n| <= 2B/n"),
        ]
        return ExperimentReport(
            subcommand="theorem-as",
            columns=["n", "replicate", "u", "error"],
            rows=rows,
            summary={
                "process": exp.spec.label(),
                "kernel": exp.kernel,
                "target": trace.target,
                "fraction_within": trace.fraction_within,
            },
            assertions=assertions,
            extra_tables={"diagonal": [["n", "gap", "limit"]] + [[g.n, g.gap, g.limit] for g in gaps]},
        )

    def theorem_l1(self, params: Dict[str, Any], seed: int) -> ExperimentReport:
        exp = self._experiment(params, seed)
        curve = limits.l1_error_curve(exp, threads=self.threads)
        final = curve.points[-1]
        assertions = [
            Assertion(
                name="final_is_minimum",
                passed=curve.final_is_minimum,
                detail=f"E|U_n - target| at n={final.n}: {final.mean_error:.6f} +- {final.stderr:.6f}",
            ),
            Assertion(
                name="final_within_tolerance",
                passed=curve.final_within_tolerance,
                detail=f"{final.mean_error:.6f} <= {exp.tolerance}",
            ),
        ]
        return ExperimentReport(
            subcommand="theorem-l1",
            columns=["n", "replicate", "error", "stderr"],
            rows=[[p.n, "mean", p.mean_error, p.stderr] for p in curve.points],
            summary={"process": exp.spec.label(), "kernel": exp.kernel, "target": curve.target, "reps": exp.reps},
            assertions=assertions,
        )

    def weak_conv(self, params: Dict[str, Any], seed: int) -> ExperimentReport:
        spec = ProcessSpec.model_validate(params["process"])
        n_grid = list(params["n_grid"])
        tolerance = float(params["tolerance"])
        panel = limits.weak_convergence_panel(spec, n_grid, seed)

        assertions = []
        n_max = n_grid[-1]
        if n_max >= 1000:
            assertions.append(
                Assertion(
                    name="max_deviation",
                    passed=panel.max_by_n[n_max] <= tolerance,
                    detail=f"max |integral f dF_n| at n={n_max} is {panel.max_by_n[n_max]:.6f}",
                )
            )
        return ExperimentReport(
            subcommand="weak-conv",
            columns=["n", "function", "value"],
            rows=[[row.n, row.function, row.value] for row in panel.rows],
            summary={"process": spec.label(), "max_by_n": {str(n): value for n, value in panel.max_by_n.items()}},
            assertions=assertions,
            extra_tables={"max": [["n", "max"]] + [[n, value] for n, value in panel.max_by_n.items()]},
        )

    # Engine self-test

    def engine_check(self, params: Dict[str, Any], seed: int) -> ExperimentReport:
        n = int(params["n"])
        spec = ProcessSpec.model_validate(params["process"])
        kernel = build_kernel(params["kernel"], spec.marginal)
        path = generate(spec, n, seed)
        grid = list(range(2, n + 1))
        series = u_series(path, kernel, grid)

        naive = [u_naive(path, kernel, m) for m in grid]
        mismatched = [m for m, a, b in zip(grid, naive, series.u) if a != b]
        gaps = uv_identity_gap(series)
        tolerances = uv_identity_tolerance(series)
        assertions = [
            Assertion(
                name="series_matches_naive",
                passed=not mismatched,
                detail=f"{len(mismatched)} of {len(grid)} grid points differ",
            ),
            Assertion(
                name="uv_identity",
                passed=all(abs(g) <= t for g, t in zip(gaps, tolerances)),
                detail=f"max |gap| {max(abs(g) for g in gaps):.3e}",
            ),
        ]

        m = min(n, EXACT_CHECK_N)
        exact_u = u_naive(path, kernel, m, exact=True)
        exact_v = v_plugin(path, kernel, m, exact=True)
        exact_d = diagonal_sum(path, kernel, m, exact=True)
        assertions.append(
            Assertion(
                name="uv_identity_exact",
                passed=m * (m - 1) * exact_u == m * m * exact_v - exact_d,
                detail=f"n={m}",
            )
        )

        rng = np.random.Generator(np.random.Philox(split_seed(seed, 1)))
        x = sample_marginal(spec, SYMMETRY_PAIRS, rng)
        y = sample_marginal(spec, SYMMETRY_PAIRS, rng)
        asymmetric = []
        unbounded = []
        for name in BUILTIN_KERNELS:
            candidate = build_kernel(name, spec.marginal)
            forward = np.broadcast_to(np.asarray(candidate.evaluate(x, y), dtype=np.float64), x.shape)
            backward = np.broadcast_to(np.asarray(candidate.evaluate(y, x), dtype=np.float64), x.shape)
            if not np.array_equal(forward, backward):
                asymmetric.append(name)
            if candidate.bound is not None and np.abs(forward).max() > candidate.bound:
                unbounded.append(name)
        assertions.append(
            Assertion(name="kernel_symmetry", passed=not asymmetric, detail=f"asymmetric: {asymmetric}")
        )
        assertions.append(Assertion(name="kernel_bounds", passed=not unbounded, detail=f"bound exceeded: {unbounded}"))

        constant = u_series(path, build_kernel("constant", spec.marginal, {"c": 1.0}), grid)
        assertions.append(
            Assertion(
                name="constant_fixed_point",
                passed=all(u == 1.0 for u in constant.u) and all(v == 1.0 for v in constant.v),
            )
        )

        rows = [row + [repr(naive[index])] for index, row in enumerate(series.csv_rows())]
        return ExperimentReport(
            subcommand="engine-check",
            columns=["n", "u", "v", "centered", "u_naive"],
            rows=rows,
            summary={"process": spec.label(), "kernel": kernel.name, "n": n},
            assertions=assertions,
        )

    # Ladder files

    def validate_ladder(self, path: Union[str, Path]) -> LadderValidationReport:
        """Check a ladder file against every ladder invariant."""
        ladder = oscillate.load_ladder(path)
        violations = oscillate.ladder_violations(ladder)
        for violation in violations:
            logger.warning(f"Ladder {path}: {violation}")
        return LadderValidationReport(
            source=str(path),
            levels=ladder.levels,
            valid=not violations,
            violations=violations,
        )


# Global service instance
experiment_service = ExperimentService()
