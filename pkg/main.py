import json
import logging
from typing import Any, Dict, Optional, Tuple

import click
from dotenv import load_dotenv
from pydantic import ValidationError

# Load environment variables from .env file
load_dotenv()

from src.config import Settings, settings
from src.errors import LabError
from src.models import RunConfig
from src.oscillate import default_ladder, dump_ladder
from src.services import DEFAULT_PARAMETERS, ExperimentService, experiment_service
from src.utils import parse_grid


@click.group()
@click.option("--log-level", default=None, help="Logging level (default from UL_LOG_LEVEL)")
def cli(log_level):
    """U-statistics ergodic theorem laboratory CLI."""
    logging.basicConfig(
        level=(log_level or settings.log_level).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def common_options(fn):
    """Options shared by every experiment subcommand."""
    fn = click.option("--threads", default=None, type=int, help="Worker thread cap (default from UL_THREADS)")(fn)
    fn = click.option("--out", default=None, help="Report path (default <report_dir>/<subcommand>.<format>)")(fn)
    fn = click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]), show_default=True)(fn)
    fn = click.option("--seed", default=None, type=int, help="Run seed (default from UL_SEED, else 0)")(fn)
    return fn


def process_options(fn):
    fn = click.option("--alpha", default=None, help="Rotation angle in (0, 1)")(fn)
    fn = click.option("--rho", default=None, type=float, help="AR(1) coefficient")(fn)
    fn = click.option(
        "--process",
        "kind",
        default=None,
        type=click.Choice(["doubling-map", "rotation", "iid-uniform", "gaussian-ar1"]),
        help="Process kind",
    )(fn)
    return fn


def _process(kind: Optional[str], rho: Optional[float], alpha: Optional[str]) -> Optional[Dict[str, Any]]:
    if kind is None and rho is None and alpha is None:
        return None
    spec: Dict[str, Any] = {"kind": kind} if kind else {}
    if rho is not None:
        spec["rho"] = rho
    if alpha is not None:
        spec["alpha"] = alpha
    return spec


def _kernel_params(pairs: Tuple[str, ...]) -> Optional[Dict[str, float]]:
    if not pairs:
        return None
    parsed = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise click.BadParameter(f"expected key=value, got '{pair}'", param_hint="--kernel-param")
        try:
            parsed[key.strip()] = float(value)
        except ValueError as exc:
            raise click.BadParameter(f"'{value}' is not a number", param_hint="--kernel-param") from exc
    return parsed


def _grid(text: Optional[str], minimum: int = 2):
    if text is None:
        return None
    try:
        return parse_grid(text, minimum)
    except LabError as exc:
        raise click.BadParameter(exc.message, param_hint="--n-grid") from exc


def execute(subcommand: str, parameters: Dict[str, Any], seed, fmt, out, threads) -> None:
    """Build the run config, run it and exit with its status."""
    parameters = {key: value for key, value in parameters.items() if value is not None}
    if "process" in parameters:
        # A partial process (for example --rho only) completes the subcommand default
        process = dict(DEFAULT_PARAMETERS[subcommand].get("process", {}))
        process.update(parameters["process"])
        parameters["process"] = process
    try:
        config = RunConfig(
            subcommand=subcommand,
            parameters=parameters,
            seed=seed if seed is not None else Settings().seed,
            format=fmt,
            out=out,
            threads=threads or settings.threads,
        )
    except ValidationError as exc:
        raise click.UsageError(str(exc)) from exc

    service = ExperimentService(threads=config.threads)
    try:
        status, manifest = service.run(config)
    except (LabError, ValidationError) as exc:
        raise click.UsageError(str(exc)) from exc

    for assertion in manifest.assertions:
        icon = "✅" if assertion.passed else "❌"
        message = f"{icon} {assertion.name}"
        if assertion.detail:
            message += f" - {assertion.detail}"
        click.echo(message)
    if manifest.error:
        click.echo(f"✗ {manifest.error['code']}: {manifest.error['message']}")
    for path in manifest.files:
        click.echo(f"  wrote {path}")
    click.echo("PASS" if manifest.passed else f"FAIL {', '.join(manifest.failed_assertions)}")
    raise SystemExit(status)


@cli.command()
@click.option("--levels", default=12, show_default=True, type=int, help="Ladder levels L")
@click.option("--ladder-file", default=None, type=click.Path(dir_okay=False), help="Ladder JSON instead of the default ladder")
@click.option("--n", "n", default=64, show_default=True, type=int, help="Path length of the orbit simulation")
@click.option("--sim-seeds", default=10, show_default=True, type=int, help="Seeds for the orbit simulation")
@click.option("--guard-digits", default=None, type=int, help="Digits compared per orbit coincidence")
@common_options
def example1(levels, ladder_file, n, sim_seeds, guard_digits, seed, fmt, out, threads):
    """Oscillating U-statistics of a bounded kernel along the doubling map."""
    parameters = {
        "levels": levels,
        "ladder_file": ladder_file,
        "n": n,
        "sim_seeds": sim_seeds,
        "guard_digits": guard_digits or settings.guard_digits,
    }
    execute("example1", parameters, seed, fmt, out, threads)


@cli.command()
@click.option("--n", "n", default=4096, show_default=True, type=int, help="Prefix length of Y_n")
@click.option("--reps", default=20000, show_default=True, type=int, help="Independent streams")
@click.option("--ks-sample", default=5000, show_default=True, type=int, help="Streams used for the KS distance")
@click.option("--gap-n", default=256, show_default=True, type=int, help="n of Y_2n - Y_n")
@click.option("--gap-reps", default=10000, show_default=True, type=int, help="Streams for Y_2n - Y_n")
@click.option("--mcleish-max", default=512, show_default=True, type=int, help="Largest n of the McLeish identities")
@common_options
def example2(n, reps, ks_sample, gap_n, gap_reps, mcleish_max, seed, fmt, out, threads):
    """Centered U-statistic converging in law but not in probability."""
    parameters = {
        "n": n,
        "reps": reps,
        "ks_sample": ks_sample,
        "gap_n": gap_n,
        "gap_reps": gap_reps,
        "mcleish_max": mcleish_max,
    }
    execute("example2", parameters, seed, fmt, out, threads)


def theorem_options(fn):
    fn = click.option("--tolerance", default=None, type=float, help="Error tolerance")(fn)
    fn = click.option("--target", default=None, type=float, help="Double integral of h (default analytic)")(fn)
    fn = click.option("--reps", default=None, type=int, help="Replicates")(fn)
    fn = click.option("--n-grid", default=None, help="Prefix lengths, 'a,b,c' or 'start:stop[:step]'")(fn)
    fn = click.option("--kernel-param", "kernel_param", multiple=True, help="Kernel parameter key=value")(fn)
    fn = click.option("--kernel", default=None, help="Built-in kernel name")(fn)
    return fn


def _theorem_parameters(kind, rho, alpha, kernel, kernel_param, n_grid, reps, target, tolerance) -> Dict[str, Any]:
    return {
        "process": _process(kind, rho, alpha),
        "kernel": kernel,
        "kernel_params": _kernel_params(kernel_param),
        "n_grid": _grid(n_grid),
        "reps": reps,
        "target": target,
        "tolerance": tolerance,
    }


@cli.command("theorem-as")
@process_options
@theorem_options
@common_options
def theorem_as(kind, rho, alpha, kernel, kernel_param, n_grid, reps, target, tolerance, seed, fmt, out, threads):
    """Almost sure convergence of U_n for a bounded kernel."""
    parameters = _theorem_parameters(kind, rho, alpha, kernel, kernel_param, n_grid, reps, target, tolerance)
    execute("theorem-as", parameters, seed, fmt, out, threads)


@cli.command("theorem-l1")
@process_options
@theorem_options
@common_options
def theorem_l1(kind, rho, alpha, kernel, kernel_param, n_grid, reps, target, tolerance, seed, fmt, out, threads):
    """L1 convergence of U_n under uniform integrability."""
    parameters = _theorem_parameters(kind, rho, alpha, kernel, kernel_param, n_grid, reps, target, tolerance)
    execute("theorem-l1", parameters, seed, fmt, out, threads)


@cli.command("weak-conv")
@process_options
@click.option("--n-grid", default=None, help="Prefix lengths, 'a,b,c' or 'start:stop[:step]'")
@click.option("--tolerance", default=None, type=float, help="Bound on the largest test-function deviation")
@common_options
def weak_conv(kind, rho, alpha, n_grid, tolerance, seed, fmt, out, threads):
    """Weak convergence of the empirical measure on trigonometric test functions."""
    parameters = {"process": _process(kind, rho, alpha), "n_grid": _grid(n_grid, minimum=1), "tolerance": tolerance}
    execute("weak-conv", parameters, seed, fmt, out, threads)


@cli.command("engine-check")
@click.option("--n", "n", default=200, show_default=True, type=int, help="Path length")
@click.option("--kernel", default="abs-diff", show_default=True, help="Built-in kernel name")
@process_options
@common_options
def engine_check(n, kernel, kind, rho, alpha, seed, fmt, out, threads):
    """Self-test: incremental series against the double loop and the U/V identity."""
    parameters = {"n": n, "kernel": kernel, "process": _process(kind, rho, alpha)}
    execute("engine-check", parameters, seed, fmt, out, threads)


@cli.command("validate-ladder")
@click.argument("path", type=click.Path(dir_okay=False))
def validate_ladder(path):
    """Check a ladder JSON file against the ladder invariants."""
    try:
        report = experiment_service.validate_ladder(path)
    except LabError as exc:
        raise click.UsageError(exc.message) from exc

    click.echo(json.dumps(report.model_dump(), indent=2, ensure_ascii=False))
    if report.valid:
        click.echo(f"✓ {path}: valid ladder with {report.levels} levels")
    else:
        for violation in report.violations:
            click.echo(f"✗ {violation}")
        raise SystemExit(1)


@cli.command("write-ladder")
@click.option("--levels", default=12, show_default=True, type=int, help="Ladder levels L")
@click.option("--output", "-o", default="ladder.json", show_default=True, help="Output file path")
def write_ladder(levels, output):
    """Write the default ladder as JSON."""
    try:
        dump_ladder(default_ladder(levels), output)
    except LabError as exc:
        raise click.UsageError(exc.message) from exc
    click.echo(f"✓ Ladder with {levels} levels written to {output}")


@cli.command()
def config():
    """Show current configuration."""
    click.echo("Current Configuration:")
    click.echo(f"  App Name: {settings.app_name}")
    click.echo(f"  Version: {settings.app_version}")
    click.echo(f"  Log Level: {settings.log_level}")
    click.echo(f"  Seed: {Settings().seed}")
    click.echo(f"  Digit Cap: {settings.digit_cap}")
    click.echo(f"  Doubling Precision: {settings.doubling_precision}")
    click.echo(f"  Guard Digits: {settings.guard_digits}")
    click.echo(f"  Compensated Threshold: {settings.compensated_threshold}")
    click.echo(f"  Rotation Alpha: {settings.rotation_alpha}")
    click.echo(f"  Decimal Places: {settings.decimal_places}")
    click.echo(f"  Report Dir: {settings.report_dir}")
    click.echo(f"  Threads: {settings.threads}")


if __name__ == "__main__":
    cli()
