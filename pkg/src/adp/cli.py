"""Command-line interface for the sampled-LP experiments."""

from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

import click
import numpy as np
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .config import ExperimentConfig, get_config
from .errors import AdpError
from .experiments import ExperimentRunner
from .finite_oracle import run_property_suite
from .lp_builder import Pairing, read_lp_text
from .solver import SolverSettings, solve_lp

console = Console()

F = TypeVar("F", bound=Callable[..., Any])


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.option("--log-file", type=str, help="Log file path")
def cli(verbose: bool, log_file: str | None) -> None:
    """Learn q-functions and policies with sampled linear programs."""
    config = get_config()
    log_level = "DEBUG" if verbose else config.log_level

    logger.remove()
    logger.add(
        lambda msg: console.print(msg, end=""),
        level=log_level,
        format=(
            "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | {message}"
        ),
        colorize=True,
    )
    if log_file or config.log_file:
        logger.add(
            log_file or config.log_file,
            level=log_level,
            format=(
                "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"
            ),
            rotation="10 MB",
            retention="7 days",
        )


def _parse_constraints(
    ctx: click.Context, param: click.Parameter, value: str | None
) -> list[int] | None:
    if value is None:
        return None
    try:
        counts = [int(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter("expected N or a comma-separated list N1,N2,...") from e
    if not counts or any(n < 1 for n in counts):
        raise click.BadParameter("constraint counts must be positive integers")
    return counts


def experiment_options(func: F) -> F:
    """Options shared by the experiment commands."""
    options = [
        click.option(
            "--config",
            "config_file",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            help="JSON file mirroring the configuration fields",
        ),
        click.option("--seed", type=click.IntRange(min=0), help="Master seed"),
        click.option(
            "--constraints",
            callback=_parse_constraints,
            help="Sampled constraint count N or a list N1,N2,...",
        ),
        click.option("--mc", type=click.IntRange(min=1), help="Monte Carlo draws per sample"),
        click.option("--reps", type=click.IntRange(min=1), help="Repetitions"),
        click.option(
            "--pairing",
            type=click.Choice([p.value for p in Pairing]),
            help="Samples given to the classical LP",
        ),
        click.option(
            "--out", type=click.Path(file_okay=False, path_type=Path), help="Output directory"
        ),
        click.option("--workers", type=click.IntRange(min=1), help="Concurrent runs"),
        click.option(
            "--no-timing", is_flag=True, help="Leave solve times empty for byte-stable CSVs"
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _default_output(config_file: Path | None) -> Path | None:
    if config_file is not None:
        return None
    return Path(get_config().output_directory)


def _run_experiment(experiment_id: int, **options: Any) -> None:
    try:
        config_file: Path | None = options["config_file"]
        if config_file is not None:
            cfg = ExperimentConfig.from_file(config_file, experiment_id)
        else:
            cfg = ExperimentConfig.defaults(experiment_id)
        cfg = cfg.with_overrides(
            seed=options["seed"],
            n_constraints=options["constraints"],
            mc_draws=options["mc"],
            repetitions=options["reps"],
            pairing=options["pairing"],
            output_dir=options["out"] or _default_output(config_file),
            record_times=False if options["no_timing"] else None,
        )
        console.print(f"[bold blue]Experiment {cfg.experiment_id}[/bold blue] -> {cfg.output_dir}")
        runner = ExperimentRunner(cfg, max_workers=options["workers"], console=console)
        result = runner.run()
    except (AdpError, ValidationError, OSError) as e:
        logger.error(f"Experiment {experiment_id} failed: {e}")
        raise click.ClickException(str(e)) from e
    console.print(runner.summary_table(result))
    for path in result.files:
        console.print(f"  wrote {path}")


@cli.command()
@experiment_options
def exp1(**options: Any) -> None:
    """Constraint-count sweep on the fixed two-state linear system."""
    _run_experiment(1, **options)


@cli.command()
@experiment_options
def exp2(**options: Any) -> None:
    """State-dimension sweep on random stabilizable systems."""
    _run_experiment(2, **options)


@cli.command()
@experiment_options
def exp3(**options: Any) -> None:
    """Cart-pole policies from both programs against the LQR baseline."""
    _run_experiment(3, **options)


@cli.command("verify-operators")
@click.option("--mdps", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--pairs", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory, defaults to the configured output directory",
)
def verify_operators(mdps: int, pairs: int, seed: int, out: Path | None) -> None:
    """Check the operator properties on random finite MDPs."""
    out = out or Path(get_config().output_directory)
    try:
        report = run_property_suite(mdps, pairs, seed, settings=SolverSettings.from_config())
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "operators.csv")
        (out / "operators.txt").write_text(report.render() + "\n", encoding="utf-8")
    except (AdpError, OSError) as e:
        logger.error(f"Operator verification failed: {e}")
        raise click.ClickException(str(e)) from e
    console.print(report.to_table())
    console.print(f"Greedy agreement (reported): {report.greedy_agreement:.4f}")
    console.print(f"Greedy cost ratio (reported): {report.cost_ratio:.6f}")
    if not report.passed:
        raise click.ClickException("operator properties violated, see operators.txt")
    console.print("[bold green]All operator properties hold[/bold green]")


@cli.command()
@click.option(
    "--lp",
    "lp_file",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Problem exported in the LP text format",
)
def solve(lp_file: Path) -> None:
    """Solve an exported linear program."""
    try:
        problem = read_lp_text(lp_file)
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    solution = solve_lp(problem, SolverSettings.from_config())
    table = Table(title=f"{problem.kind}: {problem.n_rows} rows, {problem.n_vars} variables")
    table.add_column("Field")
    table.add_column("Value")
    table.add_row("status", str(solution.status))
    table.add_row("objective", repr(solution.objective))
    table.add_row("iterations", str(solution.iterations))
    table.add_row("solve time (s)", f"{solution.solve_time:.3f}")
    if solution.theta is not None:
        table.add_row("theta", np.array2string(solution.theta, precision=6))
    if solution.ray is not None:
        table.add_row("ray", np.array2string(solution.ray, precision=6))
    if solution.message:
        table.add_row("message", solution.message)
    console.print(table)


@cli.command()
def config_info() -> None:
    """Show current configuration."""
    config = get_config()

    console.print("[bold blue]Current Configuration:[/bold blue]")
    console.print()

    console.print("[bold]Logging:[/bold]")
    console.print(f"  Log Level: {config.log_level}")
    console.print(f"  Log File: {config.log_file or '(disabled)'}")
    console.print()

    console.print("[bold]Output:[/bold]")
    console.print(f"  Output Directory: {config.output_directory}")
    console.print(f"  Overwrite Existing: {config.overwrite_existing}")
    console.print(f"  Max Workers: {config.max_workers}")
    console.print()

    console.print("[bold]Solver:[/bold]")
    console.print(f"  Feasibility Tolerance: {config.solver_feasibility_tol:g}")
    console.print(f"  Gap Tolerance: {config.solver_gap_tol:g}")
    console.print(f"  Max Iterations: {config.solver_max_iter}")
    console.print(f"  Divergence Threshold: {config.solver_divergence:g}")


if __name__ == "__main__":
    cli()
