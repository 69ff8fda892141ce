import logging
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Optional

import typer
from pydantic import ValidationError

from app.colors import ERROR, FAIL, HEADING, PASS, PATH, SEPARATOR, VALUE
from app.geometry.errors import GreedyRoutingError
from app.services.experiments import ExperimentKind, ExperimentResult, build_config, run_experiment
from app.services.measure import MeasureMode
from app.services.multihop import PathModel

app = typer.Typer(
    help="Greedy geographic routing towards a sink: analytic laws, QMC integrals and simulation.",
    no_args_is_help=True,
    add_completion=False,
)


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


ConfigOpt = Annotated[Optional[Path], typer.Option("--config", "-c", help="TOML experiment config.")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Master seed (falls back to GHL_SEED).")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory.")]
FormatOpt = Annotated[Optional[OutputFormat], typer.Option("--format", help="Table format.")]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", min=1, help="Declared worker count.")]
ModeOpt = Annotated[Optional[MeasureMode], typer.Option("--mode", help="Mean-measure evaluation mode.")]
ModelOpt = Annotated[Optional[PathModel], typer.Option("--model", help="Path model for multi-hop integrals.")]
PointsOpt = Annotated[Optional[int], typer.Option("--points", min=1, help="QMC points (lattice size n).")]
ShiftsOpt = Annotated[Optional[int], typer.Option("--shifts", min=1, help="Random lattice shifts.")]
ProgressOpt = Annotated[bool, typer.Option("--progress", help="Show progress bars.")]
LamOpt = Annotated[Optional[float], typer.Option("--lam", help="Awake node density lambda.")]
EllOpt = Annotated[Optional[float], typer.Option("--ell", help="Source-sink distance.")]
POpt = Annotated[Optional[float], typer.Option("--p", help="Awake probability.")]
RunsOpt = Annotated[Optional[int], typer.Option("--runs", min=1, help="Simulation runs.")]
EmpiricalOpt = Annotated[bool, typer.Option("--empirical", help="Add simulated columns.")]


def _overrides(opts: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {
        "seed": opts["seed"],
        "out": str(opts["out"]) if opts["out"] else None,
        "format": opts["fmt"].value if opts["fmt"] else None,
        "threads": opts["threads"],
        "mode": opts["mode"].value if opts["mode"] else None,
        "model": opts["model"].value if opts["model"] else None,
        "n_runs": opts["runs"],
        "rule": {"points": opts["points"], "shifts": opts["shifts"]},
        "params": {"lambda": opts["lam"], "ell": opts["ell"], "p": opts["p"]},
    }
    if opts["progress"]:
        out["progress"] = True
    if opts["empirical"]:
        out["empirical"] = True
    return out


def _report(result: ExperimentResult) -> None:
    typer.echo(f"{HEADING}{result.kind.value}")
    typer.echo(f"{SEPARATOR}{'-' * 40}")
    if result.kind is ExperimentKind.VALIDATE:
        for row in result.tables["validate"].to_dict(orient="records"):
            tag = f"{PASS}PASS" if row["passed"] else f"{FAIL}FAIL"
            typer.echo(f"{tag} {row['check']}: {row['detail']}")
    for key, value in result.summary.items():
        typer.echo(f"{key}: {VALUE}{value}")
    for path in result.files:
        typer.echo(f"wrote {PATH}{path}")


def _execute(kind: ExperimentKind, **opts: Any) -> None:
    try:
        config = build_config(kind, opts.pop("config"), _overrides(opts))
        result = run_experiment(config)
    except (GreedyRoutingError, ValidationError) as e:
        logging.error(f"{kind.value} failed: {e}")
        typer.echo(f"{ERROR}error: {e}", err=True)
        raise typer.Exit(code=2)
    except Exception as e:
        logging.error(f"Unexpected failure in {kind.value}: {e}", exc_info=True)
        typer.echo(f"{ERROR}unexpected error: {e}", err=True)
        raise typer.Exit(code=1)
    _report(result)
    if result.passed is False:
        raise typer.Exit(code=1)


@app.command("single-hop")
def single_hop(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """First-hop sink-distance CDF F_ell(u)."""
    _execute(ExperimentKind.SINGLE_HOP, **locals())


@app.command("measure-compare")
def measure_compare(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Mean measure under every evaluation mode."""
    _execute(ExperimentKind.MEASURE_COMPARE, **locals())


@app.command("moments")
def moments(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Numeric against asymptotic hop moments over a density sweep."""
    _execute(ExperimentKind.MOMENTS, **locals())


@app.command("kl")
def kl(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Kullback-Leibler divergence of hop laws across sink distances."""
    _execute(ExperimentKind.KL, **locals())


@app.command("zn")
def zn(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Distribution of the n-hop advancement Z_n."""
    _execute(ExperimentKind.ZN, **locals())


@app.command("hops")
def hops(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Hop-count distribution P(N <= n) under both path models."""
    _execute(ExperimentKind.HOPS, **locals())


@app.command("simulate")
def simulate(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Monte Carlo routing ensemble."""
    _execute(ExperimentKind.SIMULATE, **locals())


@app.command("validate")
def validate(
    config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, fmt: FormatOpt = None,
    threads: ThreadsOpt = None, mode: ModeOpt = None, model: ModelOpt = None, points: PointsOpt = None,
    shifts: ShiftsOpt = None, progress: ProgressOpt = False, lam: LamOpt = None, ell: EllOpt = None,
    p: POpt = None, runs: RunsOpt = None, empirical: EmpiricalOpt = False,
):
    """Oracle suite with a PASS/FAIL line per check."""
    _execute(ExperimentKind.VALIDATE, **locals())


def run():
    app()


if __name__ == "__main__":
    run()
