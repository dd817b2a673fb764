import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import click
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError

from config.settings import settings
from src.agents.evaluation_agent import (
    MethodRunner,
    aggregate_runs,
    build_report,
    case_label,
    long_rows,
    ordering_report,
)
from src.agents.logging_learning_agent import LoggingLearningAgent
from src.agents.scenario_agent import CASE_TABLE, SequenceSpec, build_tasks
from src.models import (
    EpochProfile,
    Method,
    ReplayPolicy,
    RunConfig,
    RunReport,
    ScholarConfig,
)
from src.utils.errors import ReplayForgeError, SchemaError
from src.utils.storage import (
    export_tasks,
    load_scenario,
    read_checkpoint,
    read_reports,
    report_stem,
    write_comparison,
    write_long_csv,
    write_report,
)

logger = logging.getLogger(__name__)

logging_agent = LoggingLearningAgent()

EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _parse_methods(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    names = [name.strip() for name in value.split(",") if name.strip()]
    valid = [method.value for method in Method]
    unknown = [name for name in names if name not in valid]
    if unknown or not names:
        raise click.BadParameter(
            f"unknown method(s) {unknown}; valid methods: {', '.join(valid)}",
            param_hint="--methods",
        )
    return names


def _parse_ints(value: Optional[str], flag: str) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}", param_hint=flag)


def resolve_run_config(file_values: Dict, flags: Dict) -> RunConfig:
    """Scenario-file values overridden by explicit flags, then defaults"""
    values = dict(file_values)
    values.update({key: value for key, value in flags.items() if value is not None})
    values.setdefault("seeds", settings.default_seeds())
    values.setdefault("alpha", settings.ALPHA)
    values.setdefault("samples_per_task", settings.SAMPLES_PER_TASK)
    values.setdefault("tail_pct", settings.TAIL_PERCENTILE)
    values.setdefault("replay_policy", settings.REPLAY_POLICY)
    values.setdefault("out_dir", settings.OUTPUT_DIR)
    values.setdefault("jobs", settings.JOBS)
    values.setdefault("train_fraction", settings.TRAIN_FRACTION)
    values.setdefault("profile", settings.PROFILE)
    if values.get("solver_epochs") is None:
        values["solver_epochs"] = settings.SOLVER_EPOCHS
    if values.get("generator_epochs") is None:
        values["generator_epochs"] = settings.GENERATOR_EPOCHS
    if "methods" in values:
        _parse_methods(",".join(values["methods"]))
    return RunConfig(**values)


def scholar_config_for(config: RunConfig) -> ScholarConfig:
    base = ScholarConfig().with_profile(config.profile)
    solver, generator = base.solver, base.generator
    if config.solver_epochs is not None:
        solver = solver.model_copy(update={"epochs": config.solver_epochs})
    if config.generator_epochs is not None:
        generator = generator.model_copy(update={"epochs": config.generator_epochs})
    return ScholarConfig(
        alpha=config.alpha,
        replay_policy=config.replay_policy,
        solver=solver,
        generator=generator,
    )


def sequence_for(config: RunConfig, seed: int) -> SequenceSpec:
    if config.ue_row is not None and config.p_row is not None:
        return SequenceSpec(
            list(config.ue_row), list(config.p_row), config.samples_per_task, seed, config.case_id
        )
    return SequenceSpec.for_case(config.case_id, config.samples_per_task, seed)


def _execute(
    runner: MethodRunner, tail_pct: float, checkpoint_dir: Optional[str], progress: bool = False
) -> Dict:
    """Run one (method, seed) job; failures come back as an error summary"""
    try:
        run = runner.run(checkpoint_dir=checkpoint_dir, progress=progress)
        return {"report": build_report(run, tail_pct), "wall_time": run.wall_time}
    except Exception as e:
        if not isinstance(e, (ReplayForgeError, OSError)):
            logger.exception(f"Unexpected failure in {runner.method.value} seed={runner.sequence.seed}")
        return {
            "error": type(e).__name__,
            "message": str(e),
            "method": runner.method.value,
            "seed": runner.sequence.seed,
        }


def _finish_outputs(reports: List[RunReport], out_dir: str) -> None:
    rows = [row for report in reports for row in long_rows(report)]
    write_long_csv(rows, out_dir)
    write_comparison(aggregate_runs(reports), out_dir)


@click.group(name="replayforge")
@click.option("--log-level", default=None, help="Logging level (default from settings)")
def replayforge(log_level: Optional[str]):
    """Generative-replay continual learning benchmark for OWD regression"""
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, (log_level or settings.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


@replayforge.command("run")
@click.option("--case", "case_id", type=int, default=None, help="Case ID 1..8")
@click.option("--scenario", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--methods", default=None, help="Comma-separated methods")
@click.option("--alpha", type=float, default=None, help="Real-data mixing weight (default 0.5)")
@click.option("--seeds", default=None, help="Comma-separated seeds")
@click.option("--samples", "samples_per_task", type=int, default=None, help="Samples per task")
@click.option("--out", "out_dir", default=None, help="Output directory")
@click.option("--tail-pct", type=float, default=None, help="Tail percentile (default 90)")
@click.option("--jobs", type=int, default=None, help="Parallel (method, seed) runs")
@click.option("--resume", type=click.Path(exists=True, file_okay=False), default=None)
@click.option(
    "--replay-policy",
    type=click.Choice([policy.value for policy in ReplayPolicy]),
    default=None,
)
@click.option("--solver-epochs", type=int, default=None)
@click.option("--generator-epochs", type=int, default=None)
@click.option(
    "--profile",
    type=click.Choice([profile.value for profile in EpochProfile]),
    default=None,
    help="Epoch budget: full model defaults or the reduced benchmark budget",
)
@click.option("--checkpoint/--no-checkpoint", default=False, help="Checkpoint after every task")
@click.option("--progress/--no-progress", default=False, help="Progress bars on stderr")
def run_command(
    case_id,
    scenario,
    methods,
    alpha,
    seeds,
    samples_per_task,
    out_dir,
    tail_pct,
    jobs,
    resume,
    replay_policy,
    solver_epochs,
    generator_epochs,
    profile,
    checkpoint,
    progress,
):
    """Run every (method, seed) combination and write reports"""
    if resume is not None:
        _resume(resume, out_dir, tail_pct)
        return

    try:
        file_values = load_scenario(scenario) if scenario else {}
    except SchemaError as e:
        raise click.UsageError(str(e))
    if case_id is not None and case_id not in CASE_TABLE:
        raise click.BadParameter(
            f"unknown case {case_id}; valid: {sorted(CASE_TABLE)}", param_hint="--case"
        )
    flags = {
        "case_id": case_id,
        "methods": _parse_methods(methods),
        "alpha": alpha,
        "seeds": _parse_ints(seeds, "--seeds"),
        "samples_per_task": samples_per_task,
        "out_dir": out_dir,
        "tail_pct": tail_pct,
        "jobs": jobs,
        "replay_policy": replay_policy,
        "solver_epochs": solver_epochs,
        "generator_epochs": generator_epochs,
        "profile": profile,
    }
    try:
        config = resolve_run_config(file_values, flags)
        scholar_config = scholar_config_for(config)
    except ValidationError as e:
        raise click.UsageError(f"invalid run configuration: {e}")

    logging_agent.log_system_event(
        {
            "event_name": "run_start",
            "component": "cli",
            "message": f"case {case_label(config.case_id)}, {len(config.methods)} methods, "
            f"{len(config.seeds)} seeds",
        }
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    runners = []
    for seed in config.seeds:
        sequence = sequence_for(config, seed)
        tasks = build_tasks(sequence)
        for method in config.methods:
            runners.append(
                MethodRunner(
                    method, sequence, scholar_config, config.train_fraction, tasks,
                    events=logging_agent,
                )
            )

    def checkpoint_dir(runner: MethodRunner) -> Optional[str]:
        if not checkpoint:
            return None
        stem = f"{runner.method.value}_case{case_label(config.case_id)}_seed{runner.sequence.seed}"
        return str(out / "checkpoints" / stem)

    if config.jobs > 1:
        outcomes = Parallel(n_jobs=config.jobs)(
            delayed(_execute)(runner, config.tail_pct, checkpoint_dir(runner)) for runner in runners
        )
    else:
        outcomes = [
            _execute(runner, config.tail_pct, checkpoint_dir(runner), progress)
            for runner in runners
        ]

    reports = []
    failures = []
    for outcome in outcomes:
        if "error" in outcome:
            failures.append(outcome)
            continue
        write_report(outcome["report"], out, outcome["wall_time"])
        reports.append(outcome["report"])
    if reports:
        _finish_outputs(reports, out)
        for report in reports:
            click.echo(str(out / f"{report_stem(report)}.json"))

    if failures:
        for failure in failures:
            click.echo(json.dumps(failure), err=True)
        logging_agent.log_system_event(
            {
                "event_name": "run_failed",
                "component": "cli",
                "severity": "error",
                "message": f"{len(failures)} of {len(outcomes)} runs failed",
            }
        )
        sys.exit(EXIT_RUNTIME)
    logging_agent.log_system_event(
        {"event_name": "run_end", "component": "cli", "message": f"{len(reports)} reports"}
    )


def _resume(checkpoint_dir: str, out_dir: Optional[str], tail_pct: Optional[float]) -> None:
    try:
        manifest, blobs = read_checkpoint(checkpoint_dir)
        runner = MethodRunner.restore(manifest, blobs, events=logging_agent)
    except (SchemaError, KeyError, ValidationError) as e:
        raise click.UsageError(f"cannot resume from {checkpoint_dir}: {e}")
    outcome = _execute(runner, tail_pct or settings.TAIL_PERCENTILE, checkpoint_dir)
    if "error" in outcome:
        click.echo(json.dumps(outcome), err=True)
        sys.exit(EXIT_RUNTIME)
    out = Path(out_dir or settings.OUTPUT_DIR)
    path = write_report(outcome["report"], out, outcome["wall_time"])
    _finish_outputs(read_reports(out), out)
    click.echo(str(path))


@replayforge.command("export-data")
@click.option("--case", "case_id", type=int, required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--seed", type=int, default=None)
@click.option("--samples", "samples_per_task", type=int, default=None)
def export_data_command(case_id, out_dir, seed, samples_per_task):
    """Write every task of a case as CSV plus one schema file"""
    if case_id not in CASE_TABLE:
        raise click.BadParameter(
            f"unknown case {case_id}; valid: {sorted(CASE_TABLE)}", param_hint="--case"
        )
    if seed is None:
        seed = settings.default_seeds()[0]
    sequence = SequenceSpec.for_case(
        case_id, samples_per_task or settings.SAMPLES_PER_TASK, seed
    )
    try:
        paths = export_tasks(build_tasks(sequence), out_dir)
    except OSError as e:
        click.echo(json.dumps({"error": type(e).__name__, "message": str(e)}), err=True)
        sys.exit(EXIT_RUNTIME)
    for path in paths:
        click.echo(str(path))


def _exact(value) -> str:
    """Shortest repr that parses back to the same float"""
    return repr(float(value))


def report_table(
    reports: List[RunReport], metric: str = "all", k: Optional[int] = None, tail: bool = False
) -> pd.DataFrame:
    rows = []
    for report in reports:
        row = {
            "method": report.method.value,
            "case": case_label(report.case_id),
            "seed": report.seed,
        }
        if tail:
            row["tail_ave_mape"] = report.tail.ave_mape
            row["tail_forgetting"] = report.tail.forgetting
            row["coverage"] = report.tail.coverage
        elif metric == "f_k":
            if k is None:
                raise click.BadParameter("--metric f_k needs --k", param_hint="--k")
            row[f"F_{k}"] = report.summary.f_k.get(str(k))
        else:
            if metric in ("all", "ave_mape"):
                row["ave_mape"] = report.summary.ave_mape
            if metric in ("all", "forgetting"):
                row["forgetting"] = report.summary.forgetting
            if metric == "all":
                for default in report.default_k:
                    row[f"F_{default}"] = report.summary.f_k.get(str(default))
        rows.append(row)
    return pd.DataFrame(rows)


@replayforge.command("report")
@click.argument("run_dir", type=click.Path(file_okay=False))
@click.option(
    "--metric",
    type=click.Choice(["all", "ave_mape", "forgetting", "f_k"]),
    default="all",
)
@click.option("--k", type=int, default=None)
@click.option("--tail", is_flag=True, default=False, help="Tail AveMAPE/F with coverage")
@click.option("--ordering", is_flag=True, default=False, help="Method ordering check per case")
def report_command(run_dir, metric, k, tail, ordering):
    """Summarize the run reports of a directory on stdout"""
    try:
        reports = read_reports(run_dir)
    except SchemaError as e:
        click.echo(json.dumps({"error": type(e).__name__, "message": str(e)}), err=True)
        sys.exit(EXIT_RUNTIME)

    if ordering:
        table = aggregate_runs(reports)
        cases = sorted({report.case_id for report in reports}, key=lambda c: (c is None, c or 0))
        click.echo(json.dumps([ordering_report(table, case, reports) for case in cases], indent=2))
        return
    frame = report_table(reports, metric, k, tail)
    click.echo(frame.to_string(index=False, float_format=_exact, na_rep="-"))


if __name__ == "__main__":
    replayforge()
