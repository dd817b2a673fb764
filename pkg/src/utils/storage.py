"""
File formats of a run directory: scenario files, per-run JSON reports with
wall-time sidecars, plot-ready CSVs, dataset exports and checkpoints.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from src.core.tabular import write_csv, write_schema
from src.models import RunReport
from src.utils.errors import SchemaError

logger = logging.getLogger(__name__)

SCENARIO_KEYS = {
    "case_id": "int",
    "ue_row": "ints",
    "p_row": "ints",
    "samples_per_task": "int",
    "seed": "int",
    "seeds": "ints",
    "alpha": "float",
    "methods": "strs",
    "tail_pct": "float",
    "replay_policy": "str",
    "solver_epochs": "int",
    "generator_epochs": "int",
    "train_fraction": "float",
}

MANIFEST = "manifest.json"
SOLVER_BLOB = "solver.bin"
LONG_CSV = "metrics_long.csv"
COMPARISON_CSV = "comparison.csv"


def _convert(key: str, raw: str, number: int):
    kind = SCENARIO_KEYS[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return [int(part) for part in raw.split(",") if part.strip()]
        if kind == "strs":
            return [part.strip() for part in raw.split(",") if part.strip()]
        return raw
    except ValueError:
        raise SchemaError(f"Scenario line {number}: cannot parse {key} = {raw!r}")


def parse_scenario(text: str) -> Dict:
    """
    Parse a `key = value` scenario document (`#` starts a comment).
    Returns RunConfig field values; `seed` becomes a one-element `seeds`.
    """
    values: Dict = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"Scenario line {number} is not 'key = value': {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCENARIO_KEYS:
            raise SchemaError(
                f"Scenario line {number}: unknown key {key!r}; valid: {sorted(SCENARIO_KEYS)}"
            )
        values[key] = _convert(key, raw, number)

    if "seed" in values:
        seed = values.pop("seed")
        values.setdefault("seeds", [seed])
    if "case_id" not in values and not ("ue_row" in values and "p_row" in values):
        raise SchemaError("Scenario needs case_id or both ue_row and p_row")
    return values


def load_scenario(path) -> Dict:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def report_stem(report: RunReport) -> str:
    case = report.case_id if report.case_id is not None else "custom"
    return f"{report.method.value}_case{case}_seed{report.seed}"


def write_report(report: RunReport, out_dir, wall_time: Optional[float] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report_stem(report)}.json"
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    if wall_time is not None:
        sidecar = out / f"{report_stem(report)}.timing.json"
        sidecar.write_text(json.dumps({"wall_time_s": wall_time}, indent=2), encoding="utf-8")
    logger.info(f"Wrote report {path}")
    return path


def read_report(path) -> RunReport:
    try:
        return RunReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (ValidationError, ValueError) as e:
        raise SchemaError(f"Corrupt report {path}: {e}")


def read_reports(run_dir) -> List[RunReport]:
    directory = Path(run_dir)
    if not directory.is_dir():
        raise SchemaError(f"Run directory {directory} does not exist")
    paths = sorted(
        p
        for p in directory.glob("*_case*_seed*.json")
        if not p.name.endswith(".timing.json")
    )
    if not paths:
        raise SchemaError(f"No run reports in {directory}")
    return [read_report(p) for p in paths]


def write_long_csv(rows: List[Dict], out_dir) -> Path:
    path = Path(out_dir) / LONG_CSV
    frame = pd.DataFrame(rows, columns=["method", "case", "seed", "metric", "k", "value"])
    frame["k"] = frame["k"].astype("Int64")
    frame.to_csv(path, index=False)
    return path


def write_comparison(table: pd.DataFrame, out_dir) -> Path:
    path = Path(out_dir) / COMPARISON_CSV
    table.to_csv(path, index=False)
    return path


def export_tasks(tasks, out_dir) -> List[Path]:
    """One CSV per task plus a single schema sidecar"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task in tasks:
        path = out / f"task_{task.task_id + 1:02d}_{task.ue_type.value}_{task.pattern.value}.csv"
        write_csv(task.dataset, path)
        written.append(path)
    schema_path = out / "schema.txt"
    write_schema(tasks[0].dataset.schema, schema_path)
    written.append(schema_path)
    return written


def write_checkpoint(runner, checkpoint_dir) -> Path:
    """Write a runner's manifest and parameter blobs; the manifest goes last"""
    directory = Path(checkpoint_dir)
    directory.mkdir(parents=True, exist_ok=True)
    for name, data in runner.blobs().items():
        (directory / name).write_bytes(data)
    manifest_path = directory / MANIFEST
    manifest_path.write_text(json.dumps(runner.manifest()), encoding="utf-8")
    runner.events.log_system_event(
        {
            "event_name": "checkpoint",
            "component": "storage",
            "message": f"task {runner.position} written to {directory}",
        }
    )
    return manifest_path


def read_checkpoint(checkpoint_dir) -> Tuple[Dict, Dict[str, bytes]]:
    directory = Path(checkpoint_dir)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise SchemaError(f"No checkpoint manifest in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"Corrupt checkpoint manifest {manifest_path}: {e}")
    blobs = {p.name: p.read_bytes() for p in directory.glob("*.bin")}
    return manifest, blobs
