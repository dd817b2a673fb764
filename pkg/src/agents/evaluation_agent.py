"""
Evaluation protocol for continual OWD regression: result matrices, MAPE
based summary metrics (AveMAPE, forgetting, k-step forgetting), tail
metrics, and the orchestration of every method over a task sequence.
"""

import logging
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import ks_2samp
from sklearn.decomposition import PCA
from tqdm import tqdm

from src.agents.logging_learning_agent import LoggingLearningAgent
from src.agents.scenario_agent import SequenceSpec, TaskCondition, build_tasks
from src.agents.scholar_agent import (
    GENERATOR,
    ConfigVector,
    Scholar,
    build_multi_generator_scholar,
    build_single_generator_scholar,
    learn_task,
)
from src.core.generators import sample
from src.core.numcore import Rng
from src.core.solver import REAL, Solver, WeightedBatch, predict, train_epochs
from src.core.tabular import TabularDataset, split_train_test
from src.models import (
    GeneratorKind,
    MetricSummary,
    Method,
    RunReport,
    ScholarConfig,
    TailSummary,
)
from src.utils.errors import DimensionError, DomainError, StateError
from src.utils.serialization import (
    deserialize_generator,
    deserialize_solver,
    generator_bytes,
    serialize_generator,
    serialize_solver,
)

logger = logging.getLogger(__name__)

WIDE_HIDDEN = [256, 256]
TAIL_MIN_SAMPLES = 30
NEAR_ZERO = 1e-9
# share of seeds on which multigen's tail AveMAPE must not exceed singlegen's
TAIL_GATE_SHARE = 0.8


def mape(y: Sequence[float], y_hat: Sequence[float]) -> float:
    """Mean absolute percentage error in percent"""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"Ground truth {y.shape} and predictions {y_hat.shape} differ")
    if y.size == 0:
        raise DomainError("MAPE needs at least one sample")
    if np.any(np.abs(y) <= NEAR_ZERO):
        raise DomainError("MAPE is undefined for near-zero ground truth")
    return float(100.0 * np.mean(np.abs(y - y_hat) / np.abs(y)))


class ResultMatrix:
    """
    I x I matrix of test MAPE: entry (i, j) is measured on task j's test set
    after training through task i. Unpopulated entries are NaN.
    """

    def __init__(self, n_tasks: int, values: Optional[np.ndarray] = None):
        if n_tasks < 1:
            raise DomainError("A result matrix needs at least one task")
        self.values = np.full((n_tasks, n_tasks), np.nan) if values is None else values

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    def set(self, i: int, j: int, value: float) -> None:
        if not np.isfinite(value) or value < 0:
            raise DomainError(f"Result entries must be finite and >= 0, got {value}")
        self.values[i, j] = value

    def row_complete(self, i: int) -> bool:
        return bool(np.all(np.isfinite(self.values[i])))

    @property
    def is_complete(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def to_list(self) -> List[List[Optional[float]]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.values]

    @classmethod
    def from_list(cls, rows: List[List[Optional[float]]]) -> "ResultMatrix":
        values = np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError(f"Result matrix must be square, got shape {values.shape}")
        return cls(values.shape[0], values)


def _matrix(result) -> np.ndarray:
    values = result.values if isinstance(result, ResultMatrix) else np.asarray(result, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] == 0:
        raise DimensionError(f"Result matrix must be square and non-empty, got {values.shape}")
    return values


def _require_final_row(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values[-1])):
        raise StateError("Result matrix is not populated through the final task")


def ave_mape(result) -> float:
    values = _matrix(result)
    _require_final_row(values)
    return float(np.mean(values[-1]))


def forgetting(result) -> float:
    values = _matrix(result)
    n = values.shape[0]
    if n < 2:
        raise DomainError("Forgetting needs at least two tasks")
    _require_final_row(values)
    return float(np.mean(values[-1, : n - 1] - np.diag(values)[: n - 1]))


def f_k(result, k: int) -> float:
    """Average k-step forgetting"""
    values = _matrix(result)
    n = values.shape[0]
    if not 1 <= k <= n - 1:
        raise DomainError(f"k must lie in 1..{n - 1}, got {k}")
    rows = np.arange(n - k)
    later = values[rows + k, rows]
    if not np.all(np.isfinite(later)):
        raise StateError(f"Result matrix lacks entries needed for F_{k}")
    return float(np.mean(later - values[rows, rows]))


def summarize(result) -> MetricSummary:
    values = _matrix(result)
    n = values.shape[0]
    return MetricSummary(
        ave_mape=ave_mape(values),
        forgetting=forgetting(values) if n > 1 else None,
        f_k={str(k): f_k(values, k) for k in range(1, n)},
    )


def tail_metrics(
    test_targets: List[np.ndarray],
    predictions: List[List[np.ndarray]],
    percentile: float = 90.0,
    threshold: Optional[float] = None,
    min_samples: int = TAIL_MIN_SAMPLES,
) -> TailSummary:
    """
    Result-matrix metrics restricted to test samples whose ground-truth OWD
    exceeds a threshold (default: a percentile of the pooled test OWD).
    Cells with fewer than `min_samples` tail samples are missing.
    """
    n = len(test_targets)
    if n == 0 or len(predictions) == 0:
        raise DomainError("Tail metrics need at least one task")
    if threshold is None:
        threshold = float(np.percentile(np.concatenate(test_targets), percentile))

    masks = [np.asarray(y) > threshold for y in test_targets]
    rows = len(predictions)
    matrix: List[List[Optional[float]]] = [[None] * n for _ in range(n)]
    available = 0
    for i in range(rows):
        for j in range(n):
            if masks[j].sum() < min_samples:
                continue
            matrix[i][j] = mape(test_targets[j][masks[j]], predictions[i][j][masks[j]])
            available += 1

    coverage = available / float(rows * n)
    final = matrix[n - 1] if rows == n else [None] * n
    final_cells = [v for v in final if v is not None]
    pairs = [
        final[i] - matrix[i][i]
        for i in range(n - 1)
        if final[i] is not None and matrix[i][i] is not None
    ]
    refused = available == 0
    if refused:
        logger.warning(f"Tail threshold {threshold:.4f} leaves no evaluable cell")
    return TailSummary(
        percentile=percentile,
        threshold=threshold,
        matrix=matrix,
        ave_mape=float(np.mean(final_cells)) if final_cells and not refused else None,
        forgetting=float(np.mean(pairs)) if pairs and not refused else None,
        coverage=coverage,
        refused=refused,
    )


def replay_fidelity(
    real: TabularDataset,
    replay_features: TabularDataset,
    replay_targets: np.ndarray,
    rng: Optional[Rng] = None,
) -> Dict[str, float]:
    """
    Compare replay to real data: KS statistics between real and replayed rows
    along the first two principal components of the real features, and
    between real OWD and the replay labels.
    """
    real_numeric = real.numeric_features()
    replay_numeric = replay_features.numeric_features()
    components = min(2, real_numeric.shape[1], len(real_numeric))
    seed = int(rng.integers(0, 2**31 - 1)) if rng is not None else 0
    pca = PCA(n_components=components, random_state=seed).fit(real_numeric)
    real_projected = pca.transform(real_numeric)
    replay_projected = pca.transform(replay_numeric)

    diagnostics = {}
    for index in range(components):
        statistic = ks_2samp(real_projected[:, index], replay_projected[:, index]).statistic
        diagnostics[f"ks_pc{index + 1}"] = float(statistic)
    if real.targets is not None:
        diagnostics["ks_target"] = float(ks_2samp(real.targets, replay_targets).statistic)
    return diagnostics


def method_scholar_config(method: Method, base: ScholarConfig) -> ScholarConfig:
    """The scholar configuration a method runs with"""
    method = Method(method)
    generator = base.generator
    if method == Method.SINGLE_GEN_VAE:
        generator = generator.model_copy(update={"kind": GeneratorKind.VAE})
    elif method in (Method.SINGLE_GEN_TVAE, Method.MULTI_GEN_TVAE):
        generator = generator.model_copy(update={"kind": GeneratorKind.TVAE})
    elif method == Method.SINGLE_GEN_TVAE_WIDE:
        generator = generator.model_copy(
            update={"kind": GeneratorKind.TVAE, "hidden_sizes": list(WIDE_HIDDEN)}
        )
    return base.model_copy(update={"generator": generator})


@dataclass
class MethodRun:
    method: Method
    sequence: SequenceSpec
    result: ResultMatrix
    summary: MetricSummary
    predictions: List[List[np.ndarray]]
    test_targets: List[np.ndarray]
    task_labels: List[str]
    storage_bytes: List[int]
    wall_time: float = 0.0
    diagnostics: Dict[str, float] = field(default_factory=dict)
    config: Dict = field(default_factory=dict)


class MethodRunner:
    """
    Runs one method over one task sequence, one task per `step()`.
    The runner's state can be checkpointed after any step and restored.
    """

    def __init__(
        self,
        method: Method,
        sequence: SequenceSpec,
        scholar_config: ScholarConfig,
        train_fraction: float = 0.7,
        tasks: Optional[List[TaskCondition]] = None,
        events: Optional[LoggingLearningAgent] = None,
    ):
        self.method = Method(method)
        self.sequence = sequence
        self.config = method_scholar_config(self.method, scholar_config)
        self.train_fraction = train_fraction
        self.tasks = tasks if tasks is not None else build_tasks(sequence)
        self.events = events or LoggingLearningAgent()
        self.rng = Rng(sequence.seed)
        self.splits = [
            split_train_test(task.dataset, train_fraction, self.rng.fork(1, j))
            for j, task in enumerate(self.tasks)
        ]
        self.schema = self.tasks[0].dataset.schema
        self.position = 0
        self.result = ResultMatrix(len(self.tasks))
        self.predictions: List[List[np.ndarray]] = []
        self.storage_bytes: List[int] = []
        self.diagnostics: Dict[str, float] = {}
        self.scholar: Optional[Scholar] = None
        self.solver: Optional[Solver] = None

        width = sequence.config_width
        if self.method == Method.MULTI_GEN_TVAE:
            self.scholar = build_multi_generator_scholar(
                self.schema, self.config, width, self.rng.fork(0), self.events
            )
        elif self.method.is_generative:
            self.scholar = build_single_generator_scholar(
                self.schema, self.config, width, self.rng.fork(0), self.events
            )
        elif self.method == Method.NAIVE:
            self.solver = Solver(self.schema.numeric_width, self.config.solver, self.rng.fork(0))

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def done(self) -> bool:
        return self.position >= self.n_tasks

    @property
    def current_solver(self) -> Solver:
        return self.scholar.solver if self.scholar is not None else self.solver

    def step(self) -> None:
        if self.done:
            raise StateError("All tasks of the sequence have been learned")
        i = self.position
        task = self.tasks[i]
        train, _ = self.splits[i]
        task_rng = self.rng.fork(2, i)
        replay_rows = 0

        if self.scholar is not None:
            outcome = learn_task(self.scholar, replace(task, dataset=train), task_rng)
            replay_rows = sum(outcome.replay_rows.values())
            final_loss = outcome.trace.epoch_losses[-1]
            storage = sum(generator_bytes(g) for g in self.scholar.generators)
            if i == 0:
                self._record_fidelity(train, outcome.target_index)
        elif self.method == Method.NAIVE:
            final_loss = self._fit_solver(self.solver, train, task_rng)
            storage = 0
        else:
            retained = TabularDataset.concat([split[0] for split in self.splits[: i + 1]])
            self.solver = Solver(self.schema.numeric_width, self.config.solver, self.rng.fork(0, i))
            final_loss = self._fit_solver(self.solver, retained, task_rng)
            storage = retained.serialized_bytes()

        self._evaluate(i)
        self.storage_bytes.append(int(storage))
        self.events.log_task(
            {
                "method": self.method.value,
                "task": i + 1,
                "ue_type": task.ue_type.value,
                "pattern": task.pattern.value,
                "real_rows": len(train),
                "replay_rows": replay_rows,
                "solver_loss": final_loss,
                "metadata": {
                    "storage_bytes": int(storage),
                    "ul_loads_mbps": [float(load) for load in task.ul_loads_mbps],
                },
            }
        )
        self.position += 1

    def _fit_solver(self, solver: Solver, data: TabularDataset, rng: Rng) -> float:
        features = data.numeric_features()
        solver.observe_task(features, data.targets)
        batch = WeightedBatch(features, data.targets, REAL, 1.0)
        trace = train_epochs(solver, [batch], self.config.solver.epochs, rng)
        return trace.epoch_losses[-1]

    def _evaluate(self, i: int) -> None:
        solver = self.current_solver
        row = []
        for j, (_, test) in enumerate(self.splits):
            predicted = predict(solver, test.numeric_features())
            self.result.set(i, j, mape(test.targets, predicted))
            row.append(predicted)
        self.predictions.append(row)

    def _record_fidelity(self, train: TabularDataset, target: int) -> None:
        generator = self.scholar.slots[target].generator
        fidelity_rng = self.rng.fork(3)
        replay = sample(generator, len(train), fidelity_rng.fork(0))
        targets = predict(self.scholar.solver, replay.numeric_features())
        self.diagnostics.update(replay_fidelity(train, replay, targets, fidelity_rng.fork(1)))

    def run(self, checkpoint_dir: Optional[str] = None, progress: bool = False) -> MethodRun:
        started = time.perf_counter()
        remaining = range(self.position, self.n_tasks)
        for _ in tqdm(
            remaining,
            desc=f"{self.method.value} seed {self.sequence.seed}",
            file=sys.stderr,
            disable=not progress,
        ):
            self.step()
            if checkpoint_dir is not None:
                from src.utils.storage import write_checkpoint

                write_checkpoint(self, checkpoint_dir)
        return self.finish(time.perf_counter() - started)

    def finish(self, wall_time: float = 0.0) -> MethodRun:
        if not self.done:
            raise StateError(f"Only {self.position} of {self.n_tasks} tasks have been learned")
        diagnostics = dict(self.diagnostics)
        if self.scholar is not None:
            counts = self.scholar.parameter_count()
            diagnostics["generator_parameters"] = float(counts["generators"])
            diagnostics["solver_parameters"] = float(counts["solver"])
        return MethodRun(
            method=self.method,
            sequence=self.sequence,
            result=self.result,
            summary=summarize(self.result),
            predictions=self.predictions,
            test_targets=[test.targets for _, test in self.splits],
            task_labels=[task.label for task in self.tasks],
            storage_bytes=list(self.storage_bytes),
            wall_time=wall_time,
            diagnostics=diagnostics,
            config={
                "train_fraction": self.train_fraction,
                "scholar": self.config.model_dump(mode="json"),
            },
        )

    # Checkpointing
    def manifest(self) -> Dict:
        vectors = (
            [slot.config_vector.entries.tolist() for slot in self.scholar.slots]
            if self.scholar is not None
            else []
        )
        return {
            "method": self.method.value,
            "case_id": self.sequence.case_id,
            "ue_row": self.sequence.ue_row,
            "p_row": self.sequence.p_row,
            "seed": self.sequence.seed,
            "samples_per_task": self.sequence.samples_per_task,
            "alpha": self.config.alpha,
            "train_fraction": self.train_fraction,
            "scholar_config": self.config.model_dump(mode="json"),
            "config_vectors": vectors,
            "task_index": self.position,
            "rng": {"seed": self.rng.seed, "spawn_key": list(self.rng.spawn_key)},
            "result_matrix": self.result.to_list(),
            "predictions": [[p.tolist() for p in row] for row in self.predictions],
            "storage_bytes": self.storage_bytes,
            "diagnostics": self.diagnostics,
        }

    def blobs(self) -> Dict[str, bytes]:
        blobs = {}
        solver = self.current_solver
        if solver is not None:
            blobs["solver.bin"] = serialize_solver(solver)
        if self.scholar is not None:
            for k, generator in enumerate(self.scholar.generators):
                if generator.trained:
                    blobs[f"generator_{k}.bin"] = serialize_generator(generator)
        return blobs

    @classmethod
    def restore(
        cls, manifest: Dict, blobs: Dict[str, bytes], events: Optional[LoggingLearningAgent] = None
    ) -> "MethodRunner":
        sequence = SequenceSpec(
            ue_row=manifest["ue_row"],
            p_row=manifest["p_row"],
            samples_per_task=manifest["samples_per_task"],
            seed=manifest["seed"],
            case_id=manifest["case_id"],
        )
        runner = cls(
            Method(manifest["method"]),
            sequence,
            ScholarConfig(**manifest["scholar_config"]),
            manifest["train_fraction"],
            events=events,
        )
        runner.position = manifest["task_index"]
        runner.result = ResultMatrix.from_list(manifest["result_matrix"])
        runner.predictions = [
            [np.asarray(p, dtype=np.float64) for p in row] for row in manifest["predictions"]
        ]
        runner.storage_bytes = list(manifest["storage_bytes"])
        runner.diagnostics = dict(manifest["diagnostics"])

        if "solver.bin" in blobs:
            solver = deserialize_solver(blobs["solver.bin"])
            if runner.scholar is not None:
                runner.scholar.solver = solver
            else:
                runner.solver = solver
        if runner.scholar is not None:
            runner.scholar.task_index = runner.position
            for k, vector in enumerate(manifest["config_vectors"]):
                runner.scholar.slots[k].config_vector = ConfigVector(vector, GENERATOR)
                if f"generator_{k}.bin" in blobs:
                    runner.scholar.slots[k].generator = deserialize_generator(
                        blobs[f"generator_{k}.bin"]
                    )
        logger.info(
            f"Restored {runner.method.value} at task {runner.position}/{runner.n_tasks}"
        )
        return runner


def run_method(
    method: Method,
    sequence: SequenceSpec,
    scholar_config: ScholarConfig,
    train_fraction: float = 0.7,
    tasks: Optional[List[TaskCondition]] = None,
    progress: bool = False,
) -> MethodRun:
    runner = MethodRunner(method, sequence, scholar_config, train_fraction, tasks)
    return runner.run(progress=progress)


def build_report(run: MethodRun, tail_pct: float = 90.0) -> RunReport:
    sequence = run.sequence
    return RunReport(
        method=run.method,
        case_id=sequence.case_id,
        ue_row=sequence.ue_row,
        p_row=sequence.p_row,
        seed=sequence.seed,
        samples_per_task=sequence.samples_per_task,
        alpha=run.config.get("scholar", {}).get("alpha", 0.5),
        task_labels=run.task_labels,
        result_matrix=[[float(v) for v in row] for row in run.result.values],
        summary=run.summary,
        default_k=sequence.default_k,
        tail=tail_metrics(run.test_targets, run.predictions, tail_pct),
        storage_bytes=run.storage_bytes,
        diagnostics=run.diagnostics,
        config=run.config,
    )


def case_label(case_id: Optional[int]) -> str:
    return str(case_id) if case_id is not None else "custom"


def long_rows(report: RunReport) -> List[Dict]:
    """Plot-ready rows: method, case, seed, metric, k, value"""
    base = {
        "method": report.method.value,
        "case": case_label(report.case_id),
        "seed": report.seed,
    }
    rows = [{**base, "metric": "ave_mape", "k": None, "value": report.summary.ave_mape}]
    if report.summary.forgetting is not None:
        rows.append({**base, "metric": "forgetting", "k": None, "value": report.summary.forgetting})
    for k, value in report.summary.f_k.items():
        rows.append({**base, "metric": "f_k", "k": int(k), "value": value})
    tail = report.tail
    if tail.ave_mape is not None:
        rows.append({**base, "metric": "tail_ave_mape", "k": None, "value": tail.ave_mape})
    if tail.forgetting is not None:
        rows.append({**base, "metric": "tail_forgetting", "k": None, "value": tail.forgetting})
    rows.append({**base, "metric": "tail_coverage", "k": None, "value": tail.coverage})
    rows.append(
        {**base, "metric": "storage_bytes", "k": None, "value": float(report.storage_bytes[-1])}
    )
    return rows


def aggregate_runs(reports: List[RunReport]) -> pd.DataFrame:
    """Mean and min-max band per (method, case, metric, k) across seeds"""
    rows = [row for report in reports for row in long_rows(report)]
    columns = ["method", "case", "metric", "k", "mean", "min", "max", "seeds"]
    if not rows:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame(rows)
    frame["k"] = frame["k"].astype("Int64")
    table = (
        frame.groupby(["method", "case", "metric", "k"], dropna=False, sort=True)["value"]
        .agg(["mean", "min", "max", "count"])
        .reset_index()
        .rename(columns={"count": "seeds"})
    )
    return table[columns]


def _metric(table: pd.DataFrame, case: str, method: Method, metric: str) -> Optional[float]:
    rows = table[
        (table["case"] == case) & (table["method"] == method.value) & (table["metric"] == metric)
    ]
    return float(rows["mean"].iloc[0]) if len(rows) else None


def _relation(table, case, metric, better: Method, worse: Method, factor: float = 1.0) -> Dict:
    left = _metric(table, case, better, metric)
    right = _metric(table, case, worse, metric)
    entry = {
        "metric": metric,
        "relation": f"{better.value} < {worse.value}"
        + (f" by {round((1 - factor) * 100)}%" if factor != 1.0 else ""),
        "left": left,
        "right": right,
        "margin": None,
        "passed": None,
    }
    if left is not None and right is not None:
        entry["margin"] = factor * right - left
        entry["passed"] = bool(left < factor * right)
    return entry


def _tail_gate(reports: List[RunReport], case: str) -> Dict:
    tails: Dict[int, Dict[Method, Optional[float]]] = {}
    for report in reports:
        if case_label(report.case_id) == case:
            tails.setdefault(report.seed, {})[report.method] = report.tail.ave_mape
    per_seed = []
    for seed in sorted(tails):
        left = tails[seed].get(Method.MULTI_GEN_TVAE)
        right = tails[seed].get(Method.SINGLE_GEN_TVAE)
        if left is not None and right is not None:
            per_seed.append({"seed": seed, "left": left, "right": right, "passed": bool(left <= right)})
    needed = int(np.ceil(round(TAIL_GATE_SHARE * len(per_seed), 9)))
    wins = sum(entry["passed"] for entry in per_seed)
    return {
        "metric": "tail_ave_mape",
        "relation": f"{Method.MULTI_GEN_TVAE.value} <= {Method.SINGLE_GEN_TVAE.value} per seed",
        "wins": wins,
        "needed": needed,
        "per_seed": per_seed,
        "passed": wins >= needed if per_seed else None,
    }


def result_matrices(reports: List[RunReport], case: str) -> Dict[str, Dict[str, List[List[float]]]]:
    """Full R matrix of every run of a case, by method then seed"""
    matrices: Dict[str, Dict[str, List[List[float]]]] = {}
    for report in reports:
        if case_label(report.case_id) == case:
            matrices.setdefault(report.method.value, {})[str(report.seed)] = report.result_matrix
    return matrices


def ordering_report(
    table: pd.DataFrame, case_id: Optional[int], reports: Optional[List[RunReport]] = None
) -> Dict:
    """
    Check the expected method ordering on seed-averaged metrics. The hard
    gate requires cumulative to forget least and naive most; the soft gate
    checks the inner ordering. Missing methods leave a relation unchecked.

    With the per-run reports, the per-seed tail gate is checked too and a
    failing relation attaches every R matrix of the case for diagnosis.
    """
    case = case_label(case_id)
    hard = [_relation(table, case, "forgetting", Method.CUMULATIVE, Method.NAIVE)]
    for method in Method:
        if method in (Method.CUMULATIVE, Method.NAIVE):
            continue
        if _metric(table, case, method, "forgetting") is None:
            continue
        hard.append(_relation(table, case, "forgetting", Method.CUMULATIVE, method))
        hard.append(_relation(table, case, "forgetting", method, Method.NAIVE))
    soft = [
        _relation(table, case, "forgetting", Method.CUMULATIVE, Method.MULTI_GEN_TVAE),
        _relation(table, case, "forgetting", Method.MULTI_GEN_TVAE, Method.SINGLE_GEN_TVAE),
        _relation(table, case, "forgetting", Method.SINGLE_GEN_TVAE, Method.NAIVE),
        _relation(table, case, "ave_mape", Method.MULTI_GEN_TVAE, Method.SINGLE_GEN_VAE, 0.9),
    ]
    checked = [entry["passed"] for entry in hard if entry["passed"] is not None]
    result = {
        "case": case,
        "hard_gate": {"passed": all(checked) if checked else None, "relations": hard},
        "soft_gate": soft,
    }
    if reports is None:
        return result
    result["tail_gate"] = _tail_gate(reports, case)
    failed = [entry for entry in hard + soft + [result["tail_gate"]] if entry["passed"] is False]
    if failed:
        logger.warning(
            f"Case {case}: {len(failed)} ordering relation(s) failed: "
            + ", ".join(entry["relation"] for entry in failed)
        )
        result["diagnostics"] = result_matrices(reports, case)
    return result
