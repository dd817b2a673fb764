"""
The scholar: K replay generators plus one solver, updated task by task
with generative replay.

Per task the scholar
1. trains the solver on real rows (weight alpha) and on replay from every
   trained generator labeled by the prior solver (weight 1 - alpha, split
   equally across generators),
2. picks the target generator whose configuration vector is most relevant
   to the task's configuration vector,
3. refits only that generator on the task's real features plus its own replay.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.agents.logging_learning_agent import LoggingLearningAgent
from src.core.generators import Generator, fit, sample
from src.core.numcore import Rng
from src.core.solver import REAL, REPLAY, Solver, TrainingTrace, WeightedBatch, predict, train_epochs
from src.core.tabular import Schema, TabularDataset
from src.models import ReplayPolicy, ScholarConfig
from src.utils.errors import DimensionError, DomainError

logger = logging.getLogger(__name__)

TASK = "task"
GENERATOR = "generator"


@dataclass
class ConfigVector:
    """
    Configuration vector over J UE types. Task vectors are binary;
    generator vectors may hold soft memberships in [0, 1].
    """

    entries: np.ndarray
    role: str = TASK

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64).reshape(-1)
        if self.role not in (TASK, GENERATOR):
            raise DomainError(f"Unknown configuration vector role {self.role!r}")
        if len(self.entries) == 0:
            raise DimensionError("Configuration vectors need at least one entry")
        if np.any(self.entries < 0.0) or np.any(self.entries > 1.0):
            raise DomainError(f"Configuration entries must lie in [0, 1]: {self.entries.tolist()}")
        if self.role == TASK and not np.all(np.isin(self.entries, (0.0, 1.0))):
            raise DomainError(f"Task configuration vectors must be binary: {self.entries.tolist()}")

    @property
    def width(self) -> int:
        return len(self.entries)


@dataclass
class RelevanceVector:
    scores: np.ndarray


def relevance(a: ConfigVector, bs: List[ConfigVector]) -> RelevanceVector:
    """r_k = b_k . a for every generator vector"""
    for k, b in enumerate(bs):
        if b.width != a.width:
            raise DimensionError(
                f"Generator vector {k} has width {b.width}, task vector has {a.width}"
            )
    return RelevanceVector(np.array([float(np.dot(b.entries, a.entries)) for b in bs]))


def select_target(r: RelevanceVector) -> int:
    """
    Index of the most relevant generator; ties go to the lowest index.
    An all-zero relevance vector selects generator 0 with a warning.
    """
    scores = np.asarray(r.scores, dtype=np.float64)
    if scores.size == 0:
        raise DomainError("Cannot select a target among zero generators")
    if not np.any(scores):
        logger.warning(
            f"No generator is relevant to the task (relevance {scores.tolist()}); using generator 0"
        )
        return 0
    return int(np.argmax(scores))


def replay_counts(
    policy: ReplayPolicy, current_n: int, trained_indices: List[int]
) -> Dict[int, int]:
    """Replay rows to draw from each trained generator"""
    if current_n < 1:
        raise DomainError(f"current_n must be >= 1, got {current_n}")
    if not trained_indices:
        return {}
    ordered = sorted(trained_indices)
    if ReplayPolicy(policy) == ReplayPolicy.PER_GENERATOR:
        return {k: current_n for k in ordered}
    share, remainder = divmod(current_n, len(ordered))
    return {k: share + (1 if position < remainder else 0) for position, k in enumerate(ordered)}


@dataclass
class GeneratorSlot:
    generator: Generator
    config_vector: ConfigVector


@dataclass
class ReplayBlock:
    generator_index: int
    features: TabularDataset
    numeric: np.ndarray
    targets: np.ndarray


@dataclass
class TaskOutcome:
    task_index: int
    target_index: int
    relevance: List[float]
    replay_rows: Dict[int, int]
    trace: TrainingTrace
    generator_loss: Optional[float] = None


class Scholar:
    """K generators with their configuration vectors and one shared solver"""

    def __init__(
        self,
        slots: List[GeneratorSlot],
        solver: Solver,
        config: ScholarConfig,
        events: Optional[LoggingLearningAgent] = None,
    ):
        if not slots:
            raise DomainError("A scholar needs at least one generator")
        widths = {slot.config_vector.width for slot in slots}
        if len(widths) != 1:
            raise DimensionError(f"Generator vectors disagree on width: {sorted(widths)}")
        self.slots = slots
        self.solver = solver
        self.config = config
        self.task_index = 0
        self.events = events or LoggingLearningAgent()

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def replay_policy(self) -> ReplayPolicy:
        return self.config.replay_policy

    @property
    def generators(self) -> List[Generator]:
        return [slot.generator for slot in self.slots]

    @property
    def config_vectors(self) -> List[ConfigVector]:
        return [slot.config_vector for slot in self.slots]

    def trained_indices(self) -> List[int]:
        return [k for k, slot in enumerate(self.slots) if slot.generator.trained]

    def parameter_count(self) -> Dict[str, int]:
        generator_params = sum(g.parameter_count() for g in self.generators)
        return {
            "generators": generator_params,
            "solver": self.solver.parameter_count(),
            "total": generator_params + self.solver.parameter_count(),
        }


def build_scholar(
    schema: Schema,
    config: ScholarConfig,
    generator_vectors: List[ConfigVector],
    rng: Rng,
    events: Optional[LoggingLearningAgent] = None,
) -> Scholar:
    slots = [GeneratorSlot(Generator(config.generator, schema), b) for b in generator_vectors]
    solver = Solver(schema.numeric_width, config.solver, rng.fork(0))
    return Scholar(slots, solver, config, events)


def build_single_generator_scholar(
    schema: Schema, config: ScholarConfig, width: int, rng: Rng, events=None
) -> Scholar:
    """K = 1 with b = (1, ..., 1): plain deep generative replay"""
    return build_scholar(schema, config, [ConfigVector(np.ones(width), GENERATOR)], rng, events)


def build_multi_generator_scholar(
    schema: Schema, config: ScholarConfig, width: int, rng: Rng, events=None
) -> Scholar:
    """K = J generators with one-hot configuration vectors, one per UE type"""
    vectors = [ConfigVector(np.eye(width)[k], GENERATOR) for k in range(width)]
    return build_scholar(schema, config, vectors, rng, events)


def generate_replay(
    scholar: Scholar, prior_solver: Optional[Solver], current_n: int, rng: Rng
) -> List[ReplayBlock]:
    """
    Sample replay features from every trained generator and label them with
    the prior solver snapshot.
    """
    if scholar.task_index == 0 or prior_solver is None:
        return []
    counts = replay_counts(scholar.replay_policy, current_n, scholar.trained_indices())
    blocks = []
    for k, n_k in counts.items():
        if n_k < 1:
            continue
        features = sample(scholar.slots[k].generator, n_k, rng.fork(k))
        numeric = features.numeric_features()
        targets = predict(prior_solver, numeric)
        blocks.append(ReplayBlock(k, features.with_targets(targets), numeric, targets))
    return blocks


def solver_batches(
    alpha: float, real: TabularDataset, replay: List[ReplayBlock]
) -> List[WeightedBatch]:
    batches = [WeightedBatch(real.numeric_features(), real.targets, REAL, alpha)]
    batches += [WeightedBatch(block.numeric, block.targets, REPLAY, alpha) for block in replay]
    return batches


def learn_task(scholar: Scholar, task, rng: Rng) -> TaskOutcome:
    """
    One continual-learning step on `task` (anything carrying a labeled
    `dataset` and a task `config_vector`, typically a TaskCondition holding
    the training split).
    """
    train = task.dataset
    if train.is_empty:
        raise DomainError("Cannot learn a task without training rows")
    if train.targets is None:
        raise DomainError("Task training rows need OWD targets")
    a = task.config_vector
    if a.width != scholar.config_vectors[0].width:
        raise DimensionError(
            f"Task vector width {a.width} != generator vector width {scholar.config_vectors[0].width}"
        )
    current_n = len(train)
    step = scholar.task_index

    prior_solver = scholar.solver.snapshot() if step > 0 else None
    replay = generate_replay(scholar, prior_solver, current_n, rng.fork(0))

    scholar.solver.observe_task(train.numeric_features(), train.targets)
    trace = train_epochs(
        scholar.solver,
        solver_batches(scholar.alpha, train, replay),
        scholar.config.solver.epochs,
        rng.fork(1),
    )
    scholar.events.log_training(
        {
            "component": "solver",
            "task": step + 1,
            "epochs": scholar.config.solver.epochs,
            "final_loss": trace.epoch_losses[-1],
        }
    )

    r = relevance(a, scholar.config_vectors)
    target = select_target(r)
    scholar.events.log_selection(
        {
            "task": step + 1,
            "relevance": r.scores.tolist(),
            "selected_generator": target + 1,
            "zero_relevance": not np.any(r.scores),
        }
    )

    generator = scholar.slots[target].generator
    real_features = TabularDataset(train.schema, train.features)
    if generator.trained:
        own_replay = sample(generator, current_n, rng.fork(2))
        fit_data = TabularDataset.concat([real_features, own_replay])
    else:
        fit_data = real_features
    fit(generator, fit_data, rng.fork(3))
    scholar.events.log_training(
        {
            "component": f"generator_{target + 1}",
            "task": step + 1,
            "epochs": generator.config.epochs,
            "final_loss": generator.epoch_losses[-1],
            "metadata": {"rows": len(fit_data)},
        }
    )

    scholar.task_index += 1
    return TaskOutcome(
        task_index=step,
        target_index=target,
        relevance=r.scores.tolist(),
        replay_rows={block.generator_index: len(block.numeric) for block in replay},
        trace=trace,
        generator_loss=generator.epoch_losses[-1],
    )
