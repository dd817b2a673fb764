"""
The OWD prediction model S: an MLP regressor trained on weighted mixtures
of real and replayed batches.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.core.numcore import AdamState, LayerStack, Rng, adam_step, minibatches, mse_loss
from src.models import SolverConfig
from src.utils.errors import DimensionError, DomainError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
REAL = "real"
REPLAY = "replay"


@dataclass
class RunningStandardizer:
    """
    Per-feature z-score statistics: fitted on the first task, then blended
    towards each new task's statistics as an exponential moving average.
    """

    means: np.ndarray
    stds: np.ndarray
    tasks_seen: int = 0

    @classmethod
    def identity(cls, width: int) -> "RunningStandardizer":
        return cls(np.zeros(width), np.ones(width))

    def observe(self, features: np.ndarray, decay: float) -> None:
        means = features.mean(axis=0)
        stds = np.maximum(features.std(axis=0), STD_FLOOR)
        if self.tasks_seen == 0:
            self.means, self.stds = means, stds
        else:
            self.means = decay * self.means + (1.0 - decay) * means
            self.stds = np.maximum(decay * self.stds + (1.0 - decay) * stds, STD_FLOOR)
        self.tasks_seen += 1

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.means) / self.stds


@dataclass
class WeightedBatch:
    """A block of training rows tagged `real` or `replay` with its mixing weight"""

    features: np.ndarray
    targets: np.ndarray
    tag: str
    weight: float

    def __post_init__(self):
        if self.tag not in (REAL, REPLAY):
            raise DomainError(f"Unknown batch tag {self.tag!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise DomainError(f"Mixing weight must lie in [0, 1], got {self.weight}")
        if len(self.features) != len(self.targets):
            raise DimensionError("Batch features and targets differ in length")


@dataclass
class TrainingTrace:
    """Per-step loss components plus per-epoch averages of the total"""

    total: List[float] = field(default_factory=list)
    real: List[float] = field(default_factory=list)
    replay: List[float] = field(default_factory=list)
    alpha: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)


class Solver:
    """MLP with ReLU hidden layers and a linear scalar output"""

    def __init__(self, input_width: int, config: SolverConfig, rng: Rng):
        self.config = config
        self.network = LayerStack.build(input_width, config.hidden_sizes, 1, rng, prefix="solver")
        self.standardizer = RunningStandardizer.identity(input_width)
        self.optimizer: Optional[AdamState] = None
        self.trained = False
        self.bias_initialized = False

    @property
    def input_width(self) -> int:
        return self.network.in_dim

    def snapshot(self) -> "Solver":
        return copy.deepcopy(self)

    def observe_task(self, features: np.ndarray, targets: np.ndarray) -> None:
        """Update the standardizer with a new task's real data (once per task)"""
        _check_width(self, features)
        self.standardizer.observe(features, self.config.standardizer_decay)
        if not self.bias_initialized and len(targets):
            self.network.layers[-1].bias = np.array([float(np.mean(targets))])
            self.bias_initialized = True

    def forward(self, features: np.ndarray):
        return self.network.forward(self.standardizer.transform(features))

    def parameter_count(self) -> int:
        return self.network.parameter_count()


def _check_width(solver: Solver, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != solver.input_width:
        raise DimensionError(
            f"Solver expects {solver.input_width} feature columns, got {features.shape}"
        )


def predict(solver: Solver, features: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; returns predicted OWD in milliseconds"""
    features = np.asarray(features, dtype=np.float64)
    _check_width(solver, features)
    output, _ = solver.forward(features)
    return output[:, 0]


def _loss_and_grads(solver: Solver, features: np.ndarray, targets: np.ndarray):
    output, cache = solver.forward(features)
    loss, grad = mse_loss(output[:, 0], targets)
    grads, _ = solver.network.backward(cache, grad.reshape(-1, 1), input_grad=False)
    return loss, grads


def _split(batches: List[WeightedBatch]):
    real = [b for b in batches if b.tag == REAL and len(b.features)]
    replay = [b for b in batches if b.tag == REPLAY and len(b.features)]
    if len(real) > 1:
        real = [
            WeightedBatch(
                np.vstack([b.features for b in real]),
                np.concatenate([b.targets for b in real]),
                REAL,
                real[0].weight,
            )
        ]
    return (real[0] if real else None), replay


def mixed_loss(solver: Solver, batches: List[WeightedBatch]) -> Dict[str, float]:
    """
    Full-data objective: alpha * MSE(real) + (1 - alpha) * mean_k MSE(replay_k).
    Without replay it is plain MSE on the real rows.
    """
    real, replay = _split(batches)
    if real is None:
        raise DomainError("Training needs real data")
    real_loss = float(np.mean((predict(solver, real.features) - real.targets) ** 2))
    if not replay:
        return {"total": real_loss, "real": real_loss, "replay": 0.0, "alpha": 1.0}
    replay_loss = float(
        np.mean([np.mean((predict(solver, b.features) - b.targets) ** 2) for b in replay])
    )
    alpha = real.weight
    return {
        "total": alpha * real_loss + (1.0 - alpha) * replay_loss,
        "real": real_loss,
        "replay": replay_loss,
        "alpha": alpha,
    }


def train_epochs(
    solver: Solver, batches: List[WeightedBatch], epochs: int, rng: Rng
) -> TrainingTrace:
    """
    Minimize alpha * MSE(real) + (1 - alpha) * MSE(replay) with Adam.
    Each step pairs one real minibatch with one minibatch from every replay
    block; the replay weight is split equally across replay blocks. Real and
    replay minibatches are drawn from separate random streams.
    """
    real, replay = _split(batches)
    if real is None:
        raise DomainError("Training needs real data")
    if epochs < 1:
        raise DomainError(f"epochs must be >= 1, got {epochs}")
    for block in replay:
        if block.weight != real.weight:
            raise DomainError("Replay blocks must carry the same mixing weight as the real block")
        _check_width(solver, block.features)
    _check_width(solver, real.features)

    alpha = real.weight if replay else 1.0
    replay_share = (1.0 - alpha) / len(replay) if replay else 0.0
    batch_size = solver.config.batch_size
    real_rng = rng.fork(0)
    replay_rngs = [rng.fork(1, index) for index in range(len(replay))]
    replay_orders = [iter(()) for _ in replay]

    params = solver.network.parameters()
    if solver.optimizer is None:
        solver.optimizer = AdamState(learning_rate=solver.config.learning_rate)
    adam = solver.optimizer
    trace = TrainingTrace()

    for _ in range(epochs):
        epoch_total, epoch_rows = 0.0, 0
        for indices in minibatches(len(real.features), batch_size, real_rng):
            real_loss, real_grads = _loss_and_grads(
                solver, real.features[indices], real.targets[indices]
            )
            grads = {name: alpha * g for name, g in real_grads.items()}
            replay_losses = []
            for position, block in enumerate(replay):
                replay_indices = _next_replay_batch(
                    replay_orders, position, len(block.features), batch_size, replay_rngs[position]
                )
                loss, block_grads = _loss_and_grads(
                    solver, block.features[replay_indices], block.targets[replay_indices]
                )
                replay_losses.append(loss)
                for name, g in block_grads.items():
                    grads[name] = grads[name] + replay_share * g
            replay_loss = float(np.mean(replay_losses)) if replay_losses else 0.0
            total = alpha * real_loss + (1.0 - alpha) * replay_loss if replay else real_loss

            trace.total.append(total)
            trace.real.append(real_loss)
            trace.replay.append(replay_loss)
            trace.alpha.append(alpha)
            epoch_total += total * len(indices)
            epoch_rows += len(indices)

            params = adam_step(adam, params, grads)
            solver.network.assign(params)
        trace.epoch_losses.append(epoch_total / epoch_rows)

    solver.trained = True
    logger.debug(
        f"Solver trained {epochs} epochs on {len(real.features)} real rows and "
        f"{len(replay)} replay blocks, final loss {trace.epoch_losses[-1]:.4f}"
    )
    return trace


def _next_replay_batch(orders, position, n, batch_size, rng) -> np.ndarray:
    """Cycle through a replay block in shuffled minibatches"""
    batch = next(orders[position], None)
    if batch is None:
        orders[position] = minibatches(n, batch_size, rng)
        batch = next(orders[position])
    return batch