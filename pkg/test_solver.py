#!/usr/bin/env python3
"""
Tests for the OWD solver and its weighted real/replay objective
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from src.core.numcore import Rng
from src.core.solver import (
    REAL,
    REPLAY,
    Solver,
    WeightedBatch,
    mixed_loss,
    predict,
    train_epochs,
)
from src.models import SolverConfig
from src.utils.errors import DimensionError, DomainError
from src.utils.serialization import deserialize_solver, serialize_solver, solver_bytes

SMALL = SolverConfig(hidden_sizes=[8, 4], batch_size=16)


def _data(seed, n=64, width=3):
    rng = Rng(seed)
    features = rng.normal((n, width))
    targets = features @ np.array([2.0, -1.0, 0.5])[:width] + 3.0
    return features, targets


def _params(solver):
    return {name: value.copy() for name, value in solver.network.parameters().items()}


def _assert_same_params(a, b):
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def test_untrained_solver_outputs_bias_on_zero_input():
    solver = Solver(3, SMALL, Rng(0))
    np.testing.assert_array_equal(predict(solver, np.zeros((2, 3))), [0.0, 0.0])
    solver.network.layers[-1].bias = np.array([3.5])
    np.testing.assert_allclose(predict(solver, np.zeros((1, 3))), [3.5])


def test_observe_task_initializes_output_bias_once():
    solver = Solver(3, SMALL, Rng(0))
    features, targets = _data(1)
    solver.observe_task(features, targets)
    assert solver.network.layers[-1].bias[0] == pytest.approx(np.mean(targets))
    solver.observe_task(features, targets + 100.0)
    assert solver.network.layers[-1].bias[0] == pytest.approx(np.mean(targets))
    assert solver.standardizer.tasks_seen == 2


def test_predict_rejects_wrong_width():
    with pytest.raises(DimensionError):
        predict(Solver(3, SMALL, Rng(0)), np.zeros((2, 4)))


def test_training_needs_real_rows():
    solver = Solver(3, SMALL, Rng(0))
    features, targets = _data(1)
    with pytest.raises(DomainError):
        train_epochs(solver, [WeightedBatch(features, targets, REPLAY, 0.5)], 1, Rng(1))
    with pytest.raises(DomainError):
        train_epochs(solver, [WeightedBatch(features, targets, REAL, 0.5)], 0, Rng(1))


@pytest.mark.parametrize("weight", [-0.1, 1.1])
def test_weight_outside_unit_interval(weight):
    features, targets = _data(1)
    with pytest.raises(DomainError):
        WeightedBatch(features, targets, REAL, weight)


def test_alpha_one_replay_has_no_effect():
    features, targets = _data(2)
    replay_features, replay_targets = _data(3)

    plain = Solver(3, SMALL, Rng(4))
    train_epochs(plain, [WeightedBatch(features, targets, REAL, 1.0)], 3, Rng(5))

    mixed = Solver(3, SMALL, Rng(4))
    train_epochs(
        mixed,
        [
            WeightedBatch(features, targets, REAL, 1.0),
            WeightedBatch(replay_features, replay_targets * 10.0, REPLAY, 1.0),
        ],
        3,
        Rng(5),
    )
    _assert_same_params(_params(plain), _params(mixed))


def test_alpha_zero_ignores_real_targets():
    features, targets = _data(6)
    replay_features, replay_targets = _data(7)
    results = []
    for real_targets in (targets, -targets * 50.0):
        solver = Solver(3, SMALL, Rng(8))
        train_epochs(
            solver,
            [
                WeightedBatch(features, real_targets, REAL, 0.0),
                WeightedBatch(replay_features, replay_targets, REPLAY, 0.0),
            ],
            2,
            Rng(9),
        )
        results.append(_params(solver))
    _assert_same_params(*results)


def test_identical_replay_gives_plain_loss():
    features, targets = _data(10)
    solver = Solver(3, SMALL, Rng(11))
    plain = mixed_loss(solver, [WeightedBatch(features, targets, REAL, 1.0)])
    half = mixed_loss(
        solver,
        [
            WeightedBatch(features, targets, REAL, 0.5),
            WeightedBatch(features, targets, REPLAY, 0.5),
        ],
    )
    assert half["total"] == pytest.approx(plain["total"])


def test_mixed_loss_averages_replay_blocks():
    features, targets = _data(12)
    solver = Solver(3, SMALL, Rng(13))
    a_features, a_targets = _data(14)
    b_features, b_targets = _data(15)
    losses = mixed_loss(
        solver,
        [
            WeightedBatch(features, targets, REAL, 0.3),
            WeightedBatch(a_features, a_targets, REPLAY, 0.3),
            WeightedBatch(b_features, b_targets + 1.0, REPLAY, 0.3),
        ],
    )
    mse_a = np.mean((predict(solver, a_features) - a_targets) ** 2)
    mse_b = np.mean((predict(solver, b_features) - b_targets - 1.0) ** 2)
    assert losses["replay"] == pytest.approx((mse_a + mse_b) / 2)
    assert losses["total"] == pytest.approx(0.3 * losses["real"] + 0.7 * losses["replay"])


def test_trace_decomposes_every_step():
    features, targets = _data(16)
    replay_features, replay_targets = _data(17, n=20)
    solver = Solver(3, SMALL, Rng(18))
    trace = train_epochs(
        solver,
        [
            WeightedBatch(features, targets, REAL, 0.25),
            WeightedBatch(replay_features, replay_targets, REPLAY, 0.25),
        ],
        2,
        Rng(19),
    )
    assert len(trace.total) == 2 * 4
    assert len(trace.epoch_losses) == 2
    for total, real, replay in zip(trace.total, trace.real, trace.replay):
        assert total == pytest.approx(0.25 * real + 0.75 * replay)


def test_training_is_deterministic():
    features, targets = _data(20)
    runs = []
    for _ in range(2):
        solver = Solver(3, SMALL, Rng(21))
        trace = train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 3, Rng(22))
        runs.append((trace.total, _params(solver)))
    assert runs[0][0] == runs[1][0]
    _assert_same_params(runs[0][1], runs[1][1])


def test_solver_learns_linear_target():
    features, targets = _data(23, n=256)
    solver = Solver(3, SolverConfig(hidden_sizes=[16], batch_size=32, learning_rate=1e-2), Rng(24))
    solver.observe_task(features, targets)
    trace = train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 100, Rng(25))
    assert trace.epoch_losses[-1] < 0.1 * trace.epoch_losses[0]


def test_snapshot_is_independent():
    features, targets = _data(26)
    solver = Solver(3, SMALL, Rng(27))
    frozen = solver.snapshot()
    before = predict(frozen, features)
    train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 2, Rng(28))
    np.testing.assert_array_equal(predict(frozen, features), before)
    assert not np.array_equal(predict(solver, features), before)


def test_solver_dump_restores_predictions_and_keeps_size():
    features, targets = _data(29)
    solver = Solver(3, SMALL, Rng(30))
    solver.observe_task(features, targets)
    train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 2, Rng(31))
    restored = deserialize_solver(serialize_solver(solver))
    np.testing.assert_array_equal(predict(restored, features), predict(solver, features))
    assert restored.optimizer.step_count == solver.optimizer.step_count

    size = solver_bytes(solver)
    train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 2, Rng(32))
    assert solver_bytes(solver) == size


def test_solver_size_ignores_counter_digits():
    features, targets = _data(33)
    solver = Solver(3, SMALL, Rng(34))
    solver.observe_task(features, targets)
    train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 1, Rng(35))
    sizes = set()
    for step_count, tasks_seen in [(9, 1), (10, 12), (99_999, 3), (100_000, 120)]:
        solver.optimizer.step_count = step_count
        solver.standardizer.tasks_seen = tasks_seen
        data = serialize_solver(solver)
        sizes.add(len(data))
        restored = deserialize_solver(data)
        assert restored.optimizer.step_count == step_count
        assert restored.standardizer.tasks_seen == tasks_seen
    assert len(sizes) == 1


def test_epoch_loss_never_rises_across_five_epoch_windows():
    features, targets = _data(36, n=256)
    solver = Solver(3, SolverConfig(hidden_sizes=[16, 8], batch_size=32), Rng(37))
    solver.observe_task(features, targets)
    trace = train_epochs(solver, [WeightedBatch(features, targets, REAL, 1.0)], 40, Rng(38))
    windows = [np.mean(trace.epoch_losses[start : start + 5]) for start in range(0, 40, 5)]
    assert all(later <= earlier for earlier, later in zip(windows, windows[1:])), windows
