"""
Task-sequence construction for the eight benchmark cases and the
deterministic synthetic one-way-delay (OWD) data generator that stands in
for testbed measurements.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.agents.scholar_agent import ConfigVector
from src.core.numcore import Rng
from src.core.tabular import ColumnSpec, Schema, TabularDataset
from src.models import ColumnKind, Pattern, UEType
from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

GROUP1_S_TO_M = [1, 1, 3, 3, 2, 2, 4, 4, 6, 6, 5, 5]
GROUP1_M_TO_S = [5, 5, 6, 6, 4, 4, 2, 2, 3, 3, 1, 1]

# case_id -> (UE row, P row)
CASE_TABLE: Dict[int, tuple] = {
    1: ([2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1], GROUP1_S_TO_M),
    2: ([1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2], GROUP1_M_TO_S),
    3: ([2, 3, 2, 3, 2, 3, 2, 3, 2, 3, 2, 3], GROUP1_S_TO_M),
    4: ([3, 2, 3, 2, 3, 2, 3, 2, 3, 2, 3, 2], GROUP1_M_TO_S),
    5: ([3, 1, 3, 1, 3, 1, 3, 1, 3, 1, 3, 1], GROUP1_S_TO_M),
    6: ([1, 3, 1, 3, 1, 3, 1, 3, 1, 3, 1, 3], GROUP1_M_TO_S),
    7: (
        [2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1],
        [1, 1, 1, 3, 3, 3, 2, 2, 2, 4, 4, 4, 6, 6, 6, 5, 5, 5],
    ),
    8: (
        [1, 3, 2, 1, 3, 2, 1, 3, 2, 1, 3, 2, 1, 3, 2, 1, 3, 2],
        [5, 5, 5, 6, 6, 6, 4, 4, 4, 2, 2, 2, 3, 3, 3, 1, 1, 1],
    ),
}

# Recipe constants of the synthetic OWD generator (single source of truth)
RECIPE = {
    "loads_mbps": [0, 10, 20, 30, 40, 50, 60],
    "max_load": 60.0,
    "stationary_quality": {Pattern.P1: 0.9, Pattern.P2: 0.6, Pattern.P3: 0.3},
    "base_owd_ms": {UEType.UE1: 4.0, UEType.UE2: 7.0, UEType.UE3: 11.0},
    "load_coefficient": 0.08,  # a1 in OWD = base + a1 * load / (q + 0.1)
    "quality_offset": 0.1,
    "noise_sigma": 0.05,
    "spike_base_probability": 0.02,
    "spike_load_probability": 0.03,
    "spike_lognormal_mu": 2.0,
    "spike_lognormal_sigma": 0.8,
}

FEATURE_NAMES = [
    "sinr_db",
    "rsrp_dbm",
    "cqi",
    "ul_mcs",
    "ul_bler",
    "prb_utilization",
    "harq_retx",
    "bsr_bytes",
    "sched_grants",
    "timing_advance",
    "beam_switches",
    "ul_throughput",
    "pusch_power",
    "buffer_delay",
    "rank_indicator",
    "pathloss_db",
]
LOAD_COLUMN = "ul_load"
TARGET_COLUMN = "owd_ms"

# Feature f_j = LOAD_WEIGHTS[j] * l + QUALITY_WEIGHTS[j] * q + UE_MIX[ue][j] * (1 + 0.5 l - 0.5 q) + noise,
# with l = load / 60.
LOAD_WEIGHTS = np.array(
    [-0.8, -0.3, -0.5, -0.6, 0.7, 1.2, 0.6, 1.5, 0.9, 0.1, 0.2, 1.1, 0.4, 1.3, -0.2, 0.3]
)
QUALITY_WEIGHTS = np.array(
    [2.0, 1.5, 1.8, 1.6, -1.2, -0.4, -0.9, -0.6, 0.5, -0.7, -1.0, 0.8, -1.4, -0.8, 1.1, -1.9]
)
UE_MIX = {
    UEType.UE1: np.array(
        [0.5, -0.2, 0.3, 0.8, -0.1, 0.2, 0.4, -0.3, 0.6, 0.1, -0.5, 0.7, 0.2, -0.4, 0.9, 0.0]
    ),
    UEType.UE2: np.array(
        [-0.6, 0.7, 0.1, -0.4, 0.5, -0.3, 0.9, 0.2, -0.2, 0.8, 0.3, -0.5, 0.6, 0.4, -0.1, 0.5]
    ),
    UEType.UE3: np.array(
        [0.2, 0.4, -0.7, 0.1, 0.9, 0.6, -0.4, 0.8, 0.3, -0.6, 0.7, 0.2, -0.8, 0.9, 0.4, -0.3]
    ),
}


@dataclass
class TaskCondition:
    task_id: int
    ue_type: UEType
    pattern: Pattern
    config_vector: ConfigVector
    dataset: TabularDataset
    ul_loads_mbps: Sequence[float] = tuple(RECIPE["loads_mbps"])

    @property
    def label(self) -> str:
        return f"T{self.task_id + 1}:{self.ue_type.value}/{self.pattern.value}"


@dataclass
class SequenceSpec:
    ue_row: List[int]
    p_row: List[int]
    samples_per_task: int
    seed: int
    case_id: Optional[int] = None

    @property
    def n_tasks(self) -> int:
        return len(self.ue_row)

    @property
    def config_width(self) -> int:
        """J: the largest UE index appearing in the sequence"""
        return sequence_dimension(self.ue_row)

    @property
    def default_k(self) -> List[int]:
        return [6, 12] if self.n_tasks >= 18 else [4, 8]

    @classmethod
    def for_case(cls, case_id: int, samples_per_task: int, seed: int) -> "SequenceSpec":
        if case_id not in CASE_TABLE:
            raise DomainError(f"Unknown case_id {case_id}; valid: {sorted(CASE_TABLE)}")
        ue_row, p_row = CASE_TABLE[case_id]
        return cls(list(ue_row), list(p_row), samples_per_task, seed, case_id)


def task_config_vector(ue_type: UEType, width: int) -> ConfigVector:
    """One-hot task configuration vector a over `width` UE types"""
    if not 0 <= ue_type.index < width:
        raise DomainError(f"{ue_type.value} does not fit a configuration vector of width {width}")
    entries = np.zeros(width)
    entries[ue_type.index] = 1.0
    return ConfigVector(entries, role="task")


def sequence_dimension(ue_row: Sequence[int]) -> int:
    return max(ue_row)


def task_schema() -> Schema:
    columns = [ColumnSpec(name=name, kind=ColumnKind.CONTINUOUS) for name in FEATURE_NAMES]
    columns.append(
        ColumnSpec(
            name=LOAD_COLUMN,
            kind=ColumnKind.DISCRETE,
            categories=[str(load) for load in RECIPE["loads_mbps"]],
        )
    )
    return Schema(columns=columns, target_column=TARGET_COLUMN)


def channel_quality(pattern: Pattern, progress: np.ndarray) -> np.ndarray:
    """
    Channel quality q along a pattern; `progress` in [0, 1) is the position
    along a moving trajectory and is ignored for stationary patterns.
    """
    if not pattern.is_moving:
        return np.full_like(progress, RECIPE["stationary_quality"][pattern])
    # positions 1 -> 2 -> 3 -> 1 map to quality 0.9 -> 0.6 -> 0.3 -> 0.9
    waypoints_t = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    waypoints_q = np.array([0.9, 0.6, 0.3, 0.9])
    if pattern == Pattern.P4:
        return 0.6 + 0.3 * np.sin(2.0 * np.pi * progress)
    linear = np.interp(progress, waypoints_t, waypoints_q)
    if pattern == Pattern.P5:
        return np.clip(linear + 0.08 * np.sin(12.0 * np.pi * progress), 0.2, 0.95)
    return linear


def synthesize_task_data(
    ue_type: UEType,
    pattern: Pattern,
    loads: Sequence[float],
    n: int,
    seed: int,
    suppress_spikes: bool = False,
) -> TabularDataset:
    """
    Deterministic synthetic task data: 16 continuous baseband-like metrics
    plus the discrete uplink load level, and the OWD target in ms.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = Rng(seed)
    load_values = np.asarray(loads, dtype=np.float64)
    load = load_values[rng.integers(0, len(load_values), n)]
    progress = rng.uniform(0.0, 1.0, n)
    quality = channel_quality(pattern, progress)

    scaled_load = (load / RECIPE["max_load"]).reshape(-1, 1)
    q = quality.reshape(-1, 1)
    mixing = UE_MIX[ue_type] * (1.0 + 0.5 * scaled_load - 0.5 * q)
    features = LOAD_WEIGHTS * scaled_load + QUALITY_WEIGHTS * q + mixing
    features = features + RECIPE["noise_sigma"] * rng.normal((n, len(FEATURE_NAMES)))

    owd = (
        RECIPE["base_owd_ms"][ue_type]
        + RECIPE["load_coefficient"] * load / (quality + RECIPE["quality_offset"])
        + RECIPE["noise_sigma"] * rng.normal(n)
    )
    spike_probability = (
        RECIPE["spike_base_probability"]
        + RECIPE["spike_load_probability"] * load / RECIPE["max_load"]
    )
    spikes = rng.random(n) < spike_probability
    excursions = rng.generator.lognormal(
        RECIPE["spike_lognormal_mu"], RECIPE["spike_lognormal_sigma"], n
    )
    if not suppress_spikes:
        owd = owd + np.where(spikes, excursions, 0.0)

    frame = pd.DataFrame(features, columns=FEATURE_NAMES)
    frame[LOAD_COLUMN] = [str(int(value)) for value in load]
    return TabularDataset(task_schema(), frame, owd)


def build_tasks(sequence: SequenceSpec) -> List[TaskCondition]:
    if len(sequence.ue_row) != len(sequence.p_row) or not sequence.ue_row:
        raise DomainError("UE and P rows must be non-empty and of equal length")
    width = sequence.config_width
    tasks = []
    for index, (ue_number, p_number) in enumerate(zip(sequence.ue_row, sequence.p_row)):
        ue_type = UEType.from_number(ue_number)
        pattern = Pattern.from_number(p_number)
        seed = int(np.random.SeedSequence([sequence.seed, index]).generate_state(1)[0])
        loads = tuple(float(load) for load in RECIPE["loads_mbps"])
        dataset = synthesize_task_data(ue_type, pattern, loads, sequence.samples_per_task, seed)
        tasks.append(
            TaskCondition(
                task_id=index,
                ue_type=ue_type,
                pattern=pattern,
                config_vector=task_config_vector(ue_type, width),
                dataset=dataset,
                ul_loads_mbps=loads,
            )
        )
    logger.info(
        f"Built sequence case={sequence.case_id} tasks={len(tasks)} J={width} "
        f"samples_per_task={sequence.samples_per_task}"
    )
    return tasks


def build_sequence(case_id: int, samples_per_task: int, seed: int) -> List[TaskCondition]:
    return build_tasks(SequenceSpec.for_case(case_id, samples_per_task, seed))
