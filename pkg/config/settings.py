import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


class Settings:
    """Application settings"""

    # Reproducibility
    # Global seed fallback when neither flags nor a scenario file name seeds
    SEED: Optional[int] = _env_int("REPLAYFORGE_SEED", None)

    # Replay
    ALPHA: float = _env_float("REPLAYFORGE_ALPHA", 0.5)
    REPLAY_POLICY: str = os.getenv("REPLAYFORGE_REPLAY_POLICY", "match-current")

    # Scenario
    SAMPLES_PER_TASK: int = _env_int("REPLAYFORGE_SAMPLES_PER_TASK", 2000)
    TRAIN_FRACTION: float = 0.7
    DEFAULT_SEEDS: list = [1, 2, 3, 4, 5]

    # Evaluation
    TAIL_PERCENTILE: float = _env_float("REPLAYFORGE_TAIL_PERCENTILE", 90.0)

    # Output
    OUTPUT_DIR: str = os.getenv("REPLAYFORGE_OUTPUT_DIR", "runs")
    LOG_LEVEL: str = os.getenv("REPLAYFORGE_LOG_LEVEL", "INFO")
    JOBS: int = _env_int("REPLAYFORGE_JOBS", 1)

    # Optional epoch overrides for every method (None = model default)
    SOLVER_EPOCHS: Optional[int] = _env_int("REPLAYFORGE_SOLVER_EPOCHS", None)
    GENERATOR_EPOCHS: Optional[int] = _env_int("REPLAYFORGE_GENERATOR_EPOCHS", None)
    # "full" keeps model defaults; "benchmark" is the reduced budget for acceptance sweeps
    PROFILE: str = os.getenv("REPLAYFORGE_PROFILE", "full")

    def default_seeds(self) -> list:
        """Seeds used when neither flags nor a scenario file name any"""
        seed = _env_int("REPLAYFORGE_SEED", self.SEED)
        return [seed] if seed is not None else list(self.DEFAULT_SEEDS)


settings = Settings()
