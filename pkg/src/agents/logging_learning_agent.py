import json
import logging
from collections import Counter
from datetime import datetime
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

EVENT_TYPES = ("task", "selection", "training", "system")


class LoggingLearningAgent:
    """
    Structured event log for continual-learning runs. Every event is kept
    in memory and echoed as one JSON line through the module logger.
    """

    def __init__(self):
        self.log_levels = {
            "task": logging.INFO,
            "selection": logging.INFO,
            "training": logging.DEBUG,
            "system": logging.INFO,
        }
        self.events: List[Dict] = []
        self._sequence = 0

    def _record(self, event_type: str, prefix: str, fields: Dict) -> str:
        self._sequence += 1
        log_id = f"{prefix}_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{self._sequence:05d}"
        log_entry = {
            "log_id": log_id,
            "timestamp": datetime.now().isoformat(),
            "type": event_type,
            **fields,
        }
        self.events.append(log_entry)
        logger.log(
            self.log_levels[event_type],
            f"{event_type.upper()}_LOG: {json.dumps(log_entry, default=_jsonable)}",
        )
        return log_id

    def log_task(self, task_data: Dict) -> str:
        """
        Log one learned task: index, UE type, pattern, real and replay rows,
        and the solver's final loss components.
        """
        return self._record(
            "task",
            "TASK",
            {
                "method": task_data.get("method"),
                "task": task_data.get("task"),
                "ue_type": task_data.get("ue_type"),
                "pattern": task_data.get("pattern"),
                "real_rows": task_data.get("real_rows"),
                "replay_rows": task_data.get("replay_rows", 0),
                "solver_loss": task_data.get("solver_loss"),
                "metadata": task_data.get("metadata", {}),
            },
        )

    def log_selection(self, selection_data: Dict) -> str:
        return self._record(
            "selection",
            "SEL",
            {
                "task": selection_data.get("task"),
                "relevance": selection_data.get("relevance", []),
                "selected_generator": selection_data.get("selected_generator"),
                "zero_relevance": selection_data.get("zero_relevance", False),
            },
        )

    def log_training(self, training_data: Dict) -> str:
        return self._record(
            "training",
            "TRN",
            {
                "component": training_data.get("component"),
                "task": training_data.get("task"),
                "epochs": training_data.get("epochs"),
                "final_loss": training_data.get("final_loss"),
                "metadata": training_data.get("metadata", {}),
            },
        )

    def log_system_event(self, event_data: Dict) -> str:
        """
        Log run lifecycle events (start, end, checkpoint writes) and errors.
        """
        return self._record(
            "system",
            "SYS",
            {
                "event_name": event_data.get("event_name"),
                "component": event_data.get("component"),
                "severity": event_data.get("severity", "info"),
                "message": event_data.get("message"),
                "metadata": event_data.get("metadata", {}),
            },
        )

    def history(self, event_type: Optional[str] = None) -> List[Dict]:
        if event_type is None:
            return list(self.events)
        if event_type not in EVENT_TYPES:
            raise ValueError(f"Unknown event type {event_type!r}; valid: {list(EVENT_TYPES)}")
        return [event for event in self.events if event["type"] == event_type]

    def summarize(self) -> Dict[str, int]:
        counts = Counter(event["type"] for event in self.events)
        return {event_type: counts.get(event_type, 0) for event_type in EVENT_TYPES}


def _jsonable(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "value"):
        return value.value
    return str(value)
