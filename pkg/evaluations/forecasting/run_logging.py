import os
import json
import time
from datetime import datetime
from typing import Dict, List, Any, Optional
from dataclasses import dataclass, asdict, field

from .settings import get_evaluation_config


@dataclass
class EpochRecord:
    """Log entry for one training epoch"""
    timestamp: str
    run_name: str
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    improved: bool
    duration: float


@dataclass
class RunEvent:
    """Log entry for anything else worth keeping (start, stop, restore, failure)"""
    timestamp: str
    run_name: str
    event_type: str  # 'start', 'early_stop', 'restore_best', 'gradcheck', 'error', ...
    message: str
    context: Dict[str, Any] = field(default_factory=dict)


class RunLogger:
    """Collects epoch and run events for a session and dumps them as JSON"""

    def __init__(self, log_dir: str = None):
        self.log_dir = log_dir or get_evaluation_config()["log_dir"]

        self.epochs: List[EpochRecord] = []
        self.events: List[RunEvent] = []

        self.session_id = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.start_time = time.time()

    def log_epoch(self, run_name: str, epoch: int, train_loss: float,
                  val_loss: Optional[float], improved: bool, duration: float) -> None:
        self.epochs.append(EpochRecord(
            timestamp=datetime.now().isoformat(),
            run_name=run_name,
            epoch=epoch,
            train_loss=float(train_loss),
            val_loss=None if val_loss is None else float(val_loss),
            improved=improved,
            duration=duration,
        ))

    def log_event(self, run_name: str, event_type: str, message: str,
                  context: Dict[str, Any] = None) -> None:
        self.events.append(RunEvent(
            timestamp=datetime.now().isoformat(),
            run_name=run_name,
            event_type=event_type,
            message=message,
            context=context or {},
        ))

    def reset(self) -> None:
        self.epochs.clear()
        self.events.clear()
        self.start_time = time.time()

    def save_logs(self) -> Dict[str, str]:
        """Save all logs to files"""
        session_dir = os.path.join(self.log_dir, f"session_{self.session_id}")
        os.makedirs(session_dir, exist_ok=True)

        epoch_file = os.path.join(session_dir, "epochs.json")
        with open(epoch_file, 'w') as f:
            json.dump([asdict(rec) for rec in self.epochs], f, indent=2)

        event_file = os.path.join(session_dir, "events.json")
        with open(event_file, 'w') as f:
            json.dump([asdict(ev) for ev in self.events], f, indent=2)

        summary_file = os.path.join(session_dir, "session_summary.json")
        with open(summary_file, 'w') as f:
            json.dump(self.get_session_summary(), f, indent=2)

        return {
            "session_dir": session_dir,
            "epochs": epoch_file,
            "events": event_file,
            "summary": summary_file,
        }

    def get_session_summary(self) -> Dict[str, Any]:
        """Get summary statistics for the session"""
        epochs_by_run: Dict[str, int] = {}
        best_val_by_run: Dict[str, float] = {}
        for rec in self.epochs:
            epochs_by_run[rec.run_name] = epochs_by_run.get(rec.run_name, 0) + 1
            if rec.val_loss is not None:
                best = best_val_by_run.get(rec.run_name)
                if best is None or rec.val_loss < best:
                    best_val_by_run[rec.run_name] = rec.val_loss

        events_by_type: Dict[str, int] = {}
        for ev in self.events:
            events_by_type[ev.event_type] = events_by_type.get(ev.event_type, 0) + 1

        return {
            "session_id": self.session_id,
            "total_duration": time.time() - self.start_time,
            "training_statistics": {
                "total_epochs": len(self.epochs),
                "total_training_time": sum(rec.duration for rec in self.epochs),
                "epochs_by_run": epochs_by_run,
                "best_val_by_run": best_val_by_run,
            },
            "event_statistics": {
                "total_events": len(self.events),
                "events_by_type": events_by_type,
            },
        }


# Global logger instance
_global_logger = None


def get_logger() -> RunLogger:
    """Get or create global logger instance"""
    global _global_logger
    if _global_logger is None:
        _global_logger = RunLogger()
    return _global_logger
