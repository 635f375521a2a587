"""Experiment registry: one ExperimentRun row per CLI invocation plus its scalar metrics."""
from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from datetime import datetime

from ..errors import NeurosocError
from ..extensions import db
from ..models import ExperimentRun, RunMetric

logger = logging.getLogger(__name__)


class RunHandle:
    def __init__(self, run: ExperimentRun):
        self.run = run
        self.summary: dict = {}
        self.output_path: str | None = None

    def finish(self, summary: dict, output_path=None) -> None:
        self.summary = summary
        if output_path is not None:
            self.output_path = str(output_path)


def _scalars(summary: dict, prefix: str = ""):
    for key, value in summary.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _scalars(value, f"{name}.")
        elif isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
            yield name, float(value)


@contextmanager
def record_run(command: str, params: dict, seed: int = 0):
    """Register a run; status and metrics are written when the block exits."""
    run = ExperimentRun(command=command, params=params, seed=seed, status='running')
    db.session.add(run)
    db.session.commit()
    handle = RunHandle(run)
    try:
        yield handle
    except NeurosocError as e:
        run.status = 'failed'
        run.error_code = e.code
        run.error_message = e.message
        run.finished_at = datetime.utcnow()
        db.session.commit()
        raise
    except Exception as e:
        run.status = 'failed'
        run.error_code = 'runtime_error'
        run.error_message = str(e)
        run.finished_at = datetime.utcnow()
        db.session.commit()
        raise
    run.status = 'finished'
    run.summary = handle.summary
    run.output_path = handle.output_path
    run.finished_at = datetime.utcnow()
    for name, value in _scalars(handle.summary):
        run.metrics.append(RunMetric(name=name[:64], value=value))
    db.session.commit()
    logger.info("Run %d (%s) finished", run.id, command)


def run_payload(run: ExperimentRun, with_metrics: bool = False) -> dict:
    out = {
        "id": run.id,
        "command": run.command,
        "status": run.status,
        "seed": run.seed,
        "output_path": run.output_path,
        "started_at": run.started_at.isoformat() if run.started_at else None,
        "finished_at": run.finished_at.isoformat() if run.finished_at else None,
    }
    if run.status == 'failed':
        out["error"] = {"code": run.error_code, "message": run.error_message}
    if with_metrics:
        out["params"] = run.params or {}
        out["summary"] = run.summary or {}
        out["metrics"] = {m.name: m.value for m in run.metrics}
    return out
