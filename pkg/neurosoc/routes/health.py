"""Liveness plus a glance at the run registry and the dataset directory."""
from flask import Blueprint, current_app, jsonify
from sqlalchemy import func
from sqlalchemy.exc import SQLAlchemyError

from ..extensions import db
from ..models import ExperimentRun
from ..services.datasets import mnist_available

bp = Blueprint("health", __name__)


@bp.get("/health")
def health():
    try:
        rows = (
            db.session.query(ExperimentRun.status, func.count(ExperimentRun.id))
            .group_by(ExperimentRun.status)
            .all()
        )
    except SQLAlchemyError:
        current_app.logger.exception("health: run registry unavailable")
        return jsonify({"ok": False, "registry": "unavailable"}), 503
    return jsonify({
        "ok": True,
        "runs": {status: count for status, count in rows},
        "mnist": mnist_available(current_app.config["NEUROSOC_DATA_DIR"]),
    }), 200
