from __future__ import annotations

from flask import Blueprint, jsonify, request

from ..extensions import db
from ..models import ExperimentRun
from ..services.runs import run_payload

bp = Blueprint("runs", __name__)


@bp.get("/runs")
def list_runs():
    q = db.session.query(ExperimentRun)
    command = request.args.get("command")
    if command:
        q = q.filter(ExperimentRun.command == command)
    status = request.args.get("status")
    if status:
        q = q.filter(ExperimentRun.status == status)
    try:
        limit = min(int(request.args.get("limit", "50")), 500)
    except ValueError:
        return jsonify({"error": {"code": "bad_request", "message": "Invalid limit"}}), 400
    runs = q.order_by(ExperimentRun.id.desc()).limit(limit).all()
    return jsonify([run_payload(r) for r in runs])


@bp.get("/runs/<int:run_id>")
def get_run(run_id: int):
    run = db.session.get(ExperimentRun, run_id)
    if not run:
        return jsonify({"error": {"code": "not_found", "message": "Run not found"}}), 404
    return jsonify(run_payload(run, with_metrics=True))
