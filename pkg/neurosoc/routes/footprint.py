from __future__ import annotations

from flask import Blueprint, jsonify, request

from ..services.footprint import FootprintQuery, footprint_report

bp = Blueprint("footprint", __name__)


@bp.get("/footprint")
def footprint():
    try:
        q = FootprintQuery(
            X=int(request.args.get("X", "786")),
            n=int(request.args.get("n", "0")),
            m=int(request.args.get("m", "256")),
            w=int(request.args.get("w", "8")),
        )
    except ValueError:
        return jsonify({"error": {"code": "bad_request", "message": "X, n, m and w must be integers"}}), 400
    return jsonify(footprint_report(q))
