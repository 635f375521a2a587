from __future__ import annotations

from pathlib import Path

from flask import current_app

from .extensions import db


def bootstrap_if_needed():
    app = current_app
    if not app.config.get("AUTO_BOOTSTRAP", False):
        return

    # Ensure tables exist
    try:
        db.create_all()
    except Exception:
        return

    created = []
    for key in ("NEUROSOC_DATA_DIR", "NEUROSOC_RESULTS_DIR"):
        path = Path(app.config.get(key) or ".")
        if not path.exists():
            path.mkdir(parents=True, exist_ok=True)
            created.append(str(path))
    if created:
        app.logger.info("Bootstrap completed: created %s", ", ".join("'%s'" % p for p in created))
