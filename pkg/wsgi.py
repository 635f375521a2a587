"""gunicorn entry (`gunicorn wsgi:app`); `python wsgi.py` serves the run registry locally."""
import os

from neurosoc import create_app

app = create_app()

if __name__ == "__main__":
    app.logger.info("Run registry up; results under %s", app.config["NEUROSOC_RESULTS_DIR"])
    app.run(host=os.getenv("HOST", "127.0.0.1"), port=int(os.getenv("PORT", "5001")))
