import os
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except Exception:
    pass

from .errors import ConfigError


def _split_csv(val: str | None):
    if not val:
        return []
    return [x.strip() for x in val.split(",") if x.strip()]


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in ("1", "true", "yes")


def parse_bool(val) -> bool:
    if isinstance(val, bool):
        return val
    text = str(val).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {val!r}")


class Config:
    ENV = os.getenv("FLASK_ENV", "production")
    DEBUG = ENV != "production"
    TESTING = ENV == "test"

    SECRET_KEY = os.getenv("SECRET_KEY", "dev-secret-change-me")

    # Results registry
    DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///neurosoc.db")
    SQLALCHEMY_DATABASE_URI = DATABASE_URL
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Datasets and experiment outputs
    NEUROSOC_DATA_DIR = os.getenv("NEUROSOC_DATA_DIR", "./data/mnist")
    NEUROSOC_RESULTS_DIR = os.getenv("NEUROSOC_RESULTS_DIR", "./results")
    MNIST_BASE_URL = os.getenv("MNIST_BASE_URL", "https://storage.googleapis.com/cvdf-datasets/mnist/")

    NEUROSOC_SEED = int(os.getenv("NEUROSOC_SEED", "0"))
    # upper bound on cycles spent draining the mesh at one time-step barrier
    NOC_DRAIN_LIMIT = int(os.getenv("NOC_DRAIN_LIMIT", "100000"))

    # Variants evaluated by `eval-snn` when none are given
    DEFAULT_VARIANTS = _split_csv(os.getenv("DEFAULT_VARIANTS", "float,7,5,3,int"))

    # Dev convenience: auto create tables on startup for SQLite
    AUTO_CREATE_DB = _flag("AUTO_CREATE_DB", "true")

    # Bootstrap on first run: tables plus data/results directories
    AUTO_BOOTSTRAP = _flag("AUTO_BOOTSTRAP", "true")


def parse_key_values(text: str) -> dict[str, str]:
    """Parse the experiment file format.

    `key = value` per line, `#` comments, `[section]` headers prefixing the keys that
    follow as `section.key`, surrounding quotes stripped from values.
    """
    out: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key", line=lineno)
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[f"{section}.{key}" if section else key] = value
    return out


def load_experiment_file(path, overrides: dict[str, str] | None = None) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    values = parse_key_values(path.read_text(encoding="utf-8"))
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    return values
