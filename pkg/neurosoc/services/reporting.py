"""CSV outputs and gnuplot data blocks. Outputs contain no timestamps so reruns match byte for byte."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

from ..errors import DatasetError

CURVE_COLUMNS = ("step", "variant", "accuracy")
METRIC_COLUMNS = ("metric", "value")


def _write(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_curve_csv(path, rows: Iterable[tuple]) -> Path:
    return _write(path, CURVE_COLUMNS, rows)


def _flatten(metrics: dict, prefix: str = ""):
    for key in sorted(metrics):
        value = metrics[key]
        if isinstance(value, dict):
            yield from _flatten(value, f"{prefix}{key}.")
        else:
            yield f"{prefix}{key}", value


def write_metrics_csv(path, metrics: dict) -> Path:
    return _write(path, METRIC_COLUMNS, _flatten(metrics))


def read_curve_csv(path) -> dict[str, list[tuple[int, float]]]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    curves: dict[str, list[tuple[int, float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
            raise DatasetError(f"{path}: expected columns {','.join(CURVE_COLUMNS)}")
        for row in reader:
            curves.setdefault(row["variant"], []).append((int(row["step"]), float(row["accuracy"])))
    return curves


def gnuplot_blocks(curves: dict[str, list[tuple[int, float]]]) -> str:
    """One indexed data block per variant, separated by two blank lines (`plot ... index i`)."""
    out = io.StringIO()
    for i, (name, points) in enumerate(curves.items()):
        if i:
            out.write("\n\n")
        out.write(f"# index {i}: {name}\n# step accuracy\n")
        for step, acc in points:
            out.write(f"{step} {acc:.6f}\n")
    return out.getvalue()
