from __future__ import annotations

import logging
from pathlib import Path

import requests

from ..errors import DatasetError
from .encoding import Sample, load_idx

logger = logging.getLogger(__name__)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def _locate(data_dir: Path, name: str) -> Path:
    # accept both the gzipped and the unpacked file
    for candidate in (data_dir / name, data_dir / name.removesuffix(".gz")):
        if candidate.exists():
            return candidate
    raise DatasetError(f"{name} not found under {data_dir}; run `fetch-mnist` first")


def mnist_available(data_dir) -> bool:
    try:
        for name in MNIST_FILES.values():
            _locate(Path(data_dir), name)
    except DatasetError:
        return False
    return True


def load_mnist(data_dir, split: str = "train", limit: int | None = None) -> list[Sample]:
    if split not in ("train", "test"):
        raise DatasetError(f"unknown split {split!r}")
    data_dir = Path(data_dir)
    return load_idx(
        _locate(data_dir, MNIST_FILES[f"{split}_images"]),
        _locate(data_dir, MNIST_FILES[f"{split}_labels"]),
        limit=limit,
    )


def fetch_mnist(data_dir, base_url: str, timeout: int = 60) -> list[Path]:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    fetched = []
    for name in MNIST_FILES.values():
        target = data_dir / name
        if target.exists():
            fetched.append(target)
            continue
        url = base_url.rstrip("/") + "/" + name
        try:
            resp = requests.get(url, timeout=timeout)
            resp.raise_for_status()
        except requests.RequestException as e:
            raise DatasetError(f"download of {url} failed: {e}") from e
        target.write_bytes(resp.content)
        logger.info("fetched %s (%d bytes)", url, len(resp.content))
        fetched.append(target)
    return fetched
