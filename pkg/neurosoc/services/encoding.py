"""MNIST IDX ingestion and Poisson spike encoding."""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ContractViolation, DatasetError
from .snpc import SpikeArray

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
PIXEL_SCALE = 256.0
N_PIXELS = 784


@dataclass(frozen=True)
class Sample:
    pixels: np.ndarray
    label: int

    def __post_init__(self):
        if not 0 <= self.label <= 9:
            raise ContractViolation(f"label {self.label} outside 0..9")


@dataclass(frozen=True)
class EncoderParams:
    dt: float = 0.001
    n_steps: int = 350
    max_rate: float = 255.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.dt <= 0 or self.max_rate < 0:
            raise ContractViolation("encoder needs n_steps >= 1, dt > 0, max_rate >= 0")
        # pixels are < 1 after the /256 normalisation, so this bounds every probability
        if self.max_rate * self.dt > 1:
            raise ContractViolation(f"max_rate * dt = {self.max_rate * self.dt} exceeds 1")

    @property
    def p_max(self) -> float:
        return self.max_rate * self.dt


def _read(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx_images(path) -> np.ndarray:
    data = _read(path)
    if len(data) < 16:
        raise DatasetError(f"{path}: truncated image header")
    magic, count, rows, cols = struct.unpack_from(">IIII", data)
    if magic != IMAGE_MAGIC:
        raise DatasetError(f"{path}: bad image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise DatasetError(f"{path}: truncated, expected {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read(path)
    if len(data) < 8:
        raise DatasetError(f"{path}: truncated label header")
    magic, count = struct.unpack_from(">II", data)
    if magic != LABEL_MAGIC:
        raise DatasetError(f"{path}: bad label magic 0x{magic:08x}")
    if len(data) < 8 + count:
        raise DatasetError(f"{path}: truncated, expected {8 + count} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path, labels_path, limit: int | None = None) -> list[Sample]:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise DatasetError(f"{labels_path}: label {labels.max()} outside 0..9")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    pixels = images.astype(np.float64) / PIXEL_SCALE
    logger.info("loaded %d samples from %s", len(labels), images_path)
    return [Sample(pixels[i], int(labels[i])) for i in range(len(labels))]


def as_arrays(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, N_PIXELS)), np.zeros(0, dtype=np.int64)
    return np.stack([s.pixels for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


def sample_rng(seed: int, sample_index: int) -> np.random.Generator:
    """Independent PCG64 stream per sample, derived from the global seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(sample_index,))))


def poisson_raster(pixels, params: EncoderParams, sample_index: int = 0) -> np.ndarray:
    """Boolean raster (n_steps, n_pixels); bit t,i is Bernoulli(pixel_i * max_rate * dt)."""
    p = np.asarray(pixels, dtype=np.float64) * params.p_max
    rng = sample_rng(params.rng_seed, sample_index)
    return rng.random((params.n_steps, p.size)) < p


def poisson_encode(sample: Sample, params: EncoderParams, sample_index: int = 0) -> list[SpikeArray]:
    return [SpikeArray.from_bools(row) for row in poisson_raster(sample.pixels, params, sample_index)]
