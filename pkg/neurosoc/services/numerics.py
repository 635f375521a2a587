"""Bit-exact fixed-point arithmetic for the neural datapath.

Values are stored as signed integers (`raw`) with `frac_bits` fractional bits inside a
`total_bits` wide two's-complement register. All arithmetic saturates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation

MAX_FRAC_BITS = 15
WEIGHT_BITS = 8
ACCUMULATOR_BITS = 24


def bounds(total_bits: int) -> tuple[int, int]:
    half = 1 << (total_bits - 1)
    return -half, half - 1


def saturate(raw: int, total_bits: int) -> int:
    lo, hi = bounds(total_bits)
    return lo if raw < lo else hi if raw > hi else raw


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class FixedPoint:
    raw: int
    frac_bits: int = 7
    total_bits: int = WEIGHT_BITS

    def __post_init__(self):
        if not 0 <= self.frac_bits <= MAX_FRAC_BITS:
            raise ContractViolation(f"frac_bits must be in 0..{MAX_FRAC_BITS}, got {self.frac_bits}")
        if self.frac_bits >= self.total_bits:
            raise ContractViolation("frac_bits must be smaller than total_bits")
        lo, hi = bounds(self.total_bits)
        if not lo <= self.raw <= hi:
            raise ContractViolation(f"raw {self.raw} outside {self.total_bits}-bit range")

    @property
    def value(self) -> float:
        return self.raw / (1 << self.frac_bits)

    @classmethod
    def zero(cls, frac_bits: int = 7, total_bits: int = WEIGHT_BITS) -> "FixedPoint":
        return cls(0, frac_bits, total_bits)

    def widen(self, total_bits: int) -> "FixedPoint":
        return FixedPoint(saturate(self.raw, total_bits), self.frac_bits, total_bits)

    def __neg__(self) -> "FixedPoint":
        return FixedPoint(saturate(-self.raw, self.total_bits), self.frac_bits, self.total_bits)

    def __add__(self, other: "FixedPoint") -> "FixedPoint":
        return sat_add(self, other)

    def __sub__(self, other: "FixedPoint") -> "FixedPoint":
        return sat_sub(self, other)

    def __lt__(self, other: "FixedPoint") -> bool:
        _check_frac(self, other)
        return self.raw < other.raw

    def __le__(self, other: "FixedPoint") -> bool:
        _check_frac(self, other)
        return self.raw <= other.raw


def _check_frac(a: FixedPoint, b: FixedPoint) -> None:
    if a.frac_bits != b.frac_bits:
        raise ContractViolation(f"frac_bits mismatch: {a.frac_bits} != {b.frac_bits}")


def quantize(x: float, frac_bits: int = 7, total_bits: int = WEIGHT_BITS) -> FixedPoint:
    if frac_bits >= total_bits:
        raise ContractViolation("frac_bits must be smaller than total_bits")
    raw = round_half_away(x * (1 << frac_bits))
    return FixedPoint(saturate(raw, total_bits), frac_bits, total_bits)


def sat_add(a: FixedPoint, b: FixedPoint) -> FixedPoint:
    _check_frac(a, b)
    width = max(a.total_bits, b.total_bits)
    return FixedPoint(saturate(a.raw + b.raw, width), a.frac_bits, width)


def sat_sub(a: FixedPoint, b: FixedPoint) -> FixedPoint:
    _check_frac(a, b)
    width = max(a.total_bits, b.total_bits)
    return FixedPoint(saturate(a.raw - b.raw, width), a.frac_bits, width)


def scale_toward_zero(a: FixedPoint, factor: float) -> FixedPoint:
    """Multiply by a real factor, truncating the product toward zero."""
    return FixedPoint(saturate(int(a.raw * factor), a.total_bits), a.frac_bits, a.total_bits)


# -- array forms ------------------------------------------------------------------------

def quantize_array(x, frac_bits: int = 7, total_bits: int = WEIGHT_BITS) -> np.ndarray:
    if frac_bits >= total_bits:
        raise ContractViolation("frac_bits must be smaller than total_bits")
    scaled = np.asarray(x, dtype=np.float64) * float(1 << frac_bits)
    raw = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    lo, hi = bounds(total_bits)
    return np.clip(raw, lo, hi).astype(np.int64)


def saturate_array(raw, total_bits: int) -> np.ndarray:
    lo, hi = bounds(total_bits)
    return np.clip(np.asarray(raw, dtype=np.int64), lo, hi)


def dequantize_array(raw, frac_bits: int) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / float(1 << frac_bits)
