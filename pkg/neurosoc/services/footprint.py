"""Memory-footprint calculator for sparse connectivity and spike-array vs AER buffering."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

from ..errors import ContractViolation


@dataclass(frozen=True)
class FootprintQuery:
    """X pre-synaptic neurons, n of them connected, m post neurons, w-bit weights."""

    X: int
    n: int
    m: int
    w: int

    def __post_init__(self):
        if min(self.X, self.m, self.w) < 1 or self.n < 0:
            raise ContractViolation("footprint query needs X, m, w >= 1 and n >= 0")
        if self.n > self.X:
            raise ContractViolation(f"n={self.n} exceeds X={self.X}")

    @property
    def s(self) -> float:
        return self.n / self.X


@dataclass(frozen=True)
class BitCount:
    dense: int
    sparse: int

    @property
    def saving(self) -> Fraction:
        return Fraction(self.dense - self.sparse, self.dense)


def sparsity_saving_ratio(q: FootprintQuery) -> float:
    return 1 - (q.m * q.w + q.X) * q.s / (q.m * q.w)


def sparsity_saving_exact(q: FootprintQuery) -> Fraction:
    return 1 - Fraction((q.m * q.w + q.X) * q.n, q.X * q.m * q.w)


def saving_coefficient(m: int, X: int, w: int) -> float:
    """The slope c in `ratio = 1 - c * s`."""
    return (m * w + X) / (m * w)


def count_bits(q: FootprintQuery) -> BitCount:
    """Bit-by-bit accounting of both storage schemes.

    Dense keeps a w-bit weight for every (pre, post) pair. Sparse keeps the weight rows
    of the n connected pre-neurons plus an X-bit selection vector per stored row.
    """
    dense = sum(q.w for _pre in range(q.X) for _post in range(q.m))
    weights = sum(q.w for _pre in range(q.n) for _post in range(q.m))
    selects = sum(1 for _row in range(q.n) for _bit in range(q.X))
    return BitCount(dense=dense, sparse=weights + selects)


def sparsity_break_even(m: int, w: int) -> float:
    """Largest connected count that still saves memory when X is large: n < m*w/2."""
    if m < 1 or w < 1:
        raise ContractViolation("m and w must be positive")
    return m * w / 2


def s_max(m: int, X: int, w: int) -> float:
    if min(m, X, w) < 1:
        raise ContractViolation("m, X and w must be positive")
    return m * w / (m * w + X)


@dataclass(frozen=True)
class AerComparison:
    n: int
    X: int
    pipelined: bool
    aer_bits: int
    array_bits: int
    aer_overflow_at: int
    crossover: float

    @property
    def array_smaller(self) -> bool:
        return self.array_bits < self.aer_bits

    def to_dict(self) -> dict:
        return {**asdict(self), "array_smaller": self.array_smaller}


def address_bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def aer_vs_array_footprint(n: int, X: int, pipelined: bool = False) -> AerComparison:
    """Buffer cost of keeping X AER events for n neurons vs one n-bit spike array.

    The AER buffer must be sized for X = n events to never overflow; the array has no
    overflow condition. Pipelining double-buffers both.
    """
    if n < 1 or X < 0:
        raise ContractViolation("need n >= 1 and X >= 0")
    factor = 2 if pipelined else 1
    bits = address_bits(n)
    return AerComparison(
        n=n,
        X=X,
        pipelined=pipelined,
        aer_bits=factor * X * bits,
        array_bits=factor * n,
        aer_overflow_at=n,
        crossover=n / bits,
    )


def ni_lut_footprint(n_pes: int, n_neurons: int = 256, cam_entries: int = 0, pe_bits: int = 9, neuron_bits: int = 8) -> dict:
    """Bits held by one NI: PE LUT, neuron LUT and an optional CAM (tag + slot per entry)."""
    if n_pes < 1 or n_neurons < 1 or cam_entries < 0:
        raise ContractViolation("LUT sizes must be positive")
    slot_bits = address_bits(n_neurons)
    pe_lut = n_pes * slot_bits
    neuron_lut = n_neurons * slot_bits
    cam = cam_entries * (pe_bits + neuron_bits + slot_bits)
    return {"pe_lut": pe_lut, "neuron_lut": neuron_lut, "cam": cam, "total": pe_lut + neuron_lut + cam}


def sram_bank_count(n_post: int = 256, w_bits: int = 8, word_bits: int = 64) -> int:
    """Per-neuron weight SRAMs merged into word-wide banks sharing one read address."""
    if w_bits > word_bits or min(n_post, w_bits) < 1:
        raise ContractViolation("weight must fit a memory word")
    return -(-n_post // (word_bits // w_bits))


def footprint_report(q: FootprintQuery) -> dict:
    return {
        "query": {**asdict(q), "s": q.s},
        "saving_ratio": sparsity_saving_ratio(q),
        "coefficient": math.floor(saving_coefficient(q.m, q.X, q.w) * 1000) / 1000,
        "n_max": sparsity_break_even(q.m, q.w),
        "s_max": s_max(q.m, q.X, q.w),
        "aer": aer_vs_array_footprint(q.X, q.n).to_dict(),
        "aer_pipelined": aer_vs_array_footprint(q.X, q.n, pipelined=True).to_dict(),
        "sram_banks": sram_bank_count(q.m, q.w),
    }
