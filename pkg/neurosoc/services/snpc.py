"""Spiking neuro-processing core: spike-array decoder, weight SRAM, neuron bank.

Per time step the decoder pops the lowest set bit of the input spike array, the weight
row of that pre-synaptic neuron is read and delivered to every neuron, the fixed
negative recurrent crossbar is applied for the previous step's output spikes, and the
neurons run their end-of-step update.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import ContractViolation, DatasetError
from .neuron import NeuronBank, NeuronParams, ResetMode
from .numerics import ACCUMULATOR_BITS, FixedPoint, bounds, quantize

logger = logging.getLogger(__name__)

MAX_NEURONS = 256
WORD_BITS = 64
WEIGHT_MAGIC = b"SNPW"
THETA_MAGIC = b"THTA"
_HEADER = struct.Struct("<4sIIBB")


@dataclass(frozen=True)
class SpikeArray:
    bits: int
    width: int

    def __post_init__(self):
        if self.width <= 0:
            raise ContractViolation("spike array width must be positive")
        if self.bits < 0 or self.bits >> self.width:
            raise ContractViolation(f"bits do not fit in width {self.width}")

    @classmethod
    def zeros(cls, width: int) -> "SpikeArray":
        return cls(0, width)

    @classmethod
    def from_indices(cls, indices: Iterable[int], width: int) -> "SpikeArray":
        bits = 0
        for i in indices:
            if not 0 <= i < width:
                raise ContractViolation(f"index {i} outside width {width}")
            bits |= 1 << i
        return cls(bits, width)

    @classmethod
    def from_bools(cls, flags) -> "SpikeArray":
        flags = np.asarray(flags, dtype=bool).ravel()
        packed = np.packbits(flags, bitorder="little").tobytes()
        return cls(int.from_bytes(packed, "little"), flags.size)

    @classmethod
    def concat(cls, parts: Iterable["SpikeArray"]) -> "SpikeArray":
        bits, width = 0, 0
        for part in parts:
            bits |= part.bits << width
            width += part.width
        return cls(bits, width)

    def to_bools(self) -> np.ndarray:
        raw = self.bits.to_bytes((self.width + 7) // 8, "little")
        return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[: self.width].astype(bool)

    def slice(self, start: int, stop: int) -> "SpikeArray":
        if not 0 <= start < stop <= self.width:
            raise ContractViolation(f"bad slice [{start}, {stop}) of width {self.width}")
        return SpikeArray((self.bits >> start) & ((1 << (stop - start)) - 1), stop - start)

    def indices(self) -> list[int]:
        out = []
        remaining = self
        while (nxt := decode_next(remaining)) is not None:
            index, remaining = nxt
            out.append(index)
        return out

    def count(self) -> int:
        return bin(self.bits).count("1")

    def test(self, index: int) -> bool:
        return bool((self.bits >> index) & 1)

    def __or__(self, other: "SpikeArray") -> "SpikeArray":
        if other.width != self.width:
            raise ContractViolation("spike array widths differ")
        return SpikeArray(self.bits | other.bits, self.width)

    def __bool__(self) -> bool:
        return self.bits != 0


def decode_next(spikes: SpikeArray) -> tuple[int, SpikeArray] | None:
    """Pop the least-index one-hot bit; the one-hot value is XORed out of the array."""
    if not spikes.bits:
        return None
    one_hot = spikes.bits & -spikes.bits
    return one_hot.bit_length() - 1, SpikeArray(spikes.bits ^ one_hot, spikes.width)


class WeightMemory:
    """Weight SRAM: n_pre rows of n_post w-bit weights packed `weights_per_word` to a word.

    Rows share one read address, so the n_post per-neuron SRAMs merge into
    ceil(n_post / weights_per_word) banks of 64-bit words.
    """

    def __init__(self, n_pre: int, n_post: int, w_bits: int = 8, frac_bits: int = 7, weights_per_word: int = 8):
        if weights_per_word < 1 or weights_per_word * w_bits > WORD_BITS:
            raise ContractViolation(f"{weights_per_word} x {w_bits}-bit weights do not fit a {WORD_BITS}-bit word")
        self.n_pre = n_pre
        self.n_post = n_post
        self.w_bits = w_bits
        self.frac_bits = frac_bits
        self.weights_per_word = weights_per_word
        self.n_banks = -(-n_post // weights_per_word)
        self.words = np.zeros((n_pre, self.n_banks), dtype=np.uint64)
        self._mask = (1 << w_bits) - 1
        self._shifts = np.arange(weights_per_word, dtype=np.uint64) * np.uint64(w_bits)

    fixed = True

    @property
    def w_range(self) -> tuple[int, int]:
        return bounds(self.w_bits)

    @property
    def size(self) -> int:
        return self.n_pre * self.n_post

    def _pack(self, raw: np.ndarray) -> np.ndarray:
        rows = raw.shape[0]
        padded = np.zeros((rows, self.n_banks * self.weights_per_word), dtype=np.int64)
        padded[:, : self.n_post] = raw
        fields = (padded & self._mask).astype(np.uint64).reshape(rows, self.n_banks, self.weights_per_word)
        return np.bitwise_or.reduce(fields << self._shifts, axis=2)

    def _unpack(self, words: np.ndarray) -> np.ndarray:
        fields = ((words[..., None] >> self._shifts) & np.uint64(self._mask)).astype(np.int64)
        fields = np.where(fields > self._mask >> 1, fields - (self._mask + 1), fields)
        return fields.reshape(words.shape[0], -1)[:, : self.n_post]

    def read_rows(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            return np.zeros((0, self.n_post), dtype=np.int64)
        return self._unpack(self.words[idx])

    def write_rows(self, indices, raw) -> None:
        raw = np.asarray(raw, dtype=np.int64)
        lo, hi = self.w_range
        if raw.size and (raw.min() < lo or raw.max() > hi):
            raise ContractViolation(f"weights outside {self.w_bits}-bit range")
        self.words[np.asarray(indices, dtype=np.int64)] = self._pack(raw.reshape(-1, self.n_post))

    def to_table(self) -> np.ndarray:
        return self.read_rows(np.arange(self.n_pre))

    def load_table(self, table) -> None:
        table = np.asarray(table)
        if table.shape != (self.n_pre, self.n_post):
            raise ContractViolation(f"table shape {table.shape} != {(self.n_pre, self.n_post)}")
        self.write_rows(np.arange(self.n_pre), table)

    def read_word(self, position: int) -> int:
        row, col = divmod(position, self.n_post)
        return int(self.read_rows([row])[0, col])

    def write_word(self, position: int, raw: int) -> None:
        row, col = divmod(position, self.n_post)
        values = self.read_rows([row])
        values[0, col] = raw
        self.write_rows([row], values)

    def burst_read(self) -> Iterator[int]:
        """Serial read-out, row-major by pre-synaptic index."""
        for row in range(self.n_pre):
            yield from (int(x) for x in self.read_rows([row])[0])

    def burst_write(self, values: Iterable[int]) -> int:
        """Serial write from position 0; returns the number of weights written."""
        count = 0
        for count, value in enumerate(values, start=1):
            if count > self.size:
                raise ContractViolation("burst write past the end of weight memory")
            self.write_word(count - 1, int(value))
        return count


class FloatWeightMemory:
    """Real-valued weight storage for the floating-point datapath."""

    fixed = False
    w_bits = None
    frac_bits = None

    def __init__(self, n_pre: int, n_post: int):
        self.n_pre = n_pre
        self.n_post = n_post
        self.values = np.zeros((n_pre, n_post), dtype=np.float64)

    @property
    def size(self) -> int:
        return self.n_pre * self.n_post

    def read_rows(self, indices) -> np.ndarray:
        return self.values[np.asarray(indices, dtype=np.int64)]

    def write_rows(self, indices, values) -> None:
        self.values[np.asarray(indices, dtype=np.int64)] = np.asarray(values, dtype=np.float64).reshape(-1, self.n_post)

    def to_table(self) -> np.ndarray:
        return self.values.copy()

    def load_table(self, table) -> None:
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (self.n_pre, self.n_post):
            raise ContractViolation(f"table shape {table.shape} != {(self.n_pre, self.n_post)}")
        self.values = table.copy()


@dataclass(frozen=True)
class RecurrentConfig:
    enabled: bool = False
    w_inh: FixedPoint = field(default_factory=lambda: FixedPoint(-64, 7, 16))
    self_connect: bool = False

    def __post_init__(self):
        if self.enabled and self.w_inh.raw > 0:
            raise ContractViolation("recurrent weight must be <= 0")


@dataclass(frozen=True)
class CoreConfig:
    """Per-core sizes and neuron parameters, in value units.

    `frac_bits=None` selects the floating-point datapath.
    """

    n_pre: int = 256
    n_post: int = MAX_NEURONS
    w_bits: int = 8
    frac_bits: int | None = 7
    acc_bits: int = ACCUMULATOR_BITS
    weights_per_word: int = 8
    threshold: float = 1.0
    leak: float = 0.0
    v_rest: float = 0.0
    v_min: float = 0.0
    refrac_len: int = 0
    reset_mode: ResetMode = ResetMode.TO_REST
    recurrent: RecurrentConfig = field(default_factory=RecurrentConfig)

    def __post_init__(self):
        if self.n_pre < 1 or not 1 <= self.n_post <= MAX_NEURONS:
            raise ContractViolation(f"core needs n_pre >= 1 and 1 <= n_post <= {MAX_NEURONS}")
        if self.frac_bits is not None and self.frac_bits >= self.w_bits:
            raise ContractViolation("frac_bits must be smaller than w_bits")

    @property
    def fixed(self) -> bool:
        return self.frac_bits is not None

    def neuron_params(self) -> NeuronParams:
        if not self.fixed:
            raise ContractViolation("neuron params are fixed-point only")
        return NeuronParams.from_values(
            self.threshold,
            self.leak,
            frac_bits=self.frac_bits,
            total_bits=self.acc_bits,
            v_rest=self.v_rest,
            v_min=self.v_min,
            refrac_len=self.refrac_len,
            reset_mode=self.reset_mode,
        )

    def inhibition(self) -> float:
        """Recurrent weight in datapath units (raw for fixed, value for float)."""
        w = self.recurrent.w_inh
        if not self.fixed:
            return w.value
        if w.frac_bits == self.frac_bits:
            return w.raw
        return quantize(w.value, self.frac_bits, self.acc_bits).raw


class Snpc:
    def __init__(self, config: CoreConfig):
        self.config = config
        if config.fixed:
            self.memory = WeightMemory(config.n_pre, config.n_post, config.w_bits, config.frac_bits, config.weights_per_word)
            self.neurons = NeuronBank.from_params(config.neuron_params(), config.n_post, config.acc_bits)
        else:
            self.memory = FloatWeightMemory(config.n_pre, config.n_post)
            self.neurons = NeuronBank(
                shape=config.n_post,
                threshold=config.threshold,
                leak=config.leak,
                v_rest=config.v_rest,
                v_min=config.v_min,
                refrac_len=config.refrac_len,
                reset_mode=config.reset_mode,
                acc_bits=None,
            )
        self.w_inh = config.inhibition()
        self.last_output = SpikeArray.zeros(config.n_post)
        self.cycles = 0
        self.steps = 0

    @property
    def n_pre(self) -> int:
        return self.config.n_pre

    @property
    def n_post(self) -> int:
        return self.config.n_post

    def reset(self) -> None:
        """Clear potentials and the recurrent feedback between samples; theta is kept."""
        self.neurons.reset_potentials()
        self.last_output = SpikeArray.zeros(self.n_post)

    def step(self, input_spikes: SpikeArray) -> SpikeArray:
        if input_spikes.width != self.n_pre:
            raise ContractViolation(f"input width {input_spikes.width} != core n_pre {self.n_pre}")
        indices = input_spikes.indices()
        self.cycles += len(indices)
        rows = self.memory.read_rows(indices)
        feedback = self._feedback()
        self._accumulate(rows, feedback)
        out = SpikeArray.from_bools(self.neurons.end_of_step())
        self.last_output = out
        self.steps += 1
        return out

    def _feedback(self) -> list[int]:
        if not self.config.recurrent.enabled:
            return []
        return self.last_output.indices()

    def _accumulate(self, rows: np.ndarray, feedback: list[int]) -> None:
        """Weight rows in priority order, then one inhibitory drive per fed-back spike."""
        if not len(rows) and not feedback:
            return
        drives = [np.asarray(rows).reshape(-1, self.n_post)]
        for k in feedback:
            drive = np.full(self.n_post, self.w_inh)
            if not self.config.recurrent.self_connect:
                drive[k] = 0
            drives.append(drive[None, :])
        self.neurons.integrate_many(np.concatenate(drives))


def load_weights(core: Snpc, table) -> None:
    core.memory.load_table(table)


def read_weights(core: Snpc) -> np.ndarray:
    return core.memory.to_table()


@dataclass
class WeightFile:
    table: np.ndarray
    w_bits: int
    frac_bits: int
    theta: np.ndarray | None = None


def _weight_dtype(w_bits: int) -> str:
    if w_bits <= 8:
        return "<i1"
    if w_bits <= 16:
        return "<i2"
    if w_bits <= 32:
        return "<i4"
    raise ContractViolation(f"w_bits {w_bits} not supported by the weight file format")


def save_weight_file(path, table, w_bits: int, frac_bits: int, theta=None) -> Path:
    path = Path(path)
    table = np.asarray(table, dtype=np.int64)
    lo, hi = bounds(w_bits)
    if table.ndim != 2 or (table.size and (table.min() < lo or table.max() > hi)):
        raise ContractViolation("weight table must be 2-D and fit w_bits")
    n_pre, n_post = table.shape
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(WEIGHT_MAGIC, n_pre, n_post, w_bits, frac_bits))
        fh.write(table.astype(_weight_dtype(w_bits)).tobytes(order="C"))
        if theta is not None:
            theta = np.asarray(theta, dtype=np.int64)
            fh.write(THETA_MAGIC + struct.pack("<I", theta.size))
            fh.write(theta.astype("<i4").tobytes())
    logger.debug("wrote %dx%d weights to %s", n_pre, n_post, path)
    return path


def load_weight_file(path) -> WeightFile:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetError(f"{path}: truncated weight file header")
    magic, n_pre, n_post, w_bits, frac_bits = _HEADER.unpack_from(data)
    if magic != WEIGHT_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    dtype = np.dtype(_weight_dtype(w_bits))
    offset = _HEADER.size
    end = offset + n_pre * n_post * dtype.itemsize
    if len(data) < end:
        raise DatasetError(f"{path}: truncated weight section")
    table = np.frombuffer(data[offset:end], dtype=dtype).astype(np.int64).reshape(n_pre, n_post)
    theta = None
    if len(data) > end:
        if data[end:end + 4] != THETA_MAGIC or len(data) < end + 8:
            raise DatasetError(f"{path}: unexpected trailing data")
        (count,) = struct.unpack_from("<I", data, end + 4)
        start = end + 8
        if len(data) < start + 4 * count:
            raise DatasetError(f"{path}: truncated theta section")
        theta = np.frombuffer(data[start:start + 4 * count], dtype="<i4").astype(np.int64)
    return WeightFile(table=table, w_bits=w_bits, frac_bits=frac_bits, theta=theta)
