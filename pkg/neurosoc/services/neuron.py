"""LIF/IF neuron datapath.

Within a time step weighted inputs are accumulated (`integrate`); at the end of the
step the leak is subtracted, the potential is floored at `v_min`, compared against
`threshold_base + theta`, and a firing neuron is reset and enters its refractory
countdown (`end_of_step`). Leak subtraction happens before the threshold comparison.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractViolation
from .numerics import ACCUMULATOR_BITS, FixedPoint, bounds, quantize, saturate


class ResetMode(str, enum.Enum):
    TO_REST = "to_rest"
    BY_SUBTRACTION = "by_subtraction"


@dataclass(frozen=True)
class NeuronParams:
    threshold_base: FixedPoint
    leak: FixedPoint
    v_rest: FixedPoint
    v_min: FixedPoint
    refrac_len: int = 0
    reset_mode: ResetMode = ResetMode.TO_REST

    def __post_init__(self):
        fb = {self.threshold_base.frac_bits, self.leak.frac_bits, self.v_rest.frac_bits, self.v_min.frac_bits}
        if len(fb) != 1:
            raise ContractViolation("neuron parameters must share frac_bits")
        if self.threshold_base.raw <= self.v_rest.raw:
            raise ContractViolation("threshold_base must exceed v_rest")
        if self.v_rest.raw < self.v_min.raw:
            raise ContractViolation("v_rest must not be below v_min")
        if self.refrac_len < 0:
            raise ContractViolation("refrac_len must be >= 0")

    @property
    def frac_bits(self) -> int:
        return self.threshold_base.frac_bits

    @classmethod
    def from_values(
        cls,
        threshold: float,
        leak: float = 0.0,
        *,
        frac_bits: int = 7,
        total_bits: int = ACCUMULATOR_BITS,
        v_rest: float = 0.0,
        v_min: float = 0.0,
        refrac_len: int = 0,
        reset_mode: ResetMode = ResetMode.TO_REST,
    ) -> "NeuronParams":
        q = lambda x: quantize(x, frac_bits, total_bits)  # noqa: E731
        return cls(q(threshold), q(leak), q(v_rest), q(v_min), refrac_len, reset_mode)


@dataclass(frozen=True)
class NeuronState:
    v: FixedPoint
    theta: FixedPoint
    refrac_cnt: int = 0
    fired: bool = False

    @classmethod
    def initial(cls, params: NeuronParams, total_bits: int = ACCUMULATOR_BITS) -> "NeuronState":
        return cls(
            v=params.v_rest.widen(total_bits),
            theta=FixedPoint(0, params.frac_bits, total_bits),
        )


def integrate(state: NeuronState, weighted_input: FixedPoint) -> NeuronState:
    if state.refrac_cnt > 0:
        return state
    if weighted_input.frac_bits != state.v.frac_bits:
        raise ContractViolation("weighted input frac_bits must match the membrane potential")
    width = state.v.total_bits
    return replace(state, v=FixedPoint(saturate(state.v.raw + weighted_input.raw, width), state.v.frac_bits, width))


def end_of_step(state: NeuronState, params: NeuronParams) -> tuple[NeuronState, bool]:
    if state.v.frac_bits != params.frac_bits:
        raise ContractViolation("state and params frac_bits differ")
    width = state.v.total_bits
    v = max(saturate(state.v.raw - params.leak.raw, width), params.v_min.raw)
    threshold = saturate(params.threshold_base.raw + state.theta.raw, width)
    spike = v >= threshold and state.refrac_cnt == 0
    if spike:
        v = params.v_rest.raw if params.reset_mode is ResetMode.TO_REST else v - threshold
        refrac = params.refrac_len
    else:
        refrac = max(state.refrac_cnt - 1, 0)
    new = NeuronState(
        v=FixedPoint(v, state.v.frac_bits, width),
        theta=state.theta,
        refrac_cnt=refrac,
        fired=spike,
    )
    return new, spike


@dataclass
class NeuronBank:
    """A vectorised array of neurons with the semantics of integrate/end_of_step.

    Works on raw integers with saturation at `acc_bits` (fixed datapath) or on floats
    when `acc_bits` is None. Any array shape is accepted; a leading batch axis is common.
    """

    shape: tuple
    threshold: float
    leak: float = 0
    v_rest: float = 0
    v_min: float = 0
    refrac_len: int = 0
    reset_mode: ResetMode = ResetMode.TO_REST
    acc_bits: int | None = ACCUMULATOR_BITS
    frac_bits: int | None = None
    v: np.ndarray = field(init=False)
    theta: np.ndarray = field(init=False)
    refrac: np.ndarray = field(init=False)
    fired: np.ndarray = field(init=False)

    def __post_init__(self):
        if isinstance(self.shape, int):
            self.shape = (self.shape,)
        self.shape = tuple(self.shape)
        dtype = np.int64 if self.fixed else np.float64
        self.v = np.full(self.shape, self.v_rest, dtype=dtype)
        self.theta = np.zeros(self.shape, dtype=dtype)
        self.refrac = np.zeros(self.shape, dtype=np.int64)
        self.fired = np.zeros(self.shape, dtype=bool)

    @classmethod
    def from_params(cls, params: NeuronParams, shape, acc_bits: int = ACCUMULATOR_BITS) -> "NeuronBank":
        return cls(
            shape=shape,
            threshold=params.threshold_base.raw,
            leak=params.leak.raw,
            v_rest=params.v_rest.raw,
            v_min=params.v_min.raw,
            refrac_len=params.refrac_len,
            reset_mode=params.reset_mode,
            acc_bits=acc_bits,
            frac_bits=params.frac_bits,
        )

    @property
    def fixed(self) -> bool:
        return self.acc_bits is not None

    @property
    def active(self) -> np.ndarray:
        return self.refrac == 0

    def _clip(self, x):
        if not self.fixed:
            return x
        lo, hi = bounds(self.acc_bits)
        return np.clip(x, lo, hi)

    def integrate(self, weighted_inputs) -> None:
        """One saturating add per neuron; refractory neurons ignore their input.

        Pre-summed inputs saturate once. Use `integrate_many` for several inputs per step.
        """
        total = self._clip(self.v + weighted_inputs)
        self.v = np.where(self.active, total, self.v)

    def integrate_many(self, weighted_inputs) -> None:
        """Successive saturating adds, one per row of `weighted_inputs`, in row order."""
        inputs = np.asarray(weighted_inputs)
        if not len(inputs):
            return
        if not self.fixed:
            self.integrate(inputs.sum(axis=0))
            return
        # one wide add equals the sequence when no partial sum can leave the accumulator range
        lo, hi = bounds(self.acc_bits)
        reach_hi = self.v + np.clip(inputs, 0, None).sum(axis=0)
        reach_lo = self.v + np.clip(inputs, None, 0).sum(axis=0)
        if reach_hi.max() <= hi and reach_lo.min() >= lo:
            self.integrate(inputs.sum(axis=0))
            return
        for row in inputs:
            self.integrate(row)

    def end_of_step(self) -> np.ndarray:
        v = np.maximum(self._clip(self.v - self.leak), self.v_min)
        threshold = self._clip(self.threshold + self.theta)
        spike = (v >= threshold) & (self.refrac == 0)
        if self.reset_mode is ResetMode.TO_REST:
            v = np.where(spike, self.v_rest, v)
        else:
            v = np.where(spike, v - threshold, v)
        self.v = v.astype(self.v.dtype, copy=False)
        self.refrac = np.where(spike, self.refrac_len, np.maximum(self.refrac - 1, 0))
        self.fired = spike
        return spike

    def reset_potentials(self) -> None:
        self.v = np.full(self.shape, self.v_rest, dtype=self.v.dtype)
        self.refrac = np.zeros(self.shape, dtype=np.int64)
        self.fired = np.zeros(self.shape, dtype=bool)

    def state(self, index) -> NeuronState:
        """Snapshot one neuron as a NeuronState (fixed datapath only)."""
        if not self.fixed:
            raise ContractViolation("NeuronState snapshots need the fixed datapath")
        fb = self.frac_bits or 0
        return NeuronState(
            v=FixedPoint(int(self.v[index]), fb, self.acc_bits),
            theta=FixedPoint(int(self.theta[index]), fb, self.acc_bits),
            refrac_cnt=int(self.refrac[index]),
            fired=bool(self.fired[index]),
        )
