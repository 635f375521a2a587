"""STDP learning block.

`FIXED_DELTA` is the hardware rule: one step behind the neuron pipeline it checks the
post-synaptic spikes of the calculating step, ORs the pre-synaptic arrays stored for the
steps before and after it, and moves each affected weight by a constant step. On a
fixed-point core the step is `delta` LSBs; on the floating-point core it is `delta_value`.
`ADAPTIVE_DELTA` is the trace-based real-valued reference rule, weight-dependent by default.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .neuron import NeuronBank, NeuronState
from .numerics import FixedPoint, bounds, round_half_away, scale_toward_zero, saturate
from .snpc import FloatWeightMemory, SpikeArray, Snpc, WeightMemory

logger = logging.getLogger(__name__)


class StdpMode(str, enum.Enum):
    FIXED_DELTA = "fixed"
    ADAPTIVE_DELTA = "adaptive"


class WeightDependence(str, enum.Enum):
    """How the adaptive rule scales a trace-driven change by the current weight."""

    ADDITIVE = "additive"
    PROPORTIONAL = "proportional"
    SOFT_BOUND = "soft_bound"


@dataclass(frozen=True)
class StdpParams:
    """Learning parameters. `theta_plus`, `delta_value` and `norm_sum` are in value units.

    `norm_sum=None` means n_pre / 10.
    """

    mode: StdpMode = StdpMode.FIXED_DELTA
    delta: int = 1
    delta_value: float = 2.0**-7
    eta_pre: float = 1e-4
    eta_post: float = 1e-2
    tau_trace: float = 20.0
    weight_dependence: WeightDependence = WeightDependence.PROPORTIONAL
    w_before: int = 1
    w_after: int = 1
    w_min_raw: int = 0
    w_max_raw: int = 127
    w_max: float = 1.0
    theta_plus: float = 0.05
    theta_decay: float = 1.0 - 1e-4
    norm_sum: float | None = None

    def __post_init__(self):
        if self.delta < 1:
            raise ContractViolation("delta must be >= 1")
        if self.delta_value <= 0:
            raise ContractViolation("delta_value must be positive")
        if not 0 < self.theta_decay <= 1:
            raise ContractViolation("theta_decay must be in (0, 1]")
        if self.w_min_raw >= self.w_max_raw:
            raise ContractViolation("w_min_raw must be below w_max_raw")
        if self.w_before < 0 or self.w_after < 0:
            raise ContractViolation("window lengths must be >= 0")
        if self.tau_trace <= 0:
            raise ContractViolation("tau_trace must be positive")

    @property
    def history_depth(self) -> int:
        return self.w_before + self.w_after + 1

    def target_sum(self, n_pre: int) -> float:
        return n_pre / 10 if self.norm_sum is None else self.norm_sum

    @classmethod
    def for_weight_bits(cls, w_bits: int, **kwargs) -> "StdpParams":
        """Defaults clamp learned weights to the excitatory half [0, 2^(w_bits-1) - 1].

        Theta is held (decay 1.0) unless asked otherwise: in a register with 7 fractional
        bits any per-step decay below one truncates at least one LSB every step, which
        outruns `theta_plus` and erases the adaptive threshold.
        """
        kwargs.setdefault("w_min_raw", 0)
        kwargs.setdefault("theta_decay", 1.0)
        kwargs.setdefault("w_max_raw", bounds(w_bits)[1])
        return cls(**kwargs)


class SpikeHistory:
    """Ring buffers of pre/post spike arrays indexed by absolute time step.

    Steps before `start` read as all-zero (nothing spiked before the sample began).
    """

    def __init__(self, n_pre: int, n_post: int, depth: int):
        if depth < 1:
            raise ContractViolation("history depth must be >= 1")
        self.n_pre = n_pre
        self.n_post = n_post
        self.depth = depth
        self.reset()

    def reset(self, start: int = 0) -> None:
        self.start = start
        self.latest = start - 1
        self._pre: list[SpikeArray | None] = [None] * self.depth
        self._post: list[SpikeArray | None] = [None] * self.depth

    def record(self, t: int, pre: SpikeArray, post: SpikeArray) -> None:
        if t != self.latest + 1:
            raise ContractViolation(f"history expects step {self.latest + 1}, got {t}")
        if pre.width != self.n_pre or post.width != self.n_post:
            raise ContractViolation("history array widths do not match the core")
        self._pre[t % self.depth] = pre
        self._post[t % self.depth] = post
        self.latest = t

    def _check(self, t: int) -> None:
        if t > self.latest or t <= self.latest - self.depth:
            raise ContractViolation(f"step {t} not in history window ({self.latest - self.depth}, {self.latest}]")

    def pre_at(self, t: int) -> SpikeArray:
        if t < self.start:
            return SpikeArray.zeros(self.n_pre)
        self._check(t)
        return self._pre[t % self.depth]

    def post_at(self, t: int) -> SpikeArray:
        if t < self.start:
            return SpikeArray.zeros(self.n_post)
        self._check(t)
        return self._post[t % self.depth]


def stdp_step_fixed(weights: WeightMemory | FloatWeightMemory, history: SpikeHistory, t: int, params: StdpParams):
    """Apply the constant-step rule for calculating step `t`.

    Raw memories move by `delta` LSBs within [w_min_raw, w_max_raw]; float memories move
    by `delta_value` within [0, w_max].
    """
    post = history.post_at(t)
    if not post:
        return weights
    before = SpikeArray.zeros(history.n_pre)
    for u in range(t - params.w_before, t + 1):
        before = before | history.pre_at(u)
    after = SpikeArray.zeros(history.n_pre)
    for u in range(t + 1, t + params.w_after + 1):
        after = after | history.pre_at(u)
    depress = after.bits & ~before.bits
    rows = SpikeArray(before.bits | depress, history.n_pre).indices()
    if not rows:
        return weights
    sign = np.array([1 if (before.bits >> i) & 1 else -1 for i in rows], dtype=np.int64)
    cols = post.indices()
    if weights.fixed:
        step, lo, hi = params.delta, params.w_min_raw, params.w_max_raw
    else:
        step, lo, hi = params.delta_value, 0.0, params.w_max
    block = weights.read_rows(rows)
    updated = block[:, cols] + sign[:, None] * step
    block[:, cols] = np.clip(updated, lo, hi)
    weights.write_rows(rows, block)
    return weights


@dataclass
class Traces:
    pre: np.ndarray
    post: np.ndarray

    @classmethod
    def zeros(cls, n_pre: int, n_post: int) -> "Traces":
        return cls(np.zeros(n_pre), np.zeros(n_post))


def _weight_factor(w: np.ndarray, params: StdpParams, potentiate: bool):
    dependence = params.weight_dependence
    if dependence is WeightDependence.PROPORTIONAL:
        return w
    if dependence is WeightDependence.SOFT_BOUND:
        return params.w_max - w if potentiate else w
    return 1.0


def stdp_step_adaptive(weights: np.ndarray, traces: Traces, pre_spikes, post_spikes, params: StdpParams):
    """Trace rule: +eta_post * x_pre on a post spike, -eta_pre * x_post on a pre spike.

    Both changes are scaled by `_weight_factor`; with the default proportional
    dependence a weight moves by a fraction of itself.
    """
    pre_spikes = np.asarray(pre_spikes, dtype=bool)
    post_spikes = np.asarray(post_spikes, dtype=bool)
    decay = math.exp(-1.0 / params.tau_trace)
    x_pre = np.where(pre_spikes, 1.0, traces.pre * decay)
    x_post = np.where(post_spikes, 1.0, traces.post * decay)
    if post_spikes.any():
        dw = params.eta_post * np.repeat(x_pre[:, None], post_spikes.sum(), axis=1)
        dw = dw * _weight_factor(weights[:, post_spikes], params, potentiate=True)
        weights[:, post_spikes] += dw
    if pre_spikes.any():
        dw = params.eta_pre * np.repeat(x_post[None, :], pre_spikes.sum(), axis=0)
        dw = dw * _weight_factor(weights[pre_spikes, :], params, potentiate=False)
        weights[pre_spikes, :] -= dw
    np.clip(weights, 0.0, params.w_max, out=weights)
    return weights, Traces(x_pre, x_post)


def adapt_threshold(states: list[NeuronState], fired: SpikeArray, params: StdpParams) -> list[NeuronState]:
    out = []
    for j, state in enumerate(states):
        theta = state.theta
        if fired.test(j):
            plus = round_half_away(params.theta_plus * (1 << theta.frac_bits))
            theta = FixedPoint(saturate(theta.raw + plus, theta.total_bits), theta.frac_bits, theta.total_bits)
        theta = scale_toward_zero(theta, params.theta_decay)
        out.append(NeuronState(state.v, theta, state.refrac_cnt, state.fired))
    return out


def adapt_threshold_bank(bank: NeuronBank, fired, params: StdpParams) -> None:
    """Array form of adapt_threshold acting on a NeuronBank in place."""
    fired = np.asarray(fired, dtype=bool)
    if bank.fixed:
        plus = round_half_away(params.theta_plus * (1 << (bank.frac_bits or 0)))
        lo, hi = bounds(bank.acc_bits)
        theta = np.clip(bank.theta + plus * fired, lo, hi)
        if params.theta_decay != 1.0:
            theta = np.trunc(theta * params.theta_decay).astype(np.int64)
        bank.theta = theta
    else:
        bank.theta = (bank.theta + params.theta_plus * fired) * params.theta_decay


def normalize_weights(weights, norm_sum: float, params: StdpParams):
    """Rescale every post-neuron's column so its weights sum to `norm_sum` (value units)."""
    table = weights.to_table()
    if isinstance(weights, FloatWeightMemory):
        sums = table.sum(axis=0)
        scale = np.where(sums > 0, norm_sum / np.where(sums > 0, sums, 1.0), 1.0)
        weights.load_table(np.clip(table * scale, 0.0, params.w_max))
        return weights
    target = round_half_away(norm_sum * (1 << weights.frac_bits))
    sums = table.sum(axis=0)
    live = sums > 0
    if not live.any():
        return weights
    scaled = table[:, live] * (target / sums[live])
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    table[:, live] = np.clip(rounded, params.w_min_raw, params.w_max_raw).astype(np.int64)
    weights.load_table(table)
    return weights


class StdpLearner:
    """Runs the learning block beside one core, one step behind its neurons."""

    def __init__(self, core: Snpc, params: StdpParams):
        if params.mode is StdpMode.ADAPTIVE_DELTA and core.config.fixed:
            raise ContractViolation("adaptive-delta STDP runs on the floating-point core")
        self.core = core
        self.params = params
        self.history = SpikeHistory(core.n_pre, core.n_post, params.history_depth)
        self.traces = Traces.zeros(core.n_pre, core.n_post)
        self.t = -1

    def begin_sample(self) -> None:
        self.history.reset(0)
        self.traces = Traces.zeros(self.core.n_pre, self.core.n_post)
        self.t = -1

    def observe(self, pre: SpikeArray, post: SpikeArray) -> None:
        self.t += 1
        self.history.record(self.t, pre, post)
        if self.params.mode is StdpMode.FIXED_DELTA:
            t_learn = self.t - self.params.w_after
            if t_learn >= 0:
                stdp_step_fixed(self.core.memory, self.history, t_learn, self.params)
        else:
            values, self.traces = stdp_step_adaptive(
                self.core.memory.values, self.traces, pre.to_bools(), post.to_bools(), self.params
            )
            self.core.memory.values = values
        adapt_threshold_bank(self.core.neurons, post.to_bools(), self.params)

    def end_sample(self) -> None:
        if self.params.mode is StdpMode.FIXED_DELTA:
            # trailing steps carry no input; drain the learning pipeline over them
            zeros_pre = SpikeArray.zeros(self.core.n_pre)
            zeros_post = SpikeArray.zeros(self.core.n_post)
            for _ in range(self.params.w_after):
                self.t += 1
                self.history.record(self.t, zeros_pre, zeros_post)
                stdp_step_fixed(self.core.memory, self.history, self.t - self.params.w_after, self.params)
        normalize_weights(self.core.memory, self.params.target_sum(self.core.n_pre), self.params)
