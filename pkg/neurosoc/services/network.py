"""Feed-forward composition of cores.

The first layer consumes the input array of the current step. Every later layer holds a
register with the spike array its predecessor produced in the previous step, so layer l
at step t consumes what layer l-1 emitted at step t-1 -- the timing the mesh gives when
each step begins with one drained NoC barrier.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ContractViolation
from .snpc import Snpc, SpikeArray


class Layer:
    """One network layer, partitioned over cores by output neuron."""

    def __init__(self, cores: list[Snpc]):
        if not cores:
            raise ContractViolation("a layer needs at least one core")
        if len({c.n_pre for c in cores}) != 1:
            raise ContractViolation("cores of one layer must share the input width")
        self.cores = cores
        self.learners: dict[int, object] = {}

    @property
    def n_pre(self) -> int:
        return self.cores[0].n_pre

    @property
    def n_post(self) -> int:
        return sum(c.n_post for c in self.cores)

    def offsets(self) -> list[int]:
        out, base = [], 0
        for core in self.cores:
            out.append(base)
            base += core.n_post
        return out

    def attach(self, core_index: int, learner) -> None:
        self.learners[core_index] = learner

    def detach_all(self) -> None:
        self.learners.clear()

    def step_core(self, k: int, spikes: SpikeArray) -> SpikeArray:
        out = self.cores[k].step(spikes)
        learner = self.learners.get(k)
        if learner is not None:
            learner.observe(spikes, out)
        return out

    def step(self, spikes: SpikeArray) -> SpikeArray:
        return SpikeArray.concat(self.step_core(k, spikes) for k in range(len(self.cores)))

    def reset(self) -> None:
        for core in self.cores:
            core.reset()


class SpikingNetwork:
    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ContractViolation("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.n_post != b.n_pre:
                raise ContractViolation(f"layer widths do not chain: {a.n_post} -> {b.n_pre}")
        self.layers = layers
        self.reset()

    @property
    def n_in(self) -> int:
        return self.layers[0].n_pre

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_post

    @property
    def latency(self) -> int:
        return len(self.layers) - 1

    def cores(self) -> Iterable[Snpc]:
        for layer in self.layers:
            yield from layer.cores

    def reset(self) -> None:
        for layer in self.layers:
            layer.reset()
        self._registers = [SpikeArray.zeros(layer.n_pre) for layer in self.layers[1:]]

    def step(self, input_spikes: SpikeArray) -> SpikeArray:
        if input_spikes.width != self.n_in:
            raise ContractViolation(f"input width {input_spikes.width} != {self.n_in}")
        feeds = [input_spikes] + self._registers
        outputs = [layer.step(feed) for layer, feed in zip(self.layers, feeds)]
        self._registers = outputs[:-1]
        return outputs[-1]

    def run(self, raster) -> np.ndarray:
        """Simulate one sample from a boolean raster; returns per-step output spikes."""
        raster = np.asarray(raster, dtype=bool)
        self.reset()
        out = np.zeros((raster.shape[0], self.n_out), dtype=bool)
        for t, row in enumerate(raster):
            out[t] = self.step(SpikeArray.from_bools(row)).to_bools()
        return out
