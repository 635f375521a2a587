"""Unsupervised STDP training of a 784:N network with recurrent lateral inhibition."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, SilentNetworkError
from .encoding import EncoderParams, Sample, poisson_raster
from .learning import StdpLearner, StdpMode, StdpParams
from .network import Layer, SpikingNetwork
from .numerics import quantize, quantize_array
from .snpc import MAX_NEURONS, CoreConfig, RecurrentConfig, Snpc, load_weight_file, save_weight_file

logger = logging.getLogger(__name__)

N_CLASSES = 10
# Poisson streams per phase are kept apart by offsetting the sample index
ASSIGN_STREAM = 1 << 24
EVAL_STREAM = 2 << 24
WEIGHTS_FILE = "weights.snpw"
FLOAT_WEIGHTS_FILE = "weights.npz"
ASSIGNMENTS_FILE = "assignments.csv"


@dataclass(frozen=True)
class StdpNetworkConfig:
    n_inputs: int = 784
    n_neurons: int = 100
    hardware: bool = True
    w_bits: int = 8
    frac_bits: int = 7
    threshold: float = 16.0
    leak: float = 0.5
    refrac_len: int = 2
    w_inh: float = -16.0
    init_max: float = 0.3
    epochs: int = 1
    seed: int = 0
    stdp: StdpParams = field(default_factory=lambda: StdpParams.for_weight_bits(8))

    def __post_init__(self):
        if not 1 <= self.n_neurons <= MAX_NEURONS:
            # inhibition is a per-core crossbar, so the layer must fit one core
            raise ConfigError(f"n_neurons must be in 1..{MAX_NEURONS}, got {self.n_neurons}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.w_inh > 0:
            raise ConfigError("w_inh must be <= 0")
        if self.hardware and self.stdp.mode is not StdpMode.FIXED_DELTA:
            raise ConfigError("hardware mode trains with fixed-delta STDP")

    @classmethod
    def software(cls, rule: StdpMode | str = StdpMode.ADAPTIVE_DELTA, **kwargs) -> "StdpNetworkConfig":
        """Floating-point network; `rule` picks adaptive-delta or the constant fixed-delta step."""
        kwargs.setdefault("stdp", StdpParams(mode=StdpMode(rule)))
        return cls(hardware=False, **kwargs)

    @property
    def variant(self) -> str:
        return "hardware" if self.hardware else self.stdp.mode.value

    def core_config(self) -> CoreConfig:
        if self.hardware:
            acc_frac = self.frac_bits
            recurrent = RecurrentConfig(enabled=True, w_inh=quantize(self.w_inh, acc_frac, 16))
            return CoreConfig(
                n_pre=self.n_inputs, n_post=self.n_neurons, w_bits=self.w_bits, frac_bits=self.frac_bits,
                threshold=self.threshold, leak=self.leak, refrac_len=self.refrac_len, recurrent=recurrent,
            )
        recurrent = RecurrentConfig(enabled=True, w_inh=quantize(self.w_inh, 7, 16))
        return CoreConfig(
            n_pre=self.n_inputs, n_post=self.n_neurons, frac_bits=None,
            threshold=self.threshold, leak=self.leak, refrac_len=self.refrac_len, recurrent=recurrent,
        )


def build_stdp_network(config: StdpNetworkConfig) -> SpikingNetwork:
    core = Snpc(config.core_config())
    rng = np.random.default_rng(config.seed)
    init = rng.uniform(0.0, config.init_max, size=(config.n_inputs, config.n_neurons))
    if config.hardware:
        raw = quantize_array(init, config.frac_bits, config.w_bits)
        core.memory.load_table(np.clip(raw, config.stdp.w_min_raw, config.stdp.w_max_raw))
    else:
        core.memory.load_table(init)
    return SpikingNetwork([Layer([core])])


@dataclass
class StdpResult:
    network: SpikingNetwork
    config: StdpNetworkConfig
    assignments: np.ndarray
    train_spikes: int = 0
    samples_seen: int = 0

    @property
    def core(self) -> Snpc:
        return self.network.layers[0].cores[0]


def _run_counts(runner, sample: Sample, params: EncoderParams, index: int) -> np.ndarray:
    return runner.run(poisson_raster(sample.pixels, params, index)).sum(axis=0)


def spike_counts(runner, samples: list[Sample], params: EncoderParams, stream: int) -> np.ndarray:
    """(n_samples, n_neurons) output spike counts with learning detached."""
    return np.stack([_run_counts(runner, s, params, stream + i) for i, s in enumerate(samples)])


def assign_labels(counts: np.ndarray, labels) -> np.ndarray:
    """Each neuron takes the class with its highest mean response; silent neurons get -1."""
    labels = np.asarray(labels)
    rates = np.zeros((N_CLASSES, counts.shape[1]))
    for c in range(N_CLASSES):
        mask = labels == c
        if mask.any():
            rates[c] = counts[mask].mean(axis=0)
    assignments = np.argmax(rates, axis=0)
    assignments[rates.max(axis=0) <= 0] = -1
    return assignments


def classify(counts: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    """Per-class mean spike count over assigned neurons; ties go to the lowest class."""
    counts = np.atleast_2d(counts)
    scores = np.full((counts.shape[0], N_CLASSES), -1.0)
    for c in range(N_CLASSES):
        mask = assignments == c
        if mask.any():
            scores[:, c] = counts[:, mask].mean(axis=1)
    return np.argmax(scores, axis=1)


def stdp_train(
    config: StdpNetworkConfig,
    dataset: list[Sample],
    assign_samples: list[Sample] | None = None,
    encoder: EncoderParams | None = None,
    runner=None,
    network: SpikingNetwork | None = None,
) -> StdpResult:
    """Train, then assign labels from one labeled pass with weights and theta frozen.

    `runner` is anything with `run(raster)` driving `network` (a NeuroSoc for the mesh
    transport); by default the network runs on direct core composition.
    """
    encoder = encoder or EncoderParams(rng_seed=config.seed)
    network = network or build_stdp_network(config)
    runner = runner or network
    layer = network.layers[0]
    learner = StdpLearner(layer.cores[0], config.stdp)
    layer.attach(0, learner)
    logger.info(
        "Training %s STDP network %d:%d on %d samples for %d epoch(s)",
        config.variant, config.n_inputs, config.n_neurons, len(dataset), config.epochs,
    )
    total = 0
    seen = 0
    try:
        for epoch in range(config.epochs):
            for i, sample in enumerate(dataset):
                learner.begin_sample()
                out = runner.run(poisson_raster(sample.pixels, encoder, epoch * len(dataset) + i))
                learner.end_sample()
                total += int(out.sum())
                seen += 1
                if seen % 500 == 0:
                    logger.info("stdp epoch %d: %d/%d samples, %d output spikes so far", epoch + 1, i + 1, len(dataset), total)
    finally:
        layer.detach_all()
    assign_samples = assign_samples if assign_samples is not None else dataset
    counts = spike_counts(runner, assign_samples, encoder, ASSIGN_STREAM)
    assignments = assign_labels(counts, [s.label for s in assign_samples])
    if (assignments < 0).all():
        raise SilentNetworkError(
            "no neuron fired during the labeling pass; lower the threshold or raise the input rate",
            n_neurons=config.n_neurons,
            samples=len(assign_samples),
        )
    dead = int((assignments < 0).sum())
    if dead:
        logger.warning("%d of %d neurons never fired during labeling", dead, config.n_neurons)
    return StdpResult(network, config, assignments, train_spikes=total, samples_seen=seen)


def stdp_evaluate(result: StdpResult, samples: list[Sample], encoder: EncoderParams, runner=None) -> tuple[float, np.ndarray]:
    runner = runner or result.network
    counts = spike_counts(runner, samples, encoder, EVAL_STREAM)
    predictions = classify(counts, result.assignments)
    labels = np.array([s.label for s in samples])
    accuracy = float(np.mean(predictions == labels)) if len(samples) else 0.0
    return accuracy, predictions


def export_stdp(result: StdpResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    core = result.core
    if core.config.fixed:
        save_weight_file(
            directory / WEIGHTS_FILE, core.memory.to_table(), core.config.w_bits, core.config.frac_bits,
            theta=core.neurons.theta,
        )
    else:
        with (directory / FLOAT_WEIGHTS_FILE).open("wb") as fh:
            np.savez(fh, weights=core.memory.to_table(), theta=core.neurons.theta)
    with (directory / ASSIGNMENTS_FILE).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neuron", "label"])
        writer.writerows((j, int(c)) for j, c in enumerate(result.assignments))
    logger.info("Exported %d-neuron STDP network to '%s'", len(result.assignments), directory)
    return directory


def load_stdp(directory, config: StdpNetworkConfig) -> StdpResult:
    """Rebuild a trained network; theta stays frozen since no learner is attached."""
    directory = Path(directory)
    with (directory / ASSIGNMENTS_FILE).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assignments = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    if config.hardware:
        wf = load_weight_file(directory / WEIGHTS_FILE)
        config = replace(config, n_inputs=wf.table.shape[0], n_neurons=wf.table.shape[1], w_bits=wf.w_bits, frac_bits=wf.frac_bits)
        network = build_stdp_network(config)
        core = network.layers[0].cores[0]
        core.memory.load_table(wf.table)
        if wf.theta is not None:
            core.neurons.theta = wf.theta.copy()
    else:
        with np.load(directory / FLOAT_WEIGHTS_FILE) as data:
            weights, theta = data["weights"], data["theta"]
        config = replace(config, n_inputs=weights.shape[0], n_neurons=weights.shape[1])
        network = build_stdp_network(config)
        core = network.layers[0].cores[0]
        core.memory.load_table(weights)
        core.neurons.theta = theta.copy()
    return StdpResult(network, config, assignments)
