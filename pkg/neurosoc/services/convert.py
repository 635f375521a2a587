"""ANN-to-SNN conversion: train a ReLU MLP, normalise it, map it onto IF cores, evaluate."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import parse_key_values
from ..errors import ConversionError, DivergenceError
from .encoding import EncoderParams, Sample, as_arrays, poisson_raster
from .network import Layer, SpikingNetwork
from .neuron import ResetMode
from .numerics import ACCUMULATOR_BITS, quantize_array
from .snpc import MAX_NEURONS, CoreConfig, Snpc, load_weight_file, save_weight_file

logger = logging.getLogger(__name__)

SATURATION_TOLERANCE = 0.005
INT_SCALE_BITS = 7


# -- MLP --------------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0
    use_bias: bool = False


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_accuracy: float | None = None


@dataclass
class MlpModel:
    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    report: TrainReport | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ConversionError("layer count does not match sizes")
        for k, w in enumerate(self.weights):
            if w.shape != (self.sizes[k], self.sizes[k + 1]):
                raise ConversionError(f"layer {k} has shape {w.shape}, expected {(self.sizes[k], self.sizes[k + 1])}")

    @classmethod
    def init(cls, sizes: list[int], seed: int = 0) -> "MlpModel":
        rng = np.random.default_rng(seed)
        weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes, sizes[1:])]
        return cls(list(sizes), weights, [np.zeros(b) for b in sizes[1:]])

    @property
    def has_bias(self) -> bool:
        return any(np.any(b) for b in self.biases)

    def activations(self, x) -> list[np.ndarray]:
        """ReLU activations of every layer (the output layer included)."""
        out, a = [], np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights, self.biases):
            a = np.maximum(a @ w + b, 0.0)
            out.append(a)
        return out

    def logits(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x, y) -> float:
        if len(y) == 0:
            return 0.0
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.report)

    def save(self, path) -> Path:
        path = Path(path)
        arrays = {"sizes": np.array(self.sizes)}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{k}"], arrays[f"b{k}"] = w, b
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path) -> "MlpModel":
        with np.load(Path(path)) as data:
            sizes = [int(s) for s in data["sizes"]]
            n = len(sizes) - 1
            return cls(sizes, [data[f"w{k}"] for k in range(n)], [data[f"b{k}"] for k in range(n)])


def parse_layers(text: str) -> list[int]:
    try:
        sizes = [int(p) for p in str(text).split(":")]
    except ValueError as e:
        raise ConversionError(f"layer sizes must look like 784:48:10, got {text!r}") from e
    if len(sizes) < 2 or min(sizes) < 1:
        raise ConversionError(f"bad layer sizes {text!r}")
    return sizes


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_mlp(dataset, config: TrainConfig, sizes: list[int] | None = None, test=None) -> MlpModel:
    """Mini-batch SGD with momentum on softmax cross-entropy; ReLU hidden layers."""
    x, y = as_arrays(dataset) if isinstance(dataset, list) else dataset
    sizes = sizes or [x.shape[1], 48, 10]
    model = MlpModel.init(sizes, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    report = TrainReport()
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            acts = [xb]
            a = xb
            for w, b in zip(model.weights[:-1], model.biases[:-1]):
                a = np.maximum(a @ w + b, 0.0)
                acts.append(a)
            probs = _softmax(a @ model.weights[-1] + model.biases[-1])
            loss = -np.mean(np.log(probs[np.arange(len(yb)), yb] + 1e-12))
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}", epoch=epoch, batch_start=int(start))
            total_loss += loss * len(yb)
            grad = probs
            grad[np.arange(len(yb)), yb] -= 1.0
            grad /= len(yb)
            for k in range(len(model.weights) - 1, -1, -1):
                gw = acts[k].T @ grad
                gb = grad.sum(axis=0)
                if k > 0:
                    grad = (grad @ model.weights[k].T) * (acts[k] > 0)
                velocity_w[k] = config.momentum * velocity_w[k] - config.learning_rate * gw
                model.weights[k] += velocity_w[k]
                if config.use_bias:
                    velocity_b[k] = config.momentum * velocity_b[k] - config.learning_rate * gb
                    model.biases[k] += velocity_b[k]
        report.losses.append(total_loss / max(n, 1))
        report.train_accuracy.append(model.accuracy(x, y))
        logger.info("epoch %d: loss %.4f train accuracy %.4f", epoch + 1, report.losses[-1], report.train_accuracy[-1])
    if test is not None:
        tx, ty = as_arrays(test) if isinstance(test, list) else test
        report.test_accuracy = model.accuracy(tx, ty)
        logger.info("test accuracy %.4f", report.test_accuracy)
    model.report = report
    return model


def normalize_for_snn(model: MlpModel, calibration, percentile: float = 100.0) -> MlpModel:
    """Data-based normalisation: layer l is scaled by lambda_{l-1} / lambda_l.

    lambda_l is the max (or a percentile) of layer l's ReLU activations on the
    calibration set, so every normalised activation lies in [0, 1] and each layer can
    fire at threshold 1.
    """
    x, _ = as_arrays(calibration) if isinstance(calibration, list) else (calibration, None)
    out = model.copy()
    previous = 1.0
    for k, a in enumerate(model.activations(x)):
        lam = float(np.percentile(a, percentile)) if percentile < 100 else float(a.max(initial=0.0))
        if lam <= 0:
            raise ConversionError(f"layer {k} is dead on the calibration set (all activations zero)", layer=k)
        out.weights[k] = model.weights[k] * (previous / lam)
        out.biases[k] = model.biases[k] / lam
        previous = lam
    return out


# -- conversion -------------------------------------------------------------------------

@dataclass(frozen=True)
class SnnVariant:
    """`frac_bits=None` is the float SNN; `int_mode` scales everything by 2^INT_SCALE_BITS."""

    name: str
    frac_bits: int | None = None
    int_mode: bool = False
    w_bits: int | None = None

    @classmethod
    def parse(cls, text: str) -> "SnnVariant":
        text = text.strip().lower()
        if text == "float":
            return cls("float")
        if text == "int":
            return cls("int", frac_bits=INT_SCALE_BITS, int_mode=True)
        try:
            bits = int(text.removesuffix("bit").removesuffix("-"))
        except ValueError as e:
            raise ConversionError(f"unknown SNN variant {text!r}") from e
        return cls(f"{bits}bit", frac_bits=bits)


def storage_bits(frac_bits: int) -> int:
    """Hardware weights are 8-bit; wider fractions get a few integer bits of headroom."""
    return frac_bits + 1 if frac_bits < 8 else frac_bits + 4


def _core_width_chunks(n_out: int, core_width: int, partition: bool) -> list[tuple[int, int]]:
    if n_out <= core_width:
        return [(0, n_out)]
    if not partition:
        raise ConversionError(f"layer of {n_out} neurons exceeds core width {core_width} and partitioning is off")
    return [(s, min(s + core_width, n_out)) for s in range(0, n_out, core_width)]


def convert_to_snn(
    model: MlpModel,
    frac_bits: int | None = None,
    *,
    int_mode: bool = False,
    w_bits: int | None = None,
    core_width: int = MAX_NEURONS,
    partition: bool = True,
    reset_mode: ResetMode = ResetMode.TO_REST,
) -> SpikingNetwork:
    if model.has_bias:
        raise ConversionError("the core datapath has no bias term; train with use_bias=False")
    layers = []
    for k, w in enumerate(model.weights):
        n_in, n_out = w.shape
        cores = []
        for start, stop in _core_width_chunks(n_out, core_width, partition):
            block = w[:, start:stop]
            if frac_bits is None:
                config = CoreConfig(n_pre=n_in, n_post=stop - start, frac_bits=None, threshold=1.0, reset_mode=reset_mode)
                core = Snpc(config)
                core.memory.load_table(block)
            else:
                bits = w_bits or storage_bits(frac_bits)
                per_word = max(1, min(8, 64 // bits))
                acc = max(ACCUMULATOR_BITS, bits + math.ceil(math.log2(n_in)) + 2)
                if int_mode:
                    raw = quantize_array(block * (1 << frac_bits), 0, bits)
                    config = CoreConfig(
                        n_pre=n_in, n_post=stop - start, w_bits=bits, frac_bits=0, acc_bits=acc,
                        weights_per_word=per_word, threshold=float(1 << frac_bits), reset_mode=reset_mode,
                    )
                else:
                    raw = quantize_array(block, frac_bits, bits)
                    config = CoreConfig(
                        n_pre=n_in, n_post=stop - start, w_bits=bits, frac_bits=frac_bits, acc_bits=acc,
                        weights_per_word=per_word, threshold=1.0, reset_mode=reset_mode,
                    )
                core = Snpc(config)
                core.memory.load_table(raw)
            cores.append(core)
        layers.append(Layer(cores))
        logger.debug("layer %d: %d -> %d on %d core(s)", k, n_in, n_out, len(cores))
    return SpikingNetwork(layers)


def convert_variant(model: MlpModel, variant: SnnVariant, **kwargs) -> SpikingNetwork:
    return convert_to_snn(model, variant.frac_bits, int_mode=variant.int_mode, w_bits=variant.w_bits, **kwargs)


# -- evaluation -------------------------------------------------------------------------

@dataclass
class ConversionReport:
    n_steps: int
    curves: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, variant: str, curve: np.ndarray) -> None:
        if len(curve) != self.n_steps:
            raise ConversionError(f"curve length {len(curve)} != n_steps {self.n_steps}")
        self.curves[variant] = np.asarray(curve, dtype=np.float64)

    def merge(self, other: "ConversionReport") -> "ConversionReport":
        for name, curve in other.curves.items():
            self.add(name, curve)
        return self

    def final(self, variant: str) -> float:
        return float(self.curves[variant][-1])

    def at(self, variant: str, step: int) -> float:
        """Accuracy after `step` time steps (1-based)."""
        return float(self.curves[variant][step - 1])

    def saturation_step(self, variant: str, tolerance: float = SATURATION_TOLERANCE) -> int:
        """First step from which accuracy stays within `tolerance` of the final value."""
        curve = self.curves[variant]
        outside = np.flatnonzero(np.abs(curve - curve[-1]) > tolerance + 1e-12)
        return int(outside[-1]) + 2 if outside.size else 1

    def computation_saving(self, variant: str) -> float:
        return 1.0 - self.saturation_step(variant) / self.n_steps

    def rows(self):
        for name, curve in self.curves.items():
            for step, acc in enumerate(curve, start=1):
                yield step, name, f"{acc:.6f}"

    def summary(self) -> dict:
        return {
            name: {
                "final": round(self.final(name), 6),
                "saturation_step": self.saturation_step(name),
                "computation_saving": round(self.computation_saving(name), 6),
            }
            for name in self.curves
        }


def evaluate(
    snn: SpikingNetwork,
    samples: list[Sample],
    params: EncoderParams,
    variant: str = "snn",
    first_index: int = 0,
) -> ConversionReport:
    """Classify each sample by the argmax of cumulative output spikes after every step.

    Ties resolve to the lowest neuron index. Sample i draws Poisson input from the
    stream derived from (seed, first_index + i), so variants see identical inputs.
    """
    correct = np.zeros(params.n_steps, dtype=np.int64)
    for i, sample in enumerate(samples):
        raster = poisson_raster(sample.pixels, params, first_index + i)
        counts = np.cumsum(snn.run(raster), axis=0)
        correct += np.argmax(counts, axis=1) == sample.label
        if (i + 1) % 100 == 0:
            logger.info("%s: %d/%d samples, running accuracy %.4f", variant, i + 1, len(samples), correct[-1] / (i + 1))
    report = ConversionReport(params.n_steps)
    report.add(variant, correct / max(len(samples), 1))
    return report


def compare_variants(model: MlpModel, samples: list[Sample], params: EncoderParams, variants: list[SnnVariant]) -> ConversionReport:
    report = ConversionReport(params.n_steps)
    for variant in variants:
        snn = convert_variant(model, variant)
        report.merge(evaluate(snn, samples, params, variant.name))
        logger.info("variant %s: final accuracy %.4f", variant.name, report.final(variant.name))
    return report


# -- model files ------------------------------------------------------------------------

MANIFEST = "manifest.txt"


def export_snn(snn: SpikingNetwork, directory, **extra) -> Path:
    """One weight file per layer plus a key=value manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = snn.layers[0].cores[0].config
    if not first.fixed:
        raise ConversionError("the floating-point SNN has no hardware weight format")
    sizes = [snn.n_in] + [layer.n_post for layer in snn.layers]
    for k, layer in enumerate(snn.layers):
        table = np.concatenate([core.memory.to_table() for core in layer.cores], axis=1)
        save_weight_file(directory / f"layer{k}.snpw", table, first.w_bits, first.frac_bits)
    manifest = {
        "layers": ":".join(str(s) for s in sizes),
        "frac_bits": first.frac_bits,
        "w_bits": first.w_bits,
        "threshold": first.neuron_params().threshold_base.raw,
        "reset_mode": first.reset_mode.value,
        **extra,
    }
    (directory / MANIFEST).write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    return directory


def load_snn(directory, core_width: int = MAX_NEURONS) -> SpikingNetwork:
    directory = Path(directory)
    manifest = parse_key_values((directory / MANIFEST).read_text())
    sizes = parse_layers(manifest["layers"])
    frac_bits = int(manifest["frac_bits"])
    threshold_raw = int(manifest["threshold"])
    reset_mode = ResetMode(manifest.get("reset_mode", ResetMode.TO_REST.value))
    layers = []
    for k in range(len(sizes) - 1):
        wf = load_weight_file(directory / f"layer{k}.snpw")
        n_in, n_out = wf.table.shape
        acc = max(ACCUMULATOR_BITS, wf.w_bits + math.ceil(math.log2(n_in)) + 2)
        cores = []
        for start, stop in _core_width_chunks(n_out, core_width, True):
            config = CoreConfig(
                n_pre=n_in, n_post=stop - start, w_bits=wf.w_bits, frac_bits=wf.frac_bits, acc_bits=acc,
                weights_per_word=max(1, min(8, 64 // wf.w_bits)),
                threshold=threshold_raw / (1 << frac_bits), reset_mode=reset_mode,
            )
            core = Snpc(config)
            core.memory.load_table(wf.table[:, start:stop])
            cores.append(core)
        layers.append(Layer(cores))
    return SpikingNetwork(layers)
