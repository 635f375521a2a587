"""System assembly: processing elements on the mesh, the time-step controller, experiments.

One time step of the controller:

1. input groups inject one spike flit per (active input bit, destination PE) of step t,
   and every core of a non-final layer injects the spikes it produced at step t-1;
2. the mesh is drained (the step barrier);
3. every NI ORs its delivered events into the core's input spike array;
4. every core steps (its learner observes the step when attached).

Layer l >= 1 therefore consumes layer l-1's spikes of the previous step, the same
pipeline `SpikingNetwork` models with registers.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import parse_bool
from ..errors import ConfigError, ContractViolation, NeurosocError, SimulationError
from .convert import MlpModel, SnnVariant, compare_variants, convert_variant, evaluate, normalize_for_snn, parse_layers
from .encoding import EncoderParams, Sample
from .learning import StdpMode, StdpParams, WeightDependence
from .network import SpikingNetwork
from .noc import Flit, FlitTrace, MemKind, Mesh, NetworkInterface, NiTables, PeAddress, RouterConfig, decode_flit, encode_flit
from .snpc import MAX_NEURONS, SpikeArray
from .training import StdpNetworkConfig, build_stdp_network, load_stdp, stdp_evaluate, stdp_train

logger = logging.getLogger(__name__)


class ExperimentMode(str, enum.Enum):
    ANN_CONVERSION = "ann_conversion"
    STDP_TRAINING = "stdp_training"
    STDP_INFERENCE = "stdp_inference"


class Transport(str, enum.Enum):
    NOC = "noc"
    DIRECT = "direct"


def parse_dims(text: str) -> tuple[int, int, int]:
    parts = str(text).lower().replace(",", "x").split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"mesh dims must look like 4x4x2, got {text!r}") from e
    if len(dims) != 3:
        raise ConfigError(f"mesh dims need three axes, got {text!r}")
    return dims


def _pes(text: str) -> list[PeAddress]:
    try:
        return [PeAddress.parse(p) for p in str(text).split(",") if p.strip()]
    except (ContractViolation, ValueError) as e:
        raise ConfigError(f"bad PE list {text!r}: {e}") from e


def _raster_order(dims: tuple[int, int, int]) -> list[PeAddress]:
    return [PeAddress(x, y, z) for z in range(dims[2]) for y in range(dims[1]) for x in range(dims[0])]


def _chunks(total: int, parts: int) -> list[tuple[int, int]]:
    size = math.ceil(total / parts)
    return [(s, min(s + size, total)) for s in range(0, total, size)]


def block_mapping(dims: tuple[int, int, int], layer_sizes: list[int]) -> dict[str, list[PeAddress]]:
    """Contiguous placement in raster order: input groups first, then each layer's cores."""
    order = _raster_order(dims)
    wanted = [("input", math.ceil(layer_sizes[0] / MAX_NEURONS))]
    wanted += [(f"layer{k}", math.ceil(n / MAX_NEURONS)) for k, n in enumerate(layer_sizes[1:])]
    if sum(n for _, n in wanted) > len(order):
        raise ConfigError(f"mesh {dims} has {len(order)} PEs, mapping needs {sum(n for _, n in wanted)}")
    mapping, cursor = {}, 0
    for name, count in wanted:
        mapping[name] = order[cursor:cursor + count]
        cursor += count
    return mapping


@dataclass(frozen=True)
class SystemConfig:
    mode: ExperimentMode = ExperimentMode.ANN_CONVERSION
    mesh_dims: tuple[int, int, int] = (4, 4, 2)
    layers: tuple[int, ...] = (784, 48, 10)
    mapping: dict[str, list[PeAddress]] = field(default_factory=dict)
    frac_bits: int | None = 7
    w_bits: int = 8
    int_mode: bool = False
    encoder: EncoderParams = field(default_factory=EncoderParams)
    stdp: StdpParams = field(default_factory=StdpParams)
    stdp_network: StdpNetworkConfig = field(default_factory=StdpNetworkConfig)
    seed: int = 0
    transport: Transport = Transport.NOC
    buffer_depth: int = 4
    bit_error_rate: float = 0.0
    drain_limit: int = 100_000
    model_path: str | None = None
    weights_dir: str | None = None
    calibration: int = 1000
    train_limit: int | None = None
    test_limit: int | None = 100

    def __post_init__(self):
        if any(not 1 <= d <= 8 for d in self.mesh_dims):
            raise ConfigError(f"mesh dims must be within 1..8, got {self.mesh_dims}")
        if self.mode is not ExperimentMode.ANN_CONVERSION:
            # STDP networks are a single 784:N layer
            net = self.stdp_network
            object.__setattr__(self, "layers", (net.n_inputs, net.n_neurons))
        if not self.mapping:
            object.__setattr__(self, "mapping", block_mapping(self.mesh_dims, list(self.layers)))
        self.validate_mapping()

    def validate_mapping(self) -> None:
        needed = ["input"] + [f"layer{k}" for k in range(len(self.layers) - 1)]
        for name in needed:
            if not self.mapping.get(name):
                raise ConfigError(f"mapping does not cover {name}")
        hosts: dict[PeAddress, str] = {}
        for name, pes in self.mapping.items():
            if name not in needed:
                raise ConfigError(f"mapping names unknown group {name!r}")
            if len(set(pes)) != len(pes):
                raise ConfigError(f"{name} lists a PE twice")
            for pe in pes:
                if not pe.within(self.mesh_dims):
                    raise ConfigError(f"{name}: PE {pe} is outside mesh {self.mesh_dims}")
                if name != "input":
                    if pe in hosts:
                        raise ConfigError(f"PE {pe} hosts cores of both {hosts[pe]} and {name}")
                    hosts[pe] = name
        n_groups = len(self.mapping["input"])
        if math.ceil(self.layers[0] / n_groups) > MAX_NEURONS:
            raise ConfigError(f"{n_groups} input group(s) cannot carry {self.layers[0]} inputs")
        for k, n in enumerate(self.layers[1:]):
            if len(self.mapping[f"layer{k}"]) > n:
                raise ConfigError(f"layer{k} has more PEs than neurons")
            if math.ceil(n / len(self.mapping[f"layer{k}"])) > MAX_NEURONS:
                raise ConfigError(f"layer{k}: {n} neurons do not fit {len(self.mapping[f'layer{k}'])} core(s)")

    @property
    def variant(self) -> SnnVariant:
        if self.int_mode:
            return SnnVariant("int", frac_bits=7, int_mode=True)
        if self.frac_bits is None:
            return SnnVariant("float")
        return SnnVariant(f"{self.frac_bits}bit", frac_bits=self.frac_bits)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "SystemConfig":
        """Build from experiment-file keys; every problem surfaces as ConfigError."""
        values = dict(values)
        try:
            return cls._from_mapping(values)
        except ConfigError:
            raise
        except (NeurosocError, ValueError, TypeError, KeyError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def _from_mapping(cls, values: dict[str, str]) -> "SystemConfig":
        pop = values.pop
        kwargs: dict = {}
        if "mode" in values:
            kwargs["mode"] = ExperimentMode(pop("mode"))
        if "mesh.dims" in values:
            kwargs["mesh_dims"] = parse_dims(pop("mesh.dims"))
        if "network.layers" in values:
            kwargs["layers"] = tuple(parse_layers(pop("network.layers")))
        mapping = {k.split(".", 1)[1]: _pes(pop(k)) for k in list(values) if k.startswith("mapping.")}
        if mapping:
            kwargs["mapping"] = mapping
        if "core.frac_bits" in values:
            raw = pop("core.frac_bits").lower()
            kwargs["frac_bits"] = None if raw == "float" else int(raw)
        if "core.w_bits" in values:
            kwargs["w_bits"] = int(pop("core.w_bits"))
        if "core.int_mode" in values:
            kwargs["int_mode"] = parse_bool(pop("core.int_mode"))
        seed = int(pop("seed", 0))
        kwargs["seed"] = seed
        enc_kwargs = {k: float(pop(f"encoder.{k}")) for k in ("dt", "max_rate") if f"encoder.{k}" in values}
        if "encoder.n_steps" in values:
            enc_kwargs["n_steps"] = int(pop("encoder.n_steps"))
        kwargs["encoder"] = EncoderParams(rng_seed=seed, **enc_kwargs)
        stdp_kwargs = _stdp_params(values)
        kwargs["stdp"] = StdpParams(**stdp_kwargs)
        if "transport" in values:
            kwargs["transport"] = Transport(pop("transport"))
        for key, cast in (
            ("noc.buffer_depth", int),
            ("noc.bit_error_rate", float),
            ("noc.drain_limit", int),
            ("calibration", int),
            ("train_limit", int),
            ("test_limit", int),
        ):
            if key in values:
                kwargs[key.split(".")[-1]] = cast(pop(key))
        for key in ("model_path", "weights_dir"):
            if key in values:
                kwargs[key] = pop(key)
        net = _stdp_network(values, kwargs, stdp_kwargs, seed)
        if net is not None:
            kwargs["stdp_network"] = net
        if values:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(values))}")
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, str]:
        out = {
            "mode": self.mode.value,
            "mesh.dims": "x".join(str(d) for d in self.mesh_dims),
            "network.layers": ":".join(str(n) for n in self.layers),
            "core.frac_bits": "float" if self.frac_bits is None else str(self.frac_bits),
            "core.w_bits": str(self.w_bits),
            "core.int_mode": str(self.int_mode).lower(),
            "encoder.n_steps": str(self.encoder.n_steps),
            "encoder.dt": str(self.encoder.dt),
            "encoder.max_rate": str(self.encoder.max_rate),
            "seed": str(self.seed),
            "transport": self.transport.value,
        }
        out.update({f"mapping.{k}": ",".join(str(p) for p in v) for k, v in self.mapping.items()})
        return out


def _stdp_params(values: dict[str, str]) -> dict:
    casts = {
        "mode": StdpMode, "delta": int, "delta_value": float, "eta_pre": float, "eta_post": float,
        "tau_trace": float, "weight_dependence": WeightDependence, "w_before": int, "w_after": int,
        "w_min_raw": int, "w_max_raw": int, "w_max": float, "theta_plus": float, "theta_decay": float, "norm_sum": float,
    }
    return {name: cast(values.pop(f"stdp.{name}")) for name, cast in casts.items() if f"stdp.{name}" in values}


def _stdp_network(values: dict[str, str], kwargs: dict, stdp_kwargs: dict, seed: int) -> StdpNetworkConfig | None:
    """`stdp_net.rule` (or `stdp.mode`) picks the learning rule; without either the
    hardware network learns fixed-delta and the software network adaptive-delta."""
    casts = {
        "n_neurons": int, "hardware": parse_bool, "rule": StdpMode, "threshold": float, "leak": float,
        "refrac_len": int, "w_inh": float, "init_max": float, "epochs": int,
    }
    net = {name: cast(values.pop(f"stdp_net.{name}")) for name, cast in casts.items() if f"stdp_net.{name}" in values}
    mode = kwargs.get("mode")
    if not net and mode not in (ExperimentMode.STDP_TRAINING, ExperimentMode.STDP_INFERENCE):
        return None
    hardware = net.get("hardware", True)
    rule = net.pop("rule", None) or stdp_kwargs.get("mode")
    if rule is None:
        rule = StdpMode.FIXED_DELTA if hardware else StdpMode.ADAPTIVE_DELTA
    stdp_kwargs = {**stdp_kwargs, "mode": rule}
    stdp = StdpParams.for_weight_bits(8, **stdp_kwargs) if hardware else StdpParams(**stdp_kwargs)
    layers = kwargs.get("layers")
    if layers:
        net.setdefault("n_inputs", layers[0])
        if len(layers) == 2:
            net.setdefault("n_neurons", layers[1])
    return StdpNetworkConfig(seed=seed, stdp=stdp, **net)


# -- the SoC ----------------------------------------------------------------------------

@dataclass
class ProcessingElement:
    address: PeAddress
    layer: int
    core_index: int
    ni: NetworkInterface


@dataclass
class StepStats:
    drain_cycles: list[int] = field(default_factory=list)
    spikes_in: int = 0
    spikes_out: int = 0

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.drain_cycles)) if self.drain_cycles else 0.0


class NeuroSoc:
    """A `SpikingNetwork` placed on a mesh; spikes between layers travel as flits."""

    def __init__(
        self,
        network: SpikingNetwork,
        mapping: dict[str, list[PeAddress]],
        dims: tuple[int, int, int] = (4, 4, 2),
        router: RouterConfig | None = None,
        bit_error_rate: float = 0.0,
        seed: int = 0,
        drain_limit: int = 100_000,
        trace: FlitTrace | None = None,
    ):
        self.network = network
        self.mesh = Mesh(dims, router, bit_error_rate=bit_error_rate, seed=seed, trace=trace)
        self.drain_limit = drain_limit
        inputs = mapping["input"]
        self.input_groups = [(pe, a, b) for pe, (a, b) in zip(inputs, _chunks(network.n_in, len(inputs)))]
        if len(self.input_groups) != len(inputs):
            raise ConfigError("more input groups than inputs")
        self.pes: list[list[ProcessingElement]] = []
        for l, layer in enumerate(network.layers):
            addrs = mapping.get(f"layer{l}", [])
            if len(addrs) != len(layer.cores):
                raise ConfigError(f"layer{l} has {len(layer.cores)} core(s) but {len(addrs)} PE(s) mapped")
            if l == 0:
                sources = [(pe, b - a) for pe, a, b in self.input_groups]
            else:
                sources = [(pe.address, core.n_post) for pe, core in zip(self.pes[-1], network.layers[l - 1].cores)]
            row = []
            for k, (addr, core) in enumerate(zip(addrs, layer.cores)):
                if addr not in self.mesh:
                    raise ConfigError(f"PE {addr} is outside the mesh")
                tables = NiTables.dense(sources)
                if tables.width != core.n_pre:
                    raise ConfigError(f"layer{l} core {k}: NI width {tables.width} != n_pre {core.n_pre}")
                ni = NetworkInterface(addr, tables, {MemKind.WEIGHT: core.memory})
                row.append(ProcessingElement(addr, l, k, ni))
            self.pes.append(row)
        self.stats = StepStats()
        self._pending: list[list[SpikeArray]] = []

    @property
    def n_in(self) -> int:
        return self.network.n_in

    @property
    def n_out(self) -> int:
        return self.network.n_out

    @property
    def layers(self):
        return self.network.layers

    def reset(self) -> None:
        self.network.reset()
        self._pending = []

    def _inject_spikes(self, src: PeAddress, spikes: SpikeArray, dests: list[ProcessingElement]) -> None:
        for nid in spikes.indices():
            for pe in dests:
                self.mesh.inject(src, encode_flit(Flit.spike(src, pe.address, nid)))

    def step(self, input_spikes: SpikeArray) -> SpikeArray:
        if input_spikes.width != self.n_in:
            raise ContractViolation(f"input width {input_spikes.width} != {self.n_in}")
        for pe, a, b in self.input_groups:
            self._inject_spikes(pe, input_spikes.slice(a, b), self.pes[0])
        for l, outputs in enumerate(self._pending):
            for pe, out in zip(self.pes[l], outputs):
                self._inject_spikes(pe.address, out, self.pes[l + 1])
        self.stats.spikes_in += input_spikes.count()
        drained = self.mesh.drain(self.drain_limit)
        self.stats.drain_cycles.append(drained)
        logger.debug("step barrier: %d cycles, %d flits delivered so far", drained, self.mesh.stats.delivered)
        pending, final = [], None
        for l, row in enumerate(self.pes):
            layer = self.network.layers[l]
            outputs = []
            for pe in row:
                for word in self.mesh.collect(pe.address):
                    for reply in pe.ni.receive(word):
                        self.mesh.inject(pe.address, encode_flit(reply))
                outputs.append(layer.step_core(pe.core_index, pe.ni.new_timestep()))
            if l < len(self.pes) - 1:
                pending.append(outputs)
            else:
                final = SpikeArray.concat(outputs)
        self._pending = pending
        self.stats.spikes_out += final.count()
        return final

    def run(self, raster) -> np.ndarray:
        raster = np.asarray(raster, dtype=bool)
        self.reset()
        out = np.zeros((raster.shape[0], self.n_out), dtype=bool)
        for t, row in enumerate(raster):
            out[t] = self.step(SpikeArray.from_bools(row)).to_bools()
        return out

    def ni_counters(self) -> dict[str, int]:
        total: dict[str, int] = {}
        for row in self.pes:
            for pe in row:
                for k, v in pe.ni.counters.items():
                    total[k] = total.get(k, 0) + v
        return total

    def losses(self) -> int:
        counters = self.ni_counters()
        lost = sum(counters.get(k, 0) for k in ("parity", "malformed", "cam_miss", "unmapped", "cursor_overflow"))
        return self.mesh.stats.dropped_total + lost

    def program_weights(self, host: PeAddress, layer: int, core_index: int, table) -> int:
        """Stream a weight table into one core as MemWrite flits; returns flits sent."""
        pe = self.pes[layer][core_index]
        memory = self.network.layers[layer].cores[core_index].memory
        if not memory.fixed or memory.w_bits > 8:
            raise ContractViolation("only 8-bit fixed-point weights travel in memory flits")
        pe.ni.reset_cursors()
        sent = 0
        for raw in np.asarray(table, dtype=np.int64).ravel():
            flit = Flit.mem_write(pe.address, MemKind.WEIGHT, int(raw) & 0xFF, host)
            self.mesh.inject(host, encode_flit(flit))
            sent += 1
        self.mesh.drain(self.drain_limit + sent * 16)
        for word in self.mesh.collect(pe.address):
            pe.ni.receive(word)
        return sent

    def read_back_weights(self, host: PeAddress, layer: int, core_index: int) -> np.ndarray:
        pe = self.pes[layer][core_index]
        memory = self.network.layers[layer].cores[core_index].memory
        self.mesh.inject(host, encode_flit(Flit.mem_read(pe.address, MemKind.WEIGHT, host)))
        self.mesh.drain(self.drain_limit)
        replies = []
        for word in self.mesh.collect(pe.address):
            replies.extend(pe.ni.receive(word))
        for flit in replies:
            self.mesh.inject(pe.address, encode_flit(flit))
        self.mesh.drain(self.drain_limit + len(replies) * 16)
        values = []
        for word in self.mesh.collect(host):
            data = decode_flit(word).data
            values.append(data - 256 if data & 0x80 else data)
        if len(values) != memory.size:
            raise SimulationError(f"read back {len(values)} of {memory.size} weights")
        return np.array(values, dtype=np.int64).reshape(memory.n_pre, memory.n_post)


def build_transport(network: SpikingNetwork, config: SystemConfig):
    if config.transport is Transport.DIRECT:
        return network
    return NeuroSoc(
        network,
        config.mapping,
        config.mesh_dims,
        RouterConfig(buffer_depth=config.buffer_depth),
        bit_error_rate=config.bit_error_rate,
        seed=config.seed,
        drain_limit=config.drain_limit,
    )


# -- experiments ------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    mode: ExperimentMode
    metrics: dict
    curve: dict[str, np.ndarray] = field(default_factory=dict)
    artefacts: dict = field(default_factory=dict)

    def rows(self):
        for name, curve in self.curve.items():
            for step, acc in enumerate(curve, start=1):
                yield step, name, f"{acc:.6f}"


def _transport_metrics(transport) -> dict:
    if not isinstance(transport, NeuroSoc):
        return {"transport": Transport.DIRECT.value}
    mesh = transport.mesh
    return {
        "transport": Transport.NOC.value,
        "flits_injected": mesh.stats.injected,
        "flits_delivered": mesh.stats.delivered,
        "flits_dropped": mesh.stats.dropped_total,
        "flit_hops": mesh.stats.hops,
        "noc_cycles": mesh.cycle_count,
        "mean_step_latency": round(transport.stats.mean_latency, 6),
        "max_step_latency": max(transport.stats.drain_cycles, default=0),
        "losses": transport.losses(),
    }


def run_experiment(
    config: SystemConfig,
    train: list[Sample] | None = None,
    test: list[Sample] | None = None,
    model: MlpModel | None = None,
    network: SpikingNetwork | None = None,
) -> ExperimentResult:
    """Run one configured experiment; results depend only on config, data and seed."""
    logger.info("Experiment start: mode=%s transport=%s seed=%d", config.mode.value, config.transport.value, config.seed)
    if config.mode is ExperimentMode.ANN_CONVERSION:
        result = _run_conversion(config, train, test, model, network)
    elif config.mode is ExperimentMode.STDP_TRAINING:
        result = _run_stdp_training(config, train, test)
    else:
        result = _run_stdp_inference(config, test)
    logger.info("Experiment finished: %s", result.metrics)
    return result


def _require(samples, what: str) -> list[Sample]:
    if samples is None:
        raise ConfigError(f"{what} samples are required for this mode")
    return samples


def _core_cycles(network: SpikingNetwork) -> int:
    return sum(core.cycles for core in network.cores())


def _run_conversion(config, train, test, model, network) -> ExperimentResult:
    test = _require(test, "test")
    if network is None:
        if model is None:
            if not config.model_path:
                raise ConfigError("ann_conversion needs model_path or a model")
            model = MlpModel.load(config.model_path)
        if train is not None:
            model = normalize_for_snn(model, train[: config.calibration])
        network = convert_variant(model, config.variant)
    transport = build_transport(network, config)
    report = evaluate(transport, test, config.encoder, config.variant.name)
    name = config.variant.name
    metrics = {
        "accuracy": round(report.final(name), 6),
        "saturation_step": report.saturation_step(name),
        "computation_saving": round(report.computation_saving(name), 6),
        "samples": len(test),
        "core_cycles": _core_cycles(network),
        **_transport_metrics(transport),
    }
    return ExperimentResult(config.mode, metrics, curve=dict(report.curves))


def _run_stdp_training(config, train, test) -> ExperimentResult:
    train = _require(train, "training")
    net_config = config.stdp_network
    network = build_stdp_network(net_config)
    transport = build_transport(network, config)
    result = stdp_train(net_config, train, encoder=config.encoder, runner=transport, network=network)
    metrics = {
        "samples_seen": result.samples_seen,
        "train_spikes": result.train_spikes,
        "assigned_neurons": int((result.assignments >= 0).sum()),
        **_transport_metrics(transport),
    }
    if test is not None:
        accuracy, _ = stdp_evaluate(result, test, config.encoder, runner=transport)
        metrics["accuracy"] = round(accuracy, 6)
    return ExperimentResult(config.mode, metrics, artefacts={"stdp": result})


def _run_stdp_inference(config, test) -> ExperimentResult:
    test = _require(test, "test")
    if not config.weights_dir:
        raise ConfigError("stdp_inference needs weights_dir")
    result = load_stdp(config.weights_dir, config.stdp_network)
    transport = build_transport(result.network, config)
    accuracy, predictions = stdp_evaluate(result, test, config.encoder, runner=transport)
    metrics = {"accuracy": round(accuracy, 6), "samples": len(test), **_transport_metrics(transport)}
    return ExperimentResult(config.mode, metrics, artefacts={"predictions": predictions})


def compare_conversion(model: MlpModel, test: list[Sample], encoder: EncoderParams, variants: list[str]):
    return compare_variants(model, test, encoder, [SnnVariant.parse(v) for v in variants])
