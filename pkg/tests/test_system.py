import numpy as np
import pytest

from neurosoc.errors import ConfigError, ContractViolation
from neurosoc.services.convert import MlpModel, convert_to_snn
from neurosoc.services.encoding import EncoderParams, Sample
from neurosoc.services.learning import StdpMode, WeightDependence
from neurosoc.services.network import Layer, SpikingNetwork
from neurosoc.services.noc import FlitTrace, PeAddress, RouterConfig
from neurosoc.services.snpc import CoreConfig, Snpc, SpikeArray, load_weights
from neurosoc.services.system import (
    ExperimentMode,
    NeuroSoc,
    SystemConfig,
    Transport,
    block_mapping,
    parse_dims,
    run_experiment,
)


def _model(sizes, rng):
    weights = [np.abs(rng.normal(0, 0.3, size=(a, b))) for a, b in zip(sizes, sizes[1:])]
    return MlpModel(list(sizes), weights, [np.zeros(b) for b in sizes[1:]])


def test_parse_dims():
    assert parse_dims("4x4x2") == (4, 4, 2)
    assert parse_dims("2,3,1") == (2, 3, 1)
    with pytest.raises(ConfigError):
        parse_dims("4x4")
    with pytest.raises(ConfigError):
        parse_dims("axbxc")


def test_block_mapping_is_raster_ordered():
    mapping = block_mapping((2, 2, 2), [784, 48, 10])
    assert [str(p) for p in mapping["input"]] == ["0-0-0", "1-0-0", "0-1-0", "1-1-0"]
    assert [str(p) for p in mapping["layer0"]] == ["0-0-1"]
    assert [str(p) for p in mapping["layer1"]] == ["1-0-1"]
    with pytest.raises(ConfigError):
        block_mapping((1, 1, 2), [784, 48, 10])


def test_system_config_defaults_and_round_trip():
    config = SystemConfig()
    assert config.variant.name == "7bit"
    again = SystemConfig.from_mapping(config.to_mapping())
    assert again.mesh_dims == config.mesh_dims
    assert again.layers == config.layers
    assert again.mapping == config.mapping


def test_system_config_rejects_bad_values():
    with pytest.raises(ConfigError, match="unknown config keys"):
        SystemConfig.from_mapping({"mesh.dimz": "2x2x2"})
    with pytest.raises(ConfigError):
        SystemConfig.from_mapping({"mesh.dims": "9x1x1"})
    with pytest.raises(ConfigError):
        SystemConfig.from_mapping({"mode": "dreaming"})
    with pytest.raises(ConfigError, match="outside mesh"):
        SystemConfig.from_mapping({"mesh.dims": "2x2x1", "network.layers": "8:4", "mapping.input": "0-0-0", "mapping.layer0": "3-0-0"})
    with pytest.raises(ConfigError, match="both"):
        SystemConfig(
            mesh_dims=(2, 2, 1),
            layers=(8, 4, 2),
            mapping={
                "input": [PeAddress(0, 0, 0)],
                "layer0": [PeAddress(1, 0, 0)],
                "layer1": [PeAddress(1, 0, 0)],
            },
        )


def test_system_config_picks_up_stdp_network():
    config = SystemConfig.from_mapping({"mode": "stdp_training", "mesh.dims": "2x2x2", "stdp_net.n_neurons": "20"})
    assert config.layers == (784, 20)
    assert config.stdp_network.n_neurons == 20
    software = SystemConfig.from_mapping({"mode": "stdp_training", "stdp_net.hardware": "false", "mesh.dims": "2x2x2"})
    assert not software.stdp_network.hardware
    assert software.stdp_network.stdp.mode is StdpMode.ADAPTIVE_DELTA


def test_system_config_learning_rule_selection():
    base = {"mode": "stdp_training", "mesh.dims": "2x2x2"}
    fixed_float = SystemConfig.from_mapping({**base, "stdp_net.hardware": "false", "stdp_net.rule": "fixed"})
    assert fixed_float.stdp_network.variant == "fixed"
    assert fixed_float.stdp_network.stdp.mode is StdpMode.FIXED_DELTA
    hardware = SystemConfig.from_mapping({**base, "stdp.theta_plus": "0.1"})
    assert hardware.stdp_network.stdp.theta_decay == 1.0
    assert hardware.stdp_network.stdp.theta_plus == 0.1
    soft = SystemConfig.from_mapping({**base, "stdp_net.hardware": "false", "stdp.weight_dependence": "soft_bound"})
    assert soft.stdp_network.stdp.weight_dependence is WeightDependence.SOFT_BOUND
    with pytest.raises(ConfigError, match="fixed-delta"):
        SystemConfig.from_mapping({**base, "stdp_net.rule": "adaptive"})
    with pytest.raises(ConfigError):
        SystemConfig.from_mapping({**base, "stdp_net.rule": "hebbian"})


def _single_core(rng, n_pre=16, n_post=12):
    core = Snpc(CoreConfig(n_pre=n_pre, n_post=n_post, threshold=1.0))
    load_weights(core, rng.integers(-40, 100, size=(n_pre, n_post)))
    return core


def test_loopback_pe_matches_core_step(rng):
    here = PeAddress(0, 0, 0)
    core = _single_core(rng)
    twin = Snpc(core.config)
    load_weights(twin, core.memory.to_table())
    soc = NeuroSoc(SpikingNetwork([Layer([core])]), {"input": [here], "layer0": [here]}, dims=(1, 1, 1))
    for row in rng.random((60, 16)) < 0.3:
        spikes = SpikeArray.from_bools(row)
        assert soc.step(spikes) == twin.step(spikes)
    assert soc.losses() == 0


def test_noc_transport_equals_direct_composition(rng):
    model = _model([20, 14, 6], rng)
    direct = convert_to_snn(model, 7, core_width=8)
    placed = convert_to_snn(model, 7, core_width=8)
    mapping = {
        "input": [PeAddress(0, 0, 0), PeAddress(1, 0, 0)],
        "layer0": [PeAddress(0, 1, 0), PeAddress(1, 1, 1)],
        "layer1": [PeAddress(0, 0, 1)],
    }
    soc = NeuroSoc(placed, mapping, dims=(2, 2, 2), router=RouterConfig(buffer_depth=2))
    raster = rng.random((50, 20)) < 0.4
    assert np.array_equal(soc.run(raster), direct.run(raster))
    assert soc.mesh.stats.injected == soc.mesh.stats.delivered
    assert soc.losses() == 0
    assert soc.stats.spikes_in == int(raster.sum())


def test_noc_run_is_deterministic(rng, tmp_path):
    model = _model([10, 6, 3], rng)
    raster = rng.random((30, 10)) < 0.5
    runs = []
    for _ in range(2):
        trace = FlitTrace()
        mapping = {"input": [PeAddress(0, 0, 0)], "layer0": [PeAddress(1, 1, 0)], "layer1": [PeAddress(1, 0, 0)]}
        soc = NeuroSoc(convert_to_snn(model, 7), mapping, dims=(2, 2, 1), trace=trace)
        runs.append((soc.run(raster), soc.stats.drain_cycles, trace.write_csv(tmp_path / "t.csv").read_text()))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1:] == runs[1][1:]


def test_core_mapping_must_match_network(rng):
    core = _single_core(rng)
    net = SpikingNetwork([Layer([core])])
    with pytest.raises(ConfigError):
        NeuroSoc(net, {"input": [PeAddress()], "layer0": [PeAddress(0, 0, 0), PeAddress(1, 0, 0)]}, dims=(2, 1, 1))
    soc = NeuroSoc(net, {"input": [PeAddress()], "layer0": [PeAddress(1, 0, 0)]}, dims=(2, 1, 1))
    with pytest.raises(ContractViolation):
        soc.step(SpikeArray.zeros(15))


def test_weights_program_and_read_back_over_the_mesh(rng):
    core = Snpc(CoreConfig(n_pre=6, n_post=5))
    soc = NeuroSoc(SpikingNetwork([Layer([core])]), {"input": [PeAddress()], "layer0": [PeAddress(2, 1, 0)]}, dims=(3, 2, 1))
    table = rng.integers(-128, 128, size=(6, 5))
    host = PeAddress(0, 1, 0)
    assert soc.program_weights(host, 0, 0, table) == 30
    assert np.array_equal(core.memory.to_table(), table)
    assert np.array_equal(soc.read_back_weights(host, 0, 0), table)


def _samples(rng, n=4):
    return [Sample(rng.random(784) * 0.9, int(k % 10)) for k in range(n)]


def test_conversion_experiment_is_reproducible(rng):
    model = _model([784, 12, 10], rng)
    test = _samples(rng)
    config = SystemConfig(
        mesh_dims=(2, 2, 2),
        layers=(784, 12, 10),
        encoder=EncoderParams(n_steps=15, rng_seed=3),
        seed=3,
    )
    first = run_experiment(config, test=test, model=model)
    second = run_experiment(config, test=test, model=model)
    assert first.metrics == second.metrics
    assert first.metrics["transport"] == "noc"
    assert first.metrics["losses"] == 0
    direct = run_experiment(
        SystemConfig(
            mesh_dims=(2, 2, 2),
            layers=(784, 12, 10),
            encoder=EncoderParams(n_steps=15, rng_seed=3),
            seed=3,
            transport=Transport.DIRECT,
        ),
        test=test,
        model=model,
    )
    assert direct.metrics["accuracy"] == first.metrics["accuracy"]
    np.testing.assert_array_equal(direct.curve["7bit"], first.curve["7bit"])
    rows = list(first.rows())
    assert rows[0][0] == 1 and rows[0][1] == "7bit"


def test_experiment_needs_its_inputs():
    with pytest.raises(ConfigError):
        run_experiment(SystemConfig(mesh_dims=(2, 2, 2)), test=[])
    with pytest.raises(ConfigError):
        run_experiment(SystemConfig(mesh_dims=(2, 2, 2), mode=ExperimentMode.STDP_TRAINING))
    with pytest.raises(ConfigError):
        run_experiment(SystemConfig(mesh_dims=(2, 2, 2), mode=ExperimentMode.STDP_INFERENCE), test=[])
