import csv

import numpy as np
import pytest

from neurosoc.errors import ContractViolation, ParityError, SimulationError
from neurosoc.services.noc import (
    Flit,
    FlitKind,
    FlitTrace,
    LinearMemory,
    MemKind,
    Mesh,
    NetworkInterface,
    NiTables,
    PeAddress,
    Port,
    RouterConfig,
    aer_to_spike_array,
    decode_flit,
    encode_flit,
    mem_access,
    mesh_cycle,
    neighbor,
    parity,
    route,
    run_random_traffic,
    spike_array_to_aer,
)
from neurosoc.services.snpc import FloatWeightMemory, SpikeArray, WeightMemory


def _addr(rng, dims=(8, 8, 8)):
    return PeAddress(*(int(rng.integers(0, d)) for d in dims))


def _random_flit(rng):
    kind = FlitKind(int(rng.integers(0, 4)))
    if kind is FlitKind.SPIKE:
        return Flit.spike(_addr(rng), _addr(rng), int(rng.integers(0, 256)))
    return Flit(kind, _addr(rng), _addr(rng), mem_kind=MemKind(int(rng.integers(0, 3))), data=int(rng.integers(0, 256)))


def test_codec_identity(rng):
    for _ in range(100_000):
        flit = _random_flit(rng)
        word = encode_flit(flit)
        assert 0 <= word < 1 << 32
        assert parity(word) == word >> 31
        assert decode_flit(word) == flit


def test_zero_spike_flit_has_zero_parity():
    assert encode_flit(Flit.spike(PeAddress(), PeAddress(), 0)) == 0


def test_field_layout():
    word = encode_flit(Flit.spike(PeAddress(1, 2, 3), PeAddress(4, 5, 6), 200))
    assert word & 0b11 == FlitKind.SPIKE
    assert (word >> 2) & 0x1FF == 4 | 5 << 3 | 6 << 6
    assert (word >> 11) & 0x1FF == 1 | 2 << 3 | 3 << 6
    assert (word >> 20) & 0xFF == 200
    assert (word >> 30) & 1 == 0


def test_every_single_bit_flip_is_detected(rng):
    for _ in range(1000):
        word = encode_flit(_random_flit(rng))
        for bit in range(32):
            with pytest.raises(ParityError):
                decode_flit(word ^ (1 << bit))


def test_flit_field_ranges_checked():
    with pytest.raises(ContractViolation):
        PeAddress(8, 0, 0)
    with pytest.raises(ContractViolation):
        Flit.spike(PeAddress(), PeAddress(), 256)
    with pytest.raises(ContractViolation):
        Flit.mem_write(PeAddress(), MemKind.WEIGHT, 300)


def test_route_examples():
    here = PeAddress(1, 1, 1)
    assert route(here, here) is Port.LOCAL
    assert route(PeAddress(0, 0, 0), PeAddress(2, 0, 0)) is Port.EAST
    assert route(PeAddress(2, 0, 0), PeAddress(2, 3, 1)) is Port.NORTH
    assert route(PeAddress(2, 3, 0), PeAddress(2, 3, 1)) is Port.UP


def test_route_walk_is_minimal(rng):
    dims = (8, 8, 8)
    for _ in range(2000):
        cur, dest = _addr(rng), _addr(rng)
        expected = abs(cur.x - dest.x) + abs(cur.y - dest.y) + abs(cur.z - dest.z)
        hops = 0
        while (port := route(cur, dest)) is not Port.LOCAL:
            cur = neighbor(cur, port, dims)
            hops += 1
        assert cur == dest and hops == expected


def _deliver(mesh, limit=100):
    for _ in range(limit):
        mesh_cycle(mesh)
        for addr in mesh.routers:
            words = mesh.collect(addr)
            if words:
                return mesh.cycle_count, addr, words
    raise AssertionError("nothing delivered")


def test_adjacent_delivery_latency():
    mesh = Mesh((4, 4, 2))
    word = encode_flit(Flit.spike(PeAddress(0, 0, 0), PeAddress(1, 0, 0), 7))
    mesh.inject(PeAddress(0, 0, 0), word)
    cycle, addr, words = _deliver(mesh)
    assert (cycle, addr, words) == (2, PeAddress(1, 0, 0), [word])


def test_latency_is_hops_plus_one():
    mesh = Mesh((4, 4, 2))
    src, dest = PeAddress(0, 0, 0), PeAddress(3, 2, 1)
    mesh.inject(src, encode_flit(Flit.spike(src, dest, 1)))
    cycle, addr, _ = _deliver(mesh)
    assert addr == dest and cycle == 6 + 1
    assert mesh.stats.hops == 6


def test_contention_costs_one_cycle():
    mesh = Mesh((3, 1, 1))
    dest = PeAddress(1, 0, 0)
    for src in (PeAddress(0, 0, 0), PeAddress(2, 0, 0)):
        mesh.inject(src, encode_flit(Flit.spike(src, dest, 0)))
    arrivals = []
    for _ in range(10):
        mesh.cycle()
        arrivals += [mesh.cycle_count] * len(mesh.collect(dest))
    assert arrivals == [2, 3]


def test_backpressure_holds_flits_in_source_queue():
    mesh = Mesh((2, 1, 1), RouterConfig(buffer_depth=1))
    src, dest = PeAddress(0, 0, 0), PeAddress(1, 0, 0)
    for n in range(5):
        mesh.inject(src, encode_flit(Flit.spike(src, dest, n)))
    assert mesh.in_flight() == 5
    spent = mesh.drain()
    got = [decode_flit(w).neuron_id for w in mesh.collect(dest)]
    assert got == [0, 1, 2, 3, 4]
    assert spent >= 5 and mesh.conserved()


def test_drain_limit_raises():
    mesh = Mesh((4, 1, 1))
    src = PeAddress(0, 0, 0)
    mesh.inject(src, encode_flit(Flit.spike(src, PeAddress(3, 0, 0), 0)))
    with pytest.raises(SimulationError):
        mesh.drain(limit=2)


def test_out_of_mesh_destination_is_dropped_as_misroute():
    mesh = Mesh((2, 2, 1))
    src = PeAddress(1, 1, 0)
    mesh.inject(src, encode_flit(Flit.spike(src, PeAddress(5, 1, 0), 0)))
    mesh.drain()
    assert mesh.stats.dropped["misroute"] == 1
    assert mesh.conserved()


def test_bit_errors_are_dropped_at_ejection():
    mesh = Mesh((4, 4, 1), bit_error_rate=1.0, seed=3)
    src, dest = PeAddress(0, 0, 0), PeAddress(1, 0, 0)
    mesh.inject(src, encode_flit(Flit.spike(src, dest, 5)))
    mesh.drain()
    assert mesh.stats.delivered == 0
    assert mesh.stats.dropped_total == 1
    assert mesh.conserved()


def test_low_load_random_traffic_delivers_everything():
    report = run_random_traffic(Mesh((4, 4, 2)), rate=0.05, cycles=2000, seed=1)
    assert report.injected > 0
    assert report.delivered == report.injected
    assert report.dropped == {}
    assert report.conserved_every_cycle
    assert report.mean_latency >= 1


@pytest.mark.slow
def test_long_random_traffic_never_deadlocks():
    report = run_random_traffic(Mesh((4, 4, 2)), rate=0.2, cycles=100_000, seed=7)
    assert report.delivered == report.injected
    assert report.conserved_every_cycle


def test_trace_csv(tmp_path):
    trace = FlitTrace()
    mesh = Mesh((2, 1, 1), trace=trace)
    src, dest = PeAddress(0, 0, 0), PeAddress(1, 0, 0)
    mesh.inject(src, encode_flit(Flit.spike(src, dest, 9)))
    mesh.drain()
    path = trace.write_csv(tmp_path / "trace.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["event"] for r in rows] == ["inject", "hop", "deliver"]
    assert rows[0] == {"cycle": "0", "event": "inject", "kind": "spike", "src": "0-0-0", "dest": "1-0-0", "neuron_id": "9"}


def test_aer_examples():
    src = PeAddress(0, 1, 0)
    tables = NiTables.dense([(src, 4)])
    array, stats = aer_to_spike_array([], tables)
    assert array == SpikeArray.zeros(4)
    array, _ = aer_to_spike_array([(src, 1), (src, 3)], tables)
    assert array.bits == 0b1010
    dup, stats = aer_to_spike_array([(src, 1), (src, 3), (src, 3)], tables)
    assert dup == array and stats.accepted == 3


def test_aer_matches_literal_loop(rng):
    src = PeAddress(2, 2, 0)
    tables = NiTables.dense([(src, 256)])
    for _ in range(100):
        ids = rng.integers(0, 256, size=rng.integers(0, 40)).tolist()
        spike_in = 0
        for n in ids:
            spike_in = spike_in | 1 << n
        array, _ = aer_to_spike_array([(src, n) for n in ids], tables)
        assert array.bits == spike_in


def test_dense_tables_concatenate_sources():
    a, b = PeAddress(0, 0, 0), PeAddress(1, 0, 0)
    tables = NiTables.dense([(a, 3), (b, 2)])
    assert tables.width == 5
    array, stats = aer_to_spike_array([(b, 1), (a, 0), (PeAddress(3, 0, 0), 0)], tables)
    assert array.indices() == [0, 4]
    assert stats.unmapped == 1


def test_sparse_cam_hits_and_misses():
    a = PeAddress(0, 0, 0)
    tables = NiTables.sparse_map([(a, 7), (a, 100), (PeAddress(1, 1, 0), 3)])
    array, stats = aer_to_spike_array([(a, 100), (a, 5), (PeAddress(1, 1, 0), 3)], tables)
    assert array.indices() == [1, 2]
    assert stats.cam_miss == 1 and stats.accepted == 2


def test_ni_tables_must_be_injective():
    with pytest.raises(ContractViolation):
        NiTables(width=2, pe_lut={PeAddress(): 0}, neuron_lut={(0, 0): 1, (0, 1): 1})


def test_spike_array_to_aer_fanout():
    src = PeAddress(1, 0, 0)
    assert spike_array_to_aer(SpikeArray.zeros(8), src, [PeAddress()]) == []
    flits = spike_array_to_aer(SpikeArray.from_indices([5], 8), src, [PeAddress(0, 0, 0), PeAddress(2, 0, 0)])
    assert len(flits) == 2
    assert all(f.src == src and f.neuron_id == 5 for f in flits)
    ordered = spike_array_to_aer(SpikeArray.from_indices([6, 2], 8), src, [PeAddress()])
    assert [f.neuron_id for f in ordered] == [2, 6]


def test_aer_round_trip(rng):
    src = PeAddress(0, 0, 1)
    tables = NiTables.dense([(src, 64)])
    for _ in range(100):
        original = SpikeArray.from_bools(rng.random(64) < 0.2)
        flits = spike_array_to_aer(original, src, [PeAddress()])
        array, _ = aer_to_spike_array([(f.src, f.neuron_id) for f in flits], tables)
        assert array == original


def test_ni_receive_builds_timestep_array():
    src = PeAddress(1, 0, 0)
    ni = NetworkInterface(PeAddress(), NiTables.dense([(src, 8)]))
    for nid in (3, 1, 3):
        ni.receive(encode_flit(Flit.spike(src, PeAddress(), nid)))
    ni.receive(encode_flit(Flit.spike(src, PeAddress(), 2)) ^ 1 << 15)
    assert ni.new_timestep().indices() == [1, 3]
    assert ni.new_timestep() == SpikeArray.zeros(8)
    assert ni.counters["parity"] == 1


def test_mem_write_then_read_back():
    weights = WeightMemory(2, 3)
    me, host = PeAddress(1, 1, 0), PeAddress(0, 0, 0)
    ni = NetworkInterface(me, memories={MemKind.WEIGHT: weights})
    values = [-5, 7, 127, -128, 0, 1]
    writes = [Flit.mem_write(me, MemKind.WEIGHT, v & 0xFF, host) for v in values]
    assert mem_access(ni, writes) == []
    assert weights.to_table().ravel().tolist() == values
    replies = mem_access(ni, [Flit.mem_read(me, MemKind.WEIGHT, host)])
    assert [r.dest for r in replies] == [host] * 6
    assert all(r.kind is FlitKind.MEM_DATA and r.src == me for r in replies)
    assert [r.data for r in replies] == [v & 0xFF for v in values]


def test_read_of_untouched_memory_streams_init_value():
    ni = NetworkInterface(PeAddress(), memories={MemKind.OTHER: LinearMemory(4, init=9)})
    replies = ni.mem_access(Flit.mem_read(PeAddress(), MemKind.OTHER))
    assert [r.data for r in replies] == [9, 9, 9, 9]


def test_memory_kinds_use_independent_cursors():
    weights, sparse = WeightMemory(1, 4), LinearMemory(4)
    ni = NetworkInterface(PeAddress(), memories={MemKind.WEIGHT: weights, MemKind.SPARSE: sparse})
    stream = [(MemKind.WEIGHT, 1), (MemKind.SPARSE, 10), (MemKind.WEIGHT, 2), (MemKind.SPARSE, 20)]
    mem_access(ni, [Flit.mem_write(PeAddress(), kind, v) for kind, v in stream])
    assert weights.to_table().ravel().tolist() == [1, 2, 0, 0]
    assert sparse.cells == [10, 20, 0, 0]


def test_cursor_overflow_is_counted():
    ni = NetworkInterface(PeAddress(), memories={MemKind.SPARSE: LinearMemory(2)})
    mem_access(ni, [Flit.mem_write(PeAddress(), MemKind.SPARSE, v) for v in (1, 2, 3)])
    assert ni.counters["cursor_overflow"] == 1
    assert ni.memories[MemKind.SPARSE].cells == [1, 2]



def test_float_weight_memory_is_not_mesh_addressable():
    ni = NetworkInterface(PeAddress(), memories={MemKind.WEIGHT: FloatWeightMemory(2, 2)})
    with pytest.raises(ContractViolation, match="float memories"):
        ni.mem_access(Flit.mem_write(PeAddress(), MemKind.WEIGHT, 5))
    with pytest.raises(ContractViolation, match="float memories"):
        ni.mem_access(Flit.mem_read(PeAddress(), MemKind.WEIGHT))


def test_random_traffic_latency_statistics():
    report = run_random_traffic(Mesh((2, 2, 1)), rate=0.02, cycles=500, seed=4)
    assert report.max_latency >= report.mean_latency >= 1
    assert isinstance(report.mean_latency, float)
    assert np.isfinite(report.mean_latency)
