"""On-chip network: single-flit packets, 7-port routers on a 3D mesh, network interfaces.

Flit layout (32-bit word, bit 0 = LSB):

    [1:0]   kind
    [10:2]  destination PE (x | y << 3 | z << 6)
    spike:  [19:11] source PE, [27:20] neuron id, [29:28] spare
    memory: [12:11] memory kind, [20:13] data, [29:21] requester PE
    [30]    reserved
    [31]    even parity over bits 0..30
"""
from __future__ import annotations

import csv
import enum
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import ContractViolation, NeurosocError, ParityError, SimulationError
from .snpc import SpikeArray

logger = logging.getLogger(__name__)

AXIS_BITS = 3
MAX_DIM = 1 << AXIS_BITS
DATA_BITS = 8
PAYLOAD_MASK = (1 << 31) - 1


class FlitKind(enum.IntEnum):
    SPIKE = 0
    MEM_WRITE = 1
    MEM_READ = 2
    MEM_DATA = 3


class MemKind(enum.IntEnum):
    WEIGHT = 0
    SPARSE = 1
    OTHER = 2


@dataclass(frozen=True, order=True)
class PeAddress:
    x: int = 0
    y: int = 0
    z: int = 0

    def __post_init__(self):
        for axis in (self.x, self.y, self.z):
            if not 0 <= axis < MAX_DIM:
                raise ContractViolation(f"PE coordinate {axis} outside 0..{MAX_DIM - 1}")

    def pack(self) -> int:
        return self.x | self.y << AXIS_BITS | self.z << (2 * AXIS_BITS)

    @classmethod
    def unpack(cls, bits: int) -> "PeAddress":
        m = MAX_DIM - 1
        return cls(bits & m, (bits >> AXIS_BITS) & m, (bits >> (2 * AXIS_BITS)) & m)

    @classmethod
    def parse(cls, text: str) -> "PeAddress":
        parts = [int(p) for p in text.replace(",", "-").split("-")]
        if len(parts) != 3:
            raise ContractViolation(f"PE address must be x-y-z, got {text!r}")
        return cls(*parts)

    def within(self, dims: tuple[int, int, int]) -> bool:
        return self.x < dims[0] and self.y < dims[1] and self.z < dims[2]

    def __str__(self) -> str:
        return f"{self.x}-{self.y}-{self.z}"


@dataclass(frozen=True)
class Flit:
    kind: FlitKind
    dest: PeAddress
    src: PeAddress = PeAddress()
    neuron_id: int = 0
    mem_kind: MemKind = MemKind.WEIGHT
    data: int = 0

    def __post_init__(self):
        if not 0 <= self.neuron_id < 256:
            raise ContractViolation(f"neuron_id {self.neuron_id} outside 0..255")
        if not 0 <= self.data < (1 << DATA_BITS):
            raise ContractViolation(f"data {self.data} outside {DATA_BITS} bits")
        if self.kind is FlitKind.SPIKE and (self.data or self.mem_kind is not MemKind.WEIGHT):
            raise ContractViolation("spike flits carry no memory fields")
        if self.kind is not FlitKind.SPIKE and self.neuron_id:
            raise ContractViolation("memory flits carry no neuron id")

    @classmethod
    def spike(cls, src: PeAddress, dest: PeAddress, neuron_id: int) -> "Flit":
        return cls(FlitKind.SPIKE, dest, src, neuron_id)

    @classmethod
    def mem_write(cls, dest: PeAddress, mem_kind: MemKind, data: int, src: PeAddress = PeAddress()) -> "Flit":
        return cls(FlitKind.MEM_WRITE, dest, src, mem_kind=mem_kind, data=data)

    @classmethod
    def mem_read(cls, dest: PeAddress, mem_kind: MemKind, src: PeAddress = PeAddress()) -> "Flit":
        return cls(FlitKind.MEM_READ, dest, src, mem_kind=mem_kind)

    @classmethod
    def mem_data(cls, dest: PeAddress, mem_kind: MemKind, data: int, src: PeAddress) -> "Flit":
        return cls(FlitKind.MEM_DATA, dest, src, mem_kind=mem_kind, data=data)


def parity(word: int) -> int:
    return bin(word & PAYLOAD_MASK).count("1") & 1


def encode_flit(f: Flit) -> int:
    word = int(f.kind) | f.dest.pack() << 2
    if f.kind is FlitKind.SPIKE:
        word |= f.src.pack() << 11 | f.neuron_id << 20
    else:
        word |= int(f.mem_kind) << 11 | f.data << 13 | f.src.pack() << 21
    return word | parity(word) << 31


def decode_flit(word: int) -> Flit:
    if parity(word) != (word >> 31) & 1:
        raise ParityError(word)
    kind = FlitKind(word & 0b11)
    dest = PeAddress.unpack((word >> 2) & 0x1FF)
    if kind is FlitKind.SPIKE:
        return Flit(kind, dest, PeAddress.unpack((word >> 11) & 0x1FF), (word >> 20) & 0xFF)
    mem_bits = (word >> 11) & 0b11
    if mem_bits not in MemKind._value2member_map_:
        raise ContractViolation(f"unknown memory kind {mem_bits}")
    return Flit(kind, dest, PeAddress.unpack((word >> 21) & 0x1FF), mem_kind=MemKind(mem_bits), data=(word >> 13) & 0xFF)


def dest_of(word: int) -> PeAddress:
    return PeAddress.unpack((word >> 2) & 0x1FF)


# -- routing ----------------------------------------------------------------------------

class Port(enum.IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3
    UP = 4
    DOWN = 5
    LOCAL = 6


PORTS = tuple(Port)
OFFSETS = {
    Port.EAST: (1, 0, 0),
    Port.WEST: (-1, 0, 0),
    Port.NORTH: (0, 1, 0),
    Port.SOUTH: (0, -1, 0),
    Port.UP: (0, 0, 1),
    Port.DOWN: (0, 0, -1),
}
OPPOSITE = {
    Port.EAST: Port.WEST,
    Port.WEST: Port.EAST,
    Port.NORTH: Port.SOUTH,
    Port.SOUTH: Port.NORTH,
    Port.UP: Port.DOWN,
    Port.DOWN: Port.UP,
}


def route(current: PeAddress, dest: PeAddress) -> Port:
    """Dimension-order routing: X first, then Y, then Z."""
    if dest.x != current.x:
        return Port.EAST if dest.x > current.x else Port.WEST
    if dest.y != current.y:
        return Port.NORTH if dest.y > current.y else Port.SOUTH
    if dest.z != current.z:
        return Port.UP if dest.z > current.z else Port.DOWN
    return Port.LOCAL


def neighbor(addr: PeAddress, port: Port, dims: tuple[int, int, int]) -> PeAddress | None:
    dx, dy, dz = OFFSETS[port]
    x, y, z = addr.x + dx, addr.y + dy, addr.z + dz
    if 0 <= x < dims[0] and 0 <= y < dims[1] and 0 <= z < dims[2]:
        return PeAddress(x, y, z)
    return None


@dataclass(frozen=True)
class RouterConfig:
    buffer_depth: int = 4

    def __post_init__(self):
        if self.buffer_depth < 1:
            raise ContractViolation("buffer_depth must be >= 1")

    @property
    def ports(self) -> int:
        return len(PORTS)


class Router:
    def __init__(self, address: PeAddress, config: RouterConfig):
        self.address = address
        self.config = config
        self.inputs: dict[Port, deque[int]] = {p: deque() for p in PORTS}
        self.last_grant: dict[Port, int] = {p: len(PORTS) - 1 for p in PORTS}

    def occupancy(self) -> int:
        return sum(len(q) for q in self.inputs.values())

    def has_space(self, port: Port) -> bool:
        return len(self.inputs[port]) < self.config.buffer_depth

    def arbitrate(self, out: Port, requesters: list[Port]) -> Port:
        """Round-robin: the first requester after the last granted input wins."""
        start = self.last_grant[out] + 1
        for k in range(len(PORTS)):
            candidate = PORTS[(start + k) % len(PORTS)]
            if candidate in requesters:
                return candidate
        raise SimulationError("arbitration without requesters")


# -- trace ------------------------------------------------------------------------------

TRACE_COLUMNS = ("cycle", "event", "kind", "src", "dest", "neuron_id")


@dataclass
class FlitTrace:
    rows: list[tuple] = field(default_factory=list)

    def record(self, cycle: int, event: str, word: int) -> None:
        kind = FlitKind(word & 0b11)
        if kind is FlitKind.SPIKE:
            src, nid = PeAddress.unpack((word >> 11) & 0x1FF), (word >> 20) & 0xFF
        else:
            src, nid = PeAddress.unpack((word >> 21) & 0x1FF), ""
        self.rows.append((cycle, event, kind.name.lower(), str(src), str(dest_of(word)), nid))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            writer.writerows(self.rows)
        return path


# -- mesh -------------------------------------------------------------------------------

@dataclass
class MeshStats:
    injected: int = 0
    delivered: int = 0
    hops: int = 0
    dropped: Counter = field(default_factory=Counter)

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())


class Mesh:
    """Synchronous 3D mesh of routers; one `cycle()` moves at most one flit per output port."""

    def __init__(
        self,
        dims: tuple[int, int, int] = (4, 4, 2),
        config: RouterConfig | None = None,
        bit_error_rate: float = 0.0,
        seed: int = 0,
        trace: FlitTrace | None = None,
    ):
        if any(not 1 <= d <= MAX_DIM for d in dims):
            raise ContractViolation(f"mesh dims must be within 1..{MAX_DIM}, got {dims}")
        self.dims = tuple(dims)
        self.config = config or RouterConfig()
        self.routers = {
            PeAddress(x, y, z): Router(PeAddress(x, y, z), self.config)
            for z in range(dims[2])
            for y in range(dims[1])
            for x in range(dims[0])
        }
        self.source_queues: dict[PeAddress, deque[int]] = {a: deque() for a in self.routers}
        self.ejected: dict[PeAddress, deque[int]] = {a: deque() for a in self.routers}
        self.bit_error_rate = bit_error_rate
        self.rng = np.random.default_rng(seed)
        self.trace = trace
        self.stats = MeshStats()
        self.cycle_count = 0
        self._busy: set[PeAddress] = set()

    def __contains__(self, addr: PeAddress) -> bool:
        return addr in self.routers

    def in_flight(self) -> int:
        queued = sum(len(q) for q in self.source_queues.values())
        return queued + sum(self.routers[a].occupancy() for a in self._busy)

    def quiescent(self) -> bool:
        return self.in_flight() == 0

    def conserved(self) -> bool:
        s = self.stats
        return s.injected == s.delivered + self.in_flight() + s.dropped_total

    def inject(self, src: PeAddress, word: int) -> None:
        if src not in self.routers:
            raise ContractViolation(f"source {src} not in mesh {self.dims}")
        self.stats.injected += 1
        if self.trace is not None:
            self.trace.record(self.cycle_count, "inject", word)
        router = self.routers[src]
        if not self.source_queues[src] and router.has_space(Port.LOCAL):
            router.inputs[Port.LOCAL].append(word)
            self._busy.add(src)
        else:
            self.source_queues[src].append(word)

    def _drop(self, cause: str, word: int) -> None:
        self.stats.dropped[cause] += 1
        if self.trace is not None:
            self.trace.record(self.cycle_count, "drop", word)
        logger.warning("flit 0x%08x dropped (%s) at cycle %d", word, cause, self.cycle_count)

    def _flip(self, word: int) -> int:
        if self.bit_error_rate and self.rng.random() < self.bit_error_rate:
            return word ^ (1 << int(self.rng.integers(0, 32)))
        return word

    def cycle(self) -> None:
        # read phase: decide every grant from start-of-cycle state
        grants: list[tuple[PeAddress, Port, Port, PeAddress | None]] = []
        for addr in sorted(self._busy):
            router = self.routers[addr]
            requests: dict[Port, list[Port]] = {}
            for port, queue in router.inputs.items():
                if queue:
                    requests.setdefault(route(addr, dest_of(queue[0])), []).append(port)
            for out, requesters in requests.items():
                winner = router.arbitrate(out, requesters)
                if out is Port.LOCAL:
                    grants.append((addr, winner, out, None))
                    router.last_grant[out] = winner
                    continue
                nxt = neighbor(addr, out, self.dims)
                if nxt is None:
                    grants.append((addr, winner, out, None))
                    router.last_grant[out] = winner
                elif self.routers[nxt].has_space(OPPOSITE[out]):
                    grants.append((addr, winner, out, nxt))
                    router.last_grant[out] = winner
        # commit phase
        for addr, in_port, out, nxt in grants:
            word = self.routers[addr].inputs[in_port].popleft()
            if out is Port.LOCAL:
                self._eject(addr, word)
            elif nxt is None:
                self._drop("misroute", word)
            else:
                word = self._flip(word)
                self.routers[nxt].inputs[OPPOSITE[out]].append(word)
                self._busy.add(nxt)
                self.stats.hops += 1
                if self.trace is not None:
                    self.trace.record(self.cycle_count, "hop", word)
        for addr, queue in self.source_queues.items():
            if queue and self.routers[addr].has_space(Port.LOCAL):
                self.routers[addr].inputs[Port.LOCAL].append(queue.popleft())
                self._busy.add(addr)
        self._busy = {a for a in self._busy if self.routers[a].occupancy()}
        self.cycle_count += 1

    def _eject(self, addr: PeAddress, word: int) -> None:
        if parity(word) != (word >> 31) & 1:
            self._drop("parity", word)
            return
        self.stats.delivered += 1
        self.ejected[addr].append(word)
        if self.trace is not None:
            self.trace.record(self.cycle_count, "deliver", word)

    def drain(self, limit: int = 100_000) -> int:
        """Run cycles until no flit is in flight; returns the cycles spent."""
        spent = 0
        while not self.quiescent():
            if spent >= limit:
                raise SimulationError(f"NoC failed to drain within {limit} cycles", in_flight=self.in_flight())
            self.cycle()
            spent += 1
        return spent

    def collect(self, addr: PeAddress) -> list[int]:
        queue = self.ejected[addr]
        words = list(queue)
        queue.clear()
        return words


def mesh_cycle(mesh: Mesh) -> Mesh:
    mesh.cycle()
    return mesh


# -- network interface ------------------------------------------------------------------

@dataclass
class NiTables:
    """Address translation for incoming spikes.

    Dense mode: `pe_lut` maps a source PE to its connected-PE index and `neuron_lut` maps
    (connected-PE index, neuron id) to a pre-synaptic bit. Sparse mode: `cam` maps
    (source PE, neuron id) straight to a weight-row address.
    """

    width: int
    pe_lut: dict[PeAddress, int] = field(default_factory=dict)
    neuron_lut: dict[tuple[int, int], int] = field(default_factory=dict)
    cam: dict[tuple[PeAddress, int], int] = field(default_factory=dict)
    sparse: bool = False

    def __post_init__(self):
        targets = list(self.cam.values()) if self.sparse else list(self.neuron_lut.values())
        if len(set(targets)) != len(targets) or any(not 0 <= t < self.width for t in targets):
            raise ContractViolation("address mapping must be injective into [0, width)")

    @classmethod
    def dense(cls, sources: Iterable[tuple[PeAddress, int]]) -> "NiTables":
        """Contiguous bit ranges per source PE (base value plus neuron id)."""
        pe_lut, neuron_lut, base = {}, {}, 0
        for index, (pe, count) in enumerate(sources):
            if pe in pe_lut:
                raise ContractViolation(f"source {pe} listed twice")
            pe_lut[pe] = index
            for nid in range(count):
                neuron_lut[(index, nid)] = base + nid
            base += count
        return cls(width=max(base, 1), pe_lut=pe_lut, neuron_lut=neuron_lut)

    @classmethod
    def sparse_map(cls, connections: Iterable[tuple[PeAddress, int]]) -> "NiTables":
        cam = {}
        for row, key in enumerate(connections):
            if key in cam:
                raise ContractViolation(f"connection {key} listed twice")
            cam[key] = row
        return cls(width=max(len(cam), 1), cam=cam, sparse=True)

    def lookup(self, src: PeAddress, neuron_id: int) -> int | None:
        if self.sparse:
            return self.cam.get((src, neuron_id))
        pe = self.pe_lut.get(src)
        if pe is None:
            return None
        return self.neuron_lut.get((pe, neuron_id))


@dataclass
class AerStats:
    accepted: int = 0
    cam_miss: int = 0
    unmapped: int = 0


def aer_to_spike_array(events: Iterable[tuple[PeAddress, int]], tables: NiTables) -> tuple[SpikeArray, AerStats]:
    """OR every event of one time step into a spike array through the LUTs or CAM."""
    bits = 0
    stats = AerStats()
    for src, neuron_id in events:
        index = tables.lookup(src, neuron_id)
        if index is None:
            if tables.sparse:
                stats.cam_miss += 1
            else:
                stats.unmapped += 1
            continue
        bits |= 1 << index
        stats.accepted += 1
    return SpikeArray(bits, tables.width), stats


def spike_array_to_aer(out: SpikeArray, src: PeAddress, fanout: Iterable[PeAddress]) -> list[Flit]:
    dests = list(fanout)
    return [Flit.spike(src, dest, index) for index in out.indices() for dest in dests]


class LinearMemory:
    """Plain word memory for the sparse (CAM) and other tables."""

    fixed = True

    def __init__(self, size: int, w_bits: int = DATA_BITS, init: int = 0):
        self.w_bits = w_bits
        self.cells = [init] * size

    @property
    def size(self) -> int:
        return len(self.cells)

    def read_word(self, position: int) -> int:
        return self.cells[position]

    def write_word(self, position: int, raw: int) -> None:
        self.cells[position] = raw


def _to_payload(raw: int, w_bits: int) -> int:
    return raw & ((1 << w_bits) - 1)


def _from_payload(data: int, w_bits: int, signed: bool) -> int:
    data &= (1 << w_bits) - 1
    if signed and data >> (w_bits - 1):
        data -= 1 << w_bits
    return data


class NetworkInterface:
    """Translates flits to spike arrays and memory accesses for one PE."""

    def __init__(self, address: PeAddress, tables: NiTables | None = None, memories: dict | None = None):
        self.address = address
        self.tables = tables
        self.memories: dict[MemKind, object] = dict(memories or {})
        self.cursors: Counter = Counter()
        self.counters: Counter = Counter()
        self._events: list[tuple[PeAddress, int]] = []

    def reset_cursors(self) -> None:
        self.cursors.clear()

    def receive(self, word: int) -> list[Flit]:
        """Accept one delivered word; returns reply flits to inject (memory reads)."""
        try:
            flit = decode_flit(word)
        except ParityError:
            self.counters["parity"] += 1
            logger.warning("NI %s: parity error, flit dropped", self.address)
            return []
        except NeurosocError:
            self.counters["malformed"] += 1
            return []
        if flit.kind is FlitKind.SPIKE:
            self._events.append((flit.src, flit.neuron_id))
            return []
        if flit.kind is FlitKind.MEM_DATA:
            self.counters["mem_data"] += 1
            return []
        return self.mem_access(flit)

    def new_timestep(self) -> SpikeArray:
        if self.tables is None:
            raise ContractViolation(f"NI {self.address} has no address tables")
        array, stats = aer_to_spike_array(self._events, self.tables)
        self._events = []
        self.counters["spikes_in"] += stats.accepted
        if stats.cam_miss or stats.unmapped:
            self.counters["cam_miss"] += stats.cam_miss
            self.counters["unmapped"] += stats.unmapped
            logger.warning("NI %s: %d unmapped, %d CAM-miss events dropped", self.address, stats.unmapped, stats.cam_miss)
        return array

    def mem_access(self, flit: Flit) -> list[Flit]:
        memory = self.memories.get(flit.mem_kind)
        if memory is None:
            self.counters["no_memory"] += 1
            return []
        if not getattr(memory, "fixed", True):
            raise ContractViolation(f"NI {self.address}: float memories are not addressable over the mesh")
        signed = flit.mem_kind is MemKind.WEIGHT
        w_bits = getattr(memory, "w_bits", DATA_BITS) or DATA_BITS
        if flit.kind is FlitKind.MEM_WRITE:
            cursor = self.cursors[flit.mem_kind]
            if cursor >= memory.size:
                self.counters["cursor_overflow"] += 1
                logger.warning("NI %s: %s write past end of memory", self.address, flit.mem_kind.name)
                return []
            memory.write_word(cursor, _from_payload(flit.data, w_bits, signed))
            self.cursors[flit.mem_kind] = cursor + 1
            return []
        # reply goes back to the requester named in the request's source field
        return [
            Flit.mem_data(flit.src, flit.mem_kind, _to_payload(memory.read_word(pos), w_bits), self.address)
            for pos in range(memory.size)
        ]


def mem_access(ni: NetworkInterface, flits: Iterable[Flit]) -> list[Flit]:
    replies: list[Flit] = []
    for flit in flits:
        replies.extend(ni.mem_access(flit))
    return replies


# -- traffic benchmark ------------------------------------------------------------------

@dataclass
class TrafficReport:
    cycles: int
    injected: int
    delivered: int
    dropped: dict
    mean_latency: float
    max_latency: int
    conserved_every_cycle: bool


def run_random_traffic(mesh: Mesh, rate: float, cycles: int, seed: int = 0) -> TrafficReport:
    """Uniform random single-flit traffic: each PE injects with probability `rate` per cycle."""
    if not 0 <= rate <= 1:
        raise ContractViolation("injection rate must be within [0, 1]")
    rng = np.random.default_rng(seed)
    nodes = sorted(mesh.routers)
    born: dict[int, deque[int]] = {}
    latencies: list[int] = []
    conserved = True
    serial = 0
    for _ in range(cycles):
        for src in nodes:
            if rng.random() < rate:
                dest = nodes[int(rng.integers(0, len(nodes)))]
                # neuron id carries a serial number so latencies can be matched
                word = encode_flit(Flit.spike(src, dest, serial & 0xFF))
                born.setdefault(word, deque()).append(mesh.cycle_count)
                serial += 1
                mesh.inject(src, word)
        mesh.cycle()
        for addr in nodes:
            for word in mesh.collect(addr):
                latencies.append(mesh.cycle_count - born[word].popleft())
        conserved = conserved and mesh.conserved()
    mesh.drain()
    for addr in nodes:
        for word in mesh.collect(addr):
            latencies.append(mesh.cycle_count - born[word].popleft())
    return TrafficReport(
        cycles=mesh.cycle_count,
        injected=mesh.stats.injected,
        delivered=mesh.stats.delivered,
        dropped=dict(mesh.stats.dropped),
        mean_latency=float(np.mean(latencies)) if latencies else 0.0,
        max_latency=max(latencies, default=0),
        conserved_every_cycle=conserved and mesh.conserved(),
    )
