"""End-to-end runner for one link scenario.

Wires the event engine, the physical link model and the three pipeline
devices together, drives the hardware timers, and plays the node agents that
consume MP_REPLY packets from each node's CPU port.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import mhp
from .config import Scenario, apply_control, build_devices, derive_timing
from .engine import Simulator
from .physics import PhysicsError, QuantumLink

log = logging.getLogger(__name__)


class TrapBudgetExceeded(RuntimeError):
    def __init__(self, traps: int, budget: int, reason: Optional[str]):
        self.traps = traps
        self.budget = budget
        self.reason = reason
        super().__init__(f"{traps} runtime traps exceed the budget of {budget}: {reason}")


@dataclass(frozen=True)
class LogEntry:
    cycle: int
    outcome: int
    pair_seq: int
    reply_time: int


class NodeLog:
    """What one node agent learned, in arrival order.

    Only a running digest is kept unless ``keep`` is set, so long runs do not
    retain per-cycle state.
    """

    def __init__(self, keep: bool = False):
        self.keep = keep
        self.entries: List[LogEntry] = []
        self.count = 0
        self.last_cycle: Optional[int] = None
        self._digest = hashlib.sha256()

    def append(self, entry: LogEntry) -> None:
        self.add(entry.cycle, entry.outcome, entry.pair_seq, entry.reply_time)

    def add(self, cycle: int, outcome: int, pair_seq: int, reply_time: int) -> None:
        if self.last_cycle is not None and cycle <= self.last_cycle:
            raise PhysicsError(f"log cycles must increase: {cycle} after {self.last_cycle}")
        if (outcome == mhp.SUCCESS) != (pair_seq > 0):
            raise PhysicsError(f"pair_seq {pair_seq} inconsistent with outcome {outcome}")
        self.last_cycle = cycle
        self.count += 1
        # reply times differ between asymmetric arms, so they stay out of the digest
        self._digest.update(f"{cycle}:{outcome}:{pair_seq};".encode())
        if self.keep:
            self.entries.append(LogEntry(cycle, outcome, pair_seq, reply_time))

    def digest(self) -> str:
        return self._digest.hexdigest()


@dataclass
class LatencyStats:
    count: int = 0
    total: int = 0
    min: Optional[int] = None
    max: Optional[int] = None

    def add(self, value: int) -> None:
        self.count += 1
        self.total += value
        if self.min is None or value < self.min:
            self.min = value
        if self.max is None or value > self.max:
            self.max = value

    @property
    def mean(self) -> Optional[float]:
        return self.total / self.count if self.count else None


@dataclass
class NodeCounters:
    attempts: int = 0
    successes: int = 0
    failures: int = 0
    errors: int = 0
    latency: LatencyStats = field(default_factory=LatencyStats)


@dataclass
class NodeMetrics:
    name: str
    attempts: int
    successes: int
    failures: int
    errors: int
    latency_min_ns: Optional[int]
    latency_max_ns: Optional[int]
    latency_mean_ns: Optional[float]


@dataclass
class MetricsReport:
    scenario: str
    scenario_digest: str
    seed: int
    cycles: int
    nodes: List[NodeMetrics]
    det_id: int
    bins_closed: int
    heralded: int
    accepted: int
    discarded: int
    success_fraction: float
    pair_seq_final: int
    agreement: bool
    traps: int

    def node(self, name: str) -> NodeMetrics:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        doc = dict(doc)
        doc["nodes"] = [NodeMetrics(**n) for n in doc["nodes"]]
        return cls(**doc)

    @classmethod
    def from_json(cls, text) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def emit_report(report: MetricsReport, fmt: str = "json") -> bytes:
    """Serialise ``report`` as ``json`` or ``csv-summary`` (header + one row)."""
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode()
    if fmt == "csv-summary":
        row = {}
        for key, value in report.to_dict().items():
            if key == "nodes":
                for n in value:
                    for nk, nv in n.items():
                        if nk != "name":
                            row[f"{n['name']}.{nk}"] = nv
            else:
                row[key] = value
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue().encode()
    raise ValueError(f"unknown report format {fmt!r}")


class Simulation:
    """One scenario, one seed, one simulation instance."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None, keep_logs: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.sim = Simulator()
        self.rng = np.random.default_rng(self.seed)
        self.plan = derive_timing(scenario)
        self.devices = build_devices(scenario)
        apply_control(scenario, self.devices)
        self.node_names = tuple(n.name for n in scenario.nodes)
        self.node_index = {n: k for k, n in enumerate(self.node_names)}
        self._links: Dict[Tuple[str, int], Tuple[str, int, int]] = {}
        for node in scenario.nodes:
            d = node.fiber.delay_ns
            self._links[(node.name, node.cport)] = ("midpoint", node.midpoint_port, d)
            self._links[("midpoint", node.midpoint_port)] = (node.name, node.cport, d)
        mid = scenario.midpoint
        self.link = QuantumLink(
            self.sim,
            self.rng,
            {n.name: n.fiber for n in scenario.nodes},
            mid.detector,
            det_id=mid.det_id,
            slots={n.name: n.slots for n in scenario.nodes},
            inject=self._inject_detector,
            keep_history=keep_logs,
        )
        self.logs = {n: NodeLog(keep_logs) for n in self.node_names}
        self.counters = {n: NodeCounters() for n in self.node_names}
        self.cycles = {n: 0 for n in self.node_names}
        self.traps = 0
        self.last_trap: Optional[str] = None
        self.unroutable = 0
        self.trace: Optional[List[tuple]] = [] if keep_logs else None
        self._receivers = {name: self._receiver(name) for name in self.devices}
        for name, receive in self._receivers.items():
            self.sim.attach(name, self._packet_handler(receive))
        for node in scenario.nodes:
            self.devices[node.name].register_extern(mhp.EMIT_PHOTON, self._photon_extern(node.name))
            self.sim.attach(("timer", node.name), self._on_timer)

    # -- plumbing -----------------------------------------------------------------

    def _trap(self, reason: str) -> None:
        self.traps += 1
        self.last_trap = reason
        log.debug("trap: %s", reason)
        if self.traps > self.scenario.run.trap_budget:
            raise TrapBudgetExceeded(self.traps, self.scenario.run.trap_budget, reason)

    def _photon_extern(self, node: str):
        qport = self.scenario.node(node).qport
        dev = self.devices[node]

        def emit_photon(port: int, slot: int, cycle: int, params: int) -> None:
            if port != qport:
                raise PhysicsError(f"node {node} has no quantum interface on port {port}")
            self.counters[node].attempts += 1
            self.link.emit_photon(node, port, slot, cycle, params,
                                  self.sim._now + dev.processing_delay_ns)

        return emit_photon

    def deliver(self, device: str, port: int, data: bytes) -> None:
        """Run ``data`` through ``device`` as if it arrived on ``port`` now."""
        self._receivers[device](port, data)

    def _receiver(self, device: str):
        dev = self.devices[device]
        sim = self.sim
        schedule = sim.schedule
        delay_ns = dev.processing_delay_ns
        is_node = device in self.node_index
        links = {port: peer for (name, port), peer in self._links.items() if name == device}

        def receive(port: int, data: bytes) -> None:
            now = sim._now
            disp = dev.process(data, port, now)
            if self.trace is not None:
                self.trace.append((now, device, port, data, disp.kind, disp.outputs))
            if disp.trap is not None:
                self._trap(f"{device}: {disp.trap}")
                return
            t = now + delay_ns
            for out_port, out in disp.outputs:
                if is_node and out_port == mhp.CPU_PORT:
                    # the agent only records, so it runs now with the CPU-port delay folded in
                    self.on_cpu_packet(device, out, t)
                    continue
                peer = links.get(out_port)
                if peer is None:
                    self.unroutable += 1
                    continue
                schedule(t + peer[2], peer[0], (peer[1], out))

        return receive

    @staticmethod
    def _packet_handler(receive):
        def on_packet(event) -> None:
            receive(*event.payload)

        return on_packet

    def _inject_detector(self, data: bytes) -> None:
        self.deliver("midpoint", mhp.CPU_PORT, data)

    def _on_timer(self, event) -> None:
        node = event.target[1]
        cycle = event.payload
        run = self.scenario.run
        if cycle >= run.max_cycles:
            return
        if run.stop_after_successes is not None and \
                self.counters[node].successes >= run.stop_after_successes:
            return
        self.cycles[node] = cycle + 1
        self.link.schedule_close(self.plan.bin(cycle))
        self.deliver(node, mhp.CPU_PORT, mhp.timer_frame(cycle))
        k = self.node_index[node]
        self.sim.schedule(self.plan.timer(k, cycle + 1), event.target, cycle + 1)

    def on_cpu_packet(self, node: str, data: bytes, now: Optional[int] = None) -> None:
        """Node agent: consume one packet delivered on the node's CPU port at ``now``."""
        try:
            reply = mhp.decode(data)
        except mhp.DecodeError as exc:
            self._trap(f"agent {node}: {exc}")
            return
        if not isinstance(reply, mhp.MpReply):
            self._trap(f"agent {node}: unexpected {type(reply).__name__}")
            return
        if now is None:
            now = self.sim._now
        try:
            self.logs[node].add(reply.cycle, reply.outcome, reply.pair_seq, now)
            slot = self.link.record_reply(node, reply)
        except PhysicsError as exc:
            self._trap(f"agent {node}: {exc}")
            return
        c = self.counters[node]
        if reply.outcome == mhp.SUCCESS:
            c.successes += 1
            # harness policy: entangled pairs are consumed as soon as they are known
            self.link.release(node, slot.slot_id)
        elif reply.outcome == mhp.FAIL:
            c.failures += 1
        else:
            c.errors += 1
        k = self.node_index[node]
        c.latency.add(now - self.plan.timer(k, reply.cycle))

    # -- running ------------------------------------------------------------------

    def start(self) -> None:
        for k, node in enumerate(self.node_names):
            self.sim.schedule(self.plan.timer(k, 0), ("timer", node), 0)

    def run(self) -> MetricsReport:
        self.start()
        self.sim.run()
        return self.report()

    def agreement(self) -> bool:
        a, b = (self.logs[n] for n in self.node_names)
        return (a.count == b.count and a.digest() == b.digest()
                and self.link.quiescent and self.link.agreement())

    def report(self) -> MetricsReport:
        nodes = []
        for n in self.node_names:
            c = self.counters[n]
            nodes.append(NodeMetrics(n, c.attempts, c.successes, c.failures, c.errors,
                                     c.latency.min, c.latency.max, c.latency.mean))
        first = self.counters[self.node_names[0]]
        det_id = self.scenario.midpoint.det_id
        return MetricsReport(
            scenario=self.scenario.name,
            scenario_digest=self.scenario.digest(),
            seed=self.seed,
            cycles=max(self.cycles.values()),
            nodes=nodes,
            det_id=det_id,
            bins_closed=self.link.closed_bins,
            heralded=self.link.heralded,
            accepted=self.link.accepted,
            discarded=self.link.discarded,
            success_fraction=first.successes / first.attempts if first.attempts else 0.0,
            pair_seq_final=self.devices["midpoint"].register_read("pair_seq", det_id),
            agreement=self.agreement(),
            traps=self.traps,
        )


def run_scenario(scenario: Scenario, seed: Optional[int] = None, keep_logs: bool = False) -> MetricsReport:
    return Simulation(scenario, seed, keep_logs).run()
