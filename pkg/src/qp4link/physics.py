"""Stochastic model of the quantum side of one heralded link.

Two nodes emit photons into fibers that end at a shared detector. The
detector bins photon arrivals by time, and at the end of every bin in which an
attempt was expected it reports SUCCESS (one photon from each side, then a
Bell measurement that succeeds with ``p_bsm``) or FAIL. The report enters the
midpoint pipeline as a DETECTOR packet on the CPU port.

The model also owns the ground truth: each node's qubit slots and the registry
of heralded pairs, so that what the nodes *learn* from MP_REPLY messages can be
checked against what physically happened.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import mhp
from .engine import Simulator

FREE = "free"
ATTEMPTING = "attempting"
ENTANGLED = "entangled"

PROVISIONAL = "provisional"
ACCEPTED = "accepted"
DISCARDED = "discarded"


class PhysicsError(Exception):
    pass


class SlotBusy(PhysicsError):
    pass


class UnknownCycle(PhysicsError):
    pass


class HeraldMismatch(PhysicsError):
    """A reply contradicts the detector's ground truth."""


@dataclass(frozen=True)
class FiberParams:
    length_m: int
    latency_ns_per_m: int = 5
    p_arrive: Optional[float] = None
    attenuation_db_per_km: Optional[float] = None

    def __post_init__(self) -> None:
        if (self.p_arrive is None) == (self.attenuation_db_per_km is None):
            raise ValueError("exactly one of p_arrive and attenuation_db_per_km must be set")
        if self.length_m < 0 or self.latency_ns_per_m < 0:
            raise ValueError("fiber length and latency must be non-negative")
        if self.p_arrive is not None and not 0.0 <= self.p_arrive <= 1.0:
            raise ValueError(f"p_arrive {self.p_arrive} is not a probability")
        if self.attenuation_db_per_km is not None and self.attenuation_db_per_km < 0:
            raise ValueError("attenuation must be non-negative")

    @property
    def delay_ns(self) -> int:
        return self.length_m * self.latency_ns_per_m


def arrival_probability(fiber: FiberParams) -> float:
    if fiber.p_arrive is not None:
        return fiber.p_arrive
    return 10.0 ** (-fiber.attenuation_db_per_km * (fiber.length_m / 1000.0) / 10.0)


@dataclass(frozen=True)
class DetectorParams:
    p_bsm: float
    bin_width_ns: int
    report_latency_ns: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_bsm <= 1.0:
            raise ValueError(f"p_bsm {self.p_bsm} is not a probability")
        if self.bin_width_ns <= 0:
            raise ValueError("bin width must be positive")
        if self.report_latency_ns < 0:
            raise ValueError("report latency must be non-negative")


@dataclass
class QubitSlot:
    slot_id: int
    state: str = FREE
    cycle: Optional[int] = None
    pair_seq: Optional[int] = None


@dataclass
class PhotonFlight:
    source: str
    cycle: int
    slot_id: int
    params: int
    emit_time: int
    arrive_time: int
    lost: bool


@dataclass
class EntanglementRecord:
    pair_seq: int
    slot_a: Tuple[str, int]
    slot_b: Tuple[str, int]
    created_at: int
    status: str = PROVISIONAL
    bin: int = 0
    acked: set = field(default_factory=set)


@dataclass
class DetectorReport:
    det_id: int
    bin: int
    outcome: int
    photons: int

    def packet(self) -> bytes:
        return mhp.encode(mhp.Detector(self.outcome, self.det_id, self.bin & 0xFFFFFFFF))


class UniformStream:
    """Uniform [0, 1) draws from a numpy Generator, fetched in blocks.

    Yields exactly the values of repeated ``rng.random()`` calls, but without
    the per-call overhead.
    """

    def __init__(self, rng, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buf: List[float] = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self.rng.random(self.block).tolist()
            self._pos = 0
        self._pos += 1
        return self._buf[self._pos - 1]


class QuantumLink:
    """Photon flights, detector and qubit memories of one node pair.

    ``inject`` is called with the DETECTOR packet bytes whenever a bin is
    closed; the harness routes them into the midpoint pipeline.
    """

    def __init__(
        self,
        sim: Simulator,
        rng,
        fibers: Dict[str, FiberParams],
        detector: DetectorParams,
        det_id: int = 0,
        slots: Optional[Dict[str, int]] = None,
        inject: Optional[Callable[[bytes], None]] = None,
        keep_history: bool = False,
    ):
        if len(fibers) != 2:
            raise ValueError("a link has exactly two nodes")
        self.sim = sim
        self.rng = rng
        self.uniform = UniformStream(rng)
        self.fibers = dict(fibers)
        self.nodes: Tuple[str, str] = tuple(fibers)
        self.p_arrive = {n: arrival_probability(f) for n, f in fibers.items()}
        self.detector = detector
        self.det_id = det_id
        self.inject = inject
        self.keep_history = keep_history
        self.target = ("detector", det_id)
        sim.attach(self.target, self._on_event)
        slots = slots or {n: 1 for n in self.nodes}
        self.slots: Dict[str, List[QubitSlot]] = {
            n: [QubitSlot(i) for i in range(slots.get(n, 1))] for n in self.nodes
        }
        self._attempting: Dict[str, Dict[int, int]] = {n: {} for n in self.nodes}
        self._bins: Dict[int, Dict[str, List[PhotonFlight]]] = {}
        self._closing: set = set()
        self._provisional: Dict[Tuple[str, int], EntanglementRecord] = {}
        self._live: Dict[int, EntanglementRecord] = {}
        self.history: List[EntanglementRecord] = []
        self.last_flight: Optional[PhotonFlight] = None
        self.emitted = 0
        self.lost = 0
        self.arrived = 0
        self.closed_bins = 0
        self.heralded = 0
        self.accepted = 0
        self.discarded = 0
        self.last_pair_seq = 0
        self._digest = hashlib.sha256()

    # -- photons --------------------------------------------------------------

    def slot(self, node: str, slot_id: int) -> QubitSlot:
        try:
            return self.slots[node][slot_id]
        except IndexError:
            raise SlotBusy(f"node {node} has no qubit slot {slot_id}") from None

    def emit_photon(self, node: str, qport: int, slot_id: int, cycle: int, params: int,
                    t: int) -> PhotonFlight:
        """Start an attempt from ``slot_id`` at time ``t`` (not before now)."""
        if t < self.sim.now():
            raise ValueError(f"emission time {t} is in the past")
        slot = self.slot(node, slot_id)
        if slot.state != FREE:
            raise SlotBusy(f"node {node} slot {slot_id} is {slot.state}")
        slot.state, slot.cycle = ATTEMPTING, cycle
        self._attempting[node][cycle] = slot_id
        self.emitted += 1
        fiber = self.fibers[node]
        lost = self.uniform() >= self.p_arrive[node]
        flight = PhotonFlight(node, cycle, slot_id, params, t, t + fiber.delay_ns, lost)
        self.last_flight = flight
        if lost:
            self.lost += 1
        else:
            # The arrival time is fixed at emission and always precedes the close of
            # its bin, so the photon is binned now rather than via an arrival event.
            self.arrived += 1
            b = flight.arrive_time // self.detector.bin_width_ns
            bucket = self._bins.get(b)
            if bucket is None:
                bucket = self._bins[b] = {}
            bucket.setdefault(node, []).append(flight)
        return flight

    def schedule_close(self, bin_index: int) -> None:
        """Arrange for ``bin_index`` to be closed and reported (at most once)."""
        if bin_index in self._closing:
            return
        self._closing.add(bin_index)
        W = self.detector.bin_width_ns
        self.sim.schedule((bin_index + 1) * W + self.detector.report_latency_ns, self.target,
                          bin_index)

    def _on_event(self, event) -> None:
        self._closing.discard(event.payload)
        report = self.close_bin(event.payload)
        if self.inject is not None:
            self.inject(report.packet())

    def close_bin(self, bin_index: int) -> DetectorReport:
        arrivals = self._bins.pop(bin_index, {})
        for stale in [b for b in self._bins if b < bin_index]:
            del self._bins[stale]
        self.closed_bins += 1
        a, b = self.nodes
        side_a, side_b = arrivals.get(a, []), arrivals.get(b, [])
        photons = len(side_a) + len(side_b)
        outcome = mhp.FAIL
        if len(side_a) == 1 and len(side_b) == 1:
            if self.uniform() < self.detector.p_bsm:
                outcome = mhp.SUCCESS
                fa, fb = side_a[0], side_b[0]
                rec = EntanglementRecord(0, (a, fa.slot_id), (b, fb.slot_id), self.sim.now(),
                                         bin=bin_index)
                self._provisional[(a, fa.cycle)] = rec
                self._provisional[(b, fb.cycle)] = rec
                self.heralded += 1
        return DetectorReport(self.det_id, bin_index, outcome, photons)

    # -- replies --------------------------------------------------------------

    def record_reply(self, node: str, reply: mhp.MpReply) -> QubitSlot:
        """Apply what ``node`` learned from an MP_REPLY to its slots and the registry."""
        slot_id = self._attempting[node].pop(reply.cycle, None)
        if slot_id is None:
            raise UnknownCycle(f"node {node} has no slot attempting cycle {reply.cycle}")
        slot = self.slots[node][slot_id]
        rec = self._provisional.pop((node, reply.cycle), None)
        if reply.outcome == mhp.SUCCESS:
            if rec is None:
                raise HeraldMismatch(f"SUCCESS for cycle {reply.cycle} at {node} without a heralded pair")
            if rec.pair_seq == 0:
                rec.pair_seq = reply.pair_seq
            elif rec.pair_seq != reply.pair_seq:
                raise HeraldMismatch(f"pair_seq {reply.pair_seq} at {node}, expected {rec.pair_seq}")
            slot.state, slot.cycle, slot.pair_seq = ENTANGLED, None, reply.pair_seq
            rec.acked.add(node)
            if len(rec.acked) == 2:
                self._accept(rec)
        else:
            slot.state, slot.cycle = FREE, None
            if rec is not None and rec.status == PROVISIONAL:
                rec.status = DISCARDED
                self.discarded += 1
                if self.keep_history:
                    self.history.append(rec)
        return slot

    def _accept(self, rec: EntanglementRecord) -> None:
        if rec.pair_seq != self.last_pair_seq + 1:
            raise HeraldMismatch(f"pair_seq {rec.pair_seq} follows {self.last_pair_seq}")
        self.last_pair_seq = rec.pair_seq
        rec.status = ACCEPTED
        self.accepted += 1
        self._digest.update(f"{rec.pair_seq}:{rec.slot_a}:{rec.slot_b}:{rec.created_at};".encode())
        if self.keep_history:
            self.history.append(rec)
        if any(self.slots[n][s].state == ENTANGLED and self.slots[n][s].pair_seq == rec.pair_seq
               for n, s in (rec.slot_a, rec.slot_b)):
            self._live[rec.pair_seq] = rec

    def release(self, node: str, slot_id: int) -> None:
        """Hand an entangled slot back to the pool (Entangled -> Free)."""
        slot = self.slot(node, slot_id)
        if slot.state != ENTANGLED:
            raise PhysicsError(f"node {node} slot {slot_id} is {slot.state}, not entangled")
        seq = slot.pair_seq
        slot.state, slot.pair_seq = FREE, None
        rec = self._live.get(seq)
        if rec is not None and all(
            not (self.slots[n][s].state == ENTANGLED and self.slots[n][s].pair_seq == seq)
            for n, s in (rec.slot_a, rec.slot_b)
        ):
            del self._live[seq]

    # -- ground-truth queries ------------------------------------------------

    def entangled(self, node: str) -> Dict[int, int]:
        """Map slot id -> pair_seq for the entangled slots of ``node``."""
        return {s.slot_id: s.pair_seq for s in self.slots[node] if s.state == ENTANGLED}

    def live_records(self) -> List[EntanglementRecord]:
        return [self._live[k] for k in sorted(self._live)]

    def agreement(self) -> bool:
        """Node knowledge matches ground truth for every pair still held."""
        a, b = self.nodes
        live = self.live_records()
        truth_a = {r.slot_a[1]: r.pair_seq for r in live if self.slots[a][r.slot_a[1]].state == ENTANGLED}
        truth_b = {r.slot_b[1]: r.pair_seq for r in live if self.slots[b][r.slot_b[1]].state == ENTANGLED}
        known_a, known_b = self.entangled(a), self.entangled(b)
        # a slot may only be entangled if a record covers it
        return (known_a == truth_a and known_b == truth_b
                and set(known_a.values()) == set(known_b.values()))

    def digest(self) -> str:
        return self._digest.hexdigest()

    @property
    def quiescent(self) -> bool:
        return not self._provisional and not any(self._attempting.values())


def binomial_tolerance(p: float, n: int, sigmas: float = 3.0) -> float:
    return sigmas * math.sqrt(p * (1.0 - p) / n)
