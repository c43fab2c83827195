"""Scenario documents, timing feasibility and control-plane installation.

A scenario is a TOML or JSON document. All times are integer nanoseconds,
lengths integer meters, probabilities decimals::

    name = "ideal"
    seed = 1
    period_ns = 300000

    [run]
    max_cycles = 1000
    # stop_after_successes = 10
    trap_budget = 0

    [midpoint]
    processing_delay_ns = 100
    det_id = 0
    mcast_grp = 1
    p_bsm = 1.0
    report_latency_ns = 0
    # bin_width_ns = 300000          (defaults to period_ns)
    # [[midpoint.mp_tbl]]            (defaults to the canonical wiring)
    # port = 1, other_port = 2, mcast_grp = 1, det_id = 0
    # [[midpoint.det_tbl]]
    # det_id = 0, port_a = 1, port_b = 2, mcast_grp = 1
    # [[midpoint.mcast_groups]]
    # grp = 1, ports = [1, 2]

    [[nodes]]
    name = "A"
    qport = 1
    cport = 1
    midpoint_port = 1
    slots = 1
    phase_ns = 150000
    processing_delay_ns = 100
    fiber = { length_m = 25000, latency_ns_per_m = 5, p_arrive = 1.0 }
    gen_default = { qubit_slot = 0, attempt_params = 2 }
    # gen_entries = [{ cycle = 3, qubit_slot = 0, attempt_params = 2 }]

Omitting ``gen_default`` (or giving ``action = "no_op"``) leaves the
``gen_tbl`` default at ``no_op``; entries then select the attempting cycles.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import mhp
from .physics import DetectorParams, FiberParams
from .pipeline import Device, TableEntry

U16 = 0xFFFF


class ConfigError(ValueError):
    """Invalid scenario. ``field`` names the offending key, ``rule`` the broken rule."""

    def __init__(self, field: str, rule: str, detail: str = ""):
        self.field = field
        self.rule = rule
        self.detail = detail
        super().__init__(f"{field}: {rule}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class GenCall:
    action: str  # "gen" or "no_op"
    qport: int = 0
    cport: int = 0
    qubit_slot: int = 0
    attempt_params: int = 0

    @property
    def attempts(self) -> bool:
        return self.action == "gen"

    def params(self) -> Tuple[int, ...]:
        if self.action == "gen":
            return (self.qport, self.cport, self.qubit_slot, self.attempt_params)
        return ()


NO_OP = GenCall("no_op")


@dataclass(frozen=True)
class NodeConfig:
    name: str
    fiber: FiberParams
    qport: int = 1
    cport: int = 1
    midpoint_port: int = 1
    slots: int = 1
    phase_ns: int = 0
    processing_delay_ns: int = 100
    gen_default: GenCall = NO_OP
    gen_entries: Tuple[Tuple[int, GenCall], ...] = ()

    def call_for(self, cycle: int) -> GenCall:
        for c, call in self.gen_entries:
            if c == cycle:
                return call
        return self.gen_default


@dataclass(frozen=True)
class MpEntry:
    port: int
    other_port: int
    mcast_grp: int
    det_id: int


@dataclass(frozen=True)
class DetEntry:
    det_id: int
    port_a: int
    port_b: int
    mcast_grp: int


@dataclass(frozen=True)
class MidpointConfig:
    detector: DetectorParams
    processing_delay_ns: int = 100
    det_id: int = 0
    mcast_grp: int = 1
    mp_tbl: Tuple[MpEntry, ...] = ()
    det_tbl: Tuple[DetEntry, ...] = ()
    mcast_groups: Tuple[Tuple[int, Tuple[int, ...]], ...] = ()


@dataclass(frozen=True)
class RunPolicy:
    max_cycles: int = 1000
    stop_after_successes: Optional[int] = None
    trap_budget: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str
    period_ns: int
    nodes: Tuple[NodeConfig, NodeConfig]
    midpoint: MidpointConfig
    run: RunPolicy = RunPolicy()
    seed: int = 0

    def node(self, name: str) -> NodeConfig:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_run(self, **changes) -> "Scenario":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **changes))


# -- timing -------------------------------------------------------------------


@dataclass(frozen=True)
class TimingPlan:
    """Closed-form event times for every cycle of a loss-free run.

    Node index ``k`` is 0 or 1 in scenario order. A cycle's timer fires at
    ``phase + c * period``; the photon and the GEN leave one node processing
    delay later and reach the midpoint after the fiber delay. The detector
    reports at the end of the bin plus its report latency, and the reply goes
    back through the midpoint and the node pipeline.
    """

    period_ns: int
    bin_width_ns: int
    report_latency_ns: int
    midpoint_delay_ns: int
    phase_ns: Tuple[int, int]
    node_delay_ns: Tuple[int, int]
    fiber_delay_ns: Tuple[int, int]

    def timer(self, k: int, c: int) -> int:
        return self.phase_ns[k] + c * self.period_ns

    def emission(self, k: int, c: int) -> int:
        return self.timer(k, c) + self.node_delay_ns[k]

    def midpoint_arrival(self, k: int, c: int) -> int:
        return self.emission(k, c) + self.fiber_delay_ns[k]

    def bin(self, c: int, k: int = 0) -> int:
        return self.midpoint_arrival(k, c) // self.bin_width_ns

    def report_time(self, c: int) -> int:
        return (self.bin(c) + 1) * self.bin_width_ns + self.report_latency_ns

    def reply_arrival(self, k: int, c: int) -> int:
        """Time the MP_REPLY for cycle ``c`` reaches node ``k``'s pipeline."""
        return self.report_time(c) + self.midpoint_delay_ns + self.fiber_delay_ns[k]

    def reply_delivery(self, k: int, c: int) -> int:
        """Time the node agent (CPU port) receives the MP_REPLY."""
        return self.reply_arrival(k, c) + self.node_delay_ns[k]

    def reply_latency(self, k: int, c: int) -> int:
        return self.reply_delivery(k, c) - self.timer(k, c)


def derive_timing(scenario: Scenario) -> TimingPlan:
    a, b = scenario.nodes
    det = scenario.midpoint.detector
    return TimingPlan(
        period_ns=scenario.period_ns,
        bin_width_ns=det.bin_width_ns,
        report_latency_ns=det.report_latency_ns,
        midpoint_delay_ns=scenario.midpoint.processing_delay_ns,
        phase_ns=(a.phase_ns, b.phase_ns),
        node_delay_ns=(a.processing_delay_ns, b.processing_delay_ns),
        fiber_delay_ns=(a.fiber.delay_ns, b.fiber.delay_ns),
    )


# -- loading ------------------------------------------------------------------


def _get(doc: Mapping, key: str, where: str, kind, default: Any = ...) -> Any:
    if key not in doc:
        if default is ...:
            raise ConfigError(f"{where}{key}", "missing field")
        return default
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}{key}", "wrong type", "expected an integer")
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}{key}", "wrong type", "expected a number")
        return float(value)
    if kind not in (int, float) and not isinstance(value, kind):
        raise ConfigError(f"{where}{key}", "wrong type", f"expected {kind.__name__}")
    return value


def _u16(doc: Mapping, key: str, where: str, default: Any = ...) -> int:
    value = _get(doc, key, where, int, default)
    if not 0 <= value <= U16:
        raise ConfigError(f"{where}{key}", "out of range", "expected a 16-bit unsigned value")
    return value


def _nonneg(doc: Mapping, key: str, where: str, default: Any = ...) -> int:
    value = _get(doc, key, where, int, default)
    if value < 0:
        raise ConfigError(f"{where}{key}", "out of range", "must be non-negative")
    return value


def _probability(doc: Mapping, key: str, where: str, default: Any = ...) -> float:
    value = _get(doc, key, where, float, default)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{where}{key}", "probability out of range", f"{value} is not in [0, 1]")
    return value


def _gen_call(doc: Mapping, where: str, node_qport: int, node_cport: int) -> GenCall:
    action = _get(doc, "action", where, str, "gen")
    if action == "no_op":
        return NO_OP
    if action != "gen":
        raise ConfigError(f"{where}action", "unknown action", action)
    return GenCall(
        "gen",
        qport=_u16(doc, "qport", where, node_qport),
        cport=_u16(doc, "cport", where, node_cport),
        qubit_slot=_u16(doc, "qubit_slot", where),
        attempt_params=_u16(doc, "attempt_params", where),
    )


def _fiber(doc: Mapping, where: str) -> FiberParams:
    has_p = "p_arrive" in doc
    has_att = "attenuation_db_per_km" in doc
    if has_p == has_att:
        raise ConfigError(f"{where}fiber", "loss mode", "set exactly one of p_arrive, attenuation_db_per_km")
    p = _probability(doc, "p_arrive", where) if has_p else None
    att = _get(doc, "attenuation_db_per_km", where, float) if has_att else None
    if att is not None and att < 0:
        raise ConfigError(f"{where}attenuation_db_per_km", "out of range", "must be non-negative")
    return FiberParams(
        length_m=_nonneg(doc, "length_m", where),
        latency_ns_per_m=_nonneg(doc, "latency_ns_per_m", where, 5),
        p_arrive=p,
        attenuation_db_per_km=att,
    )


def _node(doc: Mapping, i: int, used_ports: Dict[int, str]) -> NodeConfig:
    where = f"nodes[{i}]."
    if not isinstance(doc, Mapping):
        raise ConfigError(f"nodes[{i}]", "wrong type", "expected a table")
    name = _get(doc, "name", where, str)
    qport = _u16(doc, "qport", where, 1)
    cport = _u16(doc, "cport", where, 1)
    if qport == mhp.CPU_PORT or cport == mhp.CPU_PORT:
        raise ConfigError(f"{where}qport", "unknown port", "port 0 is the CPU port")
    slots = _get(doc, "slots", where, int, 1)
    if not 1 <= slots <= U16 + 1:
        raise ConfigError(f"{where}slots", "out of range")
    fiber = _fiber(_get(doc, "fiber", where, dict), f"{where}fiber.")
    default_doc = doc.get("gen_default")
    if default_doc is None:
        default = NO_OP
    elif isinstance(default_doc, Mapping):
        default = _gen_call(default_doc, f"{where}gen_default.", qport, cport)
    else:
        raise ConfigError(f"{where}gen_default", "wrong type", "expected a table")
    entries = []
    seen = set()
    for j, e in enumerate(_get(doc, "gen_entries", where, list, [])):
        ew = f"{where}gen_entries[{j}]."
        if not isinstance(e, Mapping):
            raise ConfigError(f"{where}gen_entries[{j}]", "wrong type", "expected a table")
        cycle = _get(e, "cycle", ew, int)
        if not 0 <= cycle <= 0xFFFFFFFF:
            raise ConfigError(f"{ew}cycle", "out of range", "expected a 32-bit unsigned value")
        if cycle in seen:
            raise ConfigError(f"{ew}cycle", "duplicate table key", f"gen_tbl cycle {cycle}")
        seen.add(cycle)
        entries.append((cycle, _gen_call(e, ew, qport, cport)))
    node = NodeConfig(
        name=name,
        fiber=fiber,
        qport=qport,
        cport=cport,
        midpoint_port=_u16(doc, "midpoint_port", where, i + 1),
        slots=slots,
        phase_ns=_nonneg(doc, "phase_ns", where, 0),
        processing_delay_ns=_nonneg(doc, "processing_delay_ns", where, 100),
        gen_default=default,
        gen_entries=tuple(sorted(entries)),
    )
    if node.midpoint_port == mhp.CPU_PORT:
        raise ConfigError(f"{where}midpoint_port", "unknown port", "port 0 is the CPU port")
    if node.midpoint_port in used_ports:
        raise ConfigError(f"{where}midpoint_port", "duplicate port",
                          f"also used by node {used_ports[node.midpoint_port]}")
    used_ports[node.midpoint_port] = name
    calls = [("gen_default", node.gen_default)] + [(f"gen_entries[{j}]", c)
                                                   for j, (_, c) in enumerate(node.gen_entries)]
    for label, call in calls:
        if not call.attempts:
            continue
        if call.qport != qport or call.cport != cport:
            raise ConfigError(f"{where}{label}", "unknown port",
                              f"gen uses qport {call.qport}/cport {call.cport}, node pairs {qport}<->{cport}")
        if call.qubit_slot >= slots:
            raise ConfigError(f"{where}{label}.qubit_slot", "unknown slot",
                              f"slot {call.qubit_slot} but node has {slots}")
    return node


def _midpoint(doc: Mapping, period_ns: int, nodes) -> MidpointConfig:
    where = "midpoint."
    bin_width = _get(doc, "bin_width_ns", where, int, period_ns)
    if bin_width <= 0:
        raise ConfigError(f"{where}bin_width_ns", "out of range", "bin width must be positive")
    detector = DetectorParams(
        p_bsm=_probability(doc, "p_bsm", where),
        bin_width_ns=bin_width,
        report_latency_ns=_nonneg(doc, "report_latency_ns", where, 0),
    )
    det_id = _u16(doc, "det_id", where, 0)
    grp = _u16(doc, "mcast_grp", where, 1)
    if grp == 0:
        raise ConfigError(f"{where}mcast_grp", "out of range", "multicast group 0 is reserved")
    pa, pb = nodes[0].midpoint_port, nodes[1].midpoint_port
    if "mp_tbl" in doc:
        mp = []
        for j, e in enumerate(_get(doc, "mp_tbl", where, list)):
            ew = f"{where}mp_tbl[{j}]."
            mp.append(MpEntry(_u16(e, "port", ew), _u16(e, "other_port", ew),
                              _u16(e, "mcast_grp", ew), _u16(e, "det_id", ew)))
    else:
        mp = [MpEntry(pa, pb, grp, det_id), MpEntry(pb, pa, grp, det_id)]
    if "det_tbl" in doc:
        dt = []
        for j, e in enumerate(_get(doc, "det_tbl", where, list)):
            ew = f"{where}det_tbl[{j}]."
            dt.append(DetEntry(_u16(e, "det_id", ew), _u16(e, "port_a", ew),
                               _u16(e, "port_b", ew), _u16(e, "mcast_grp", ew)))
    else:
        dt = [DetEntry(det_id, pa, pb, grp)]
    if "mcast_groups" in doc:
        groups = []
        for j, g in enumerate(_get(doc, "mcast_groups", where, list)):
            gw = f"{where}mcast_groups[{j}]."
            ports = _get(g, "ports", gw, list)
            groups.append((_u16(g, "grp", gw), tuple(ports)))
    else:
        groups = [(grp, (pa, pb))]
    return MidpointConfig(
        detector=detector,
        processing_delay_ns=_nonneg(doc, "processing_delay_ns", where, 100),
        det_id=det_id,
        mcast_grp=grp,
        mp_tbl=tuple(mp),
        det_tbl=tuple(dt),
        mcast_groups=tuple(groups),
    )


def scenario_from_dict(doc: Mapping) -> Scenario:
    """Build and validate a :class:`Scenario` from a parsed document."""
    if not isinstance(doc, Mapping):
        raise ConfigError("<document>", "wrong type", "expected a table at top level")
    period = _get(doc, "period_ns", "", int)
    if period <= 0:
        raise ConfigError("period_ns", "out of range", "period must be positive")
    raw_nodes = _get(doc, "nodes", "", list)
    if len(raw_nodes) != 2:
        raise ConfigError("nodes", "node count", f"a link has exactly 2 nodes, got {len(raw_nodes)}")
    used: Dict[int, str] = {}
    nodes = tuple(_node(n, i, used) for i, n in enumerate(raw_nodes))
    if nodes[0].name == nodes[1].name:
        raise ConfigError("nodes[1].name", "duplicate node name", nodes[1].name)
    midpoint = _midpoint(_get(doc, "midpoint", "", dict), period, nodes)
    run_doc = _get(doc, "run", "", dict, {})
    stop = _get(run_doc, "stop_after_successes", "run.", int, None)
    run = RunPolicy(
        max_cycles=_nonneg(run_doc, "max_cycles", "run.", 1000),
        stop_after_successes=stop,
        trap_budget=_nonneg(run_doc, "trap_budget", "run.", 0),
    )
    if stop is not None and stop < 1:
        raise ConfigError("run.stop_after_successes", "out of range", "must be at least 1")
    seed = _get(doc, "seed", "", int, 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", "out of range", "expected an unsigned 64-bit value")
    scenario = Scenario(
        name=_get(doc, "name", "", str, "scenario"),
        period_ns=period,
        nodes=nodes,
        midpoint=midpoint,
        run=run,
        seed=seed,
    )
    validate_scenario(scenario)
    return scenario


def load_scenario(source: Union[str, Path, Mapping]) -> Scenario:
    """Load a scenario from a path (``.toml`` or ``.json``), document text or a dict."""
    if isinstance(source, Mapping):
        return scenario_from_dict(source)
    text = str(source)
    looks_inline = "\n" in text or text.lstrip().startswith("{")
    path = Path(source) if isinstance(source, Path) or not looks_inline else None
    if path is not None and path.is_file():
        text = path.read_text()
        is_json = path.suffix.lower() == ".json"
    elif path is not None and (str(source).endswith(".toml") or str(source).endswith(".json")):
        raise ConfigError(str(source), "missing file")
    else:
        text = str(source)
        is_json = text.lstrip().startswith("{")
    try:
        doc = json.loads(text) if is_json else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("<document>", "syntax error", str(exc)) from None
    return scenario_from_dict(doc)


# -- validation ---------------------------------------------------------------


def _check_tables(s: Scenario) -> None:
    mid = s.midpoint
    ports = {n.midpoint_port for n in s.nodes}
    by_port: Dict[int, MpEntry] = {}
    for j, e in enumerate(mid.mp_tbl):
        where = f"midpoint.mp_tbl[{j}]"
        if e.port not in ports or e.other_port not in ports or e.port == e.other_port:
            raise ConfigError(where, "unknown port", f"{e.port} -> {e.other_port}")
        if e.port in by_port:
            raise ConfigError(where, "duplicate table key", f"mp_tbl port {e.port}")
        by_port[e.port] = e
    for j, e in enumerate(mid.mp_tbl):
        rev = by_port.get(e.other_port)
        if rev is None or rev.other_port != e.port:
            raise ConfigError(f"midpoint.mp_tbl[{j}]", "missing reverse mp_tbl entry",
                              f"no entry {e.other_port} -> {e.port}")
        if rev.mcast_grp != e.mcast_grp or rev.det_id != e.det_id:
            raise ConfigError(f"midpoint.mp_tbl[{j}]", "mp_tbl entries not mutually inverse",
                              "reverse entry uses a different mcast_grp or det_id")
    if set(by_port) != ports:
        raise ConfigError("midpoint.mp_tbl", "missing mp_tbl entry",
                          f"ports {sorted(ports - set(by_port))} have no entry")
    groups: Dict[int, Tuple[int, ...]] = {}
    for j, (g, members) in enumerate(mid.mcast_groups):
        where = f"midpoint.mcast_groups[{j}]"
        if g == 0:
            raise ConfigError(where, "out of range", "multicast group 0 is reserved")
        if g in groups:
            raise ConfigError(where, "duplicate table key", f"group {g}")
        if not members:
            raise ConfigError(where, "empty multicast group")
        for p in members:
            if isinstance(p, bool) or not isinstance(p, int) or p not in ports:
                raise ConfigError(where, "unknown port", f"{p!r}")
        groups[g] = members
    dets = {}
    for j, e in enumerate(mid.det_tbl):
        where = f"midpoint.det_tbl[{j}]"
        if e.det_id in dets:
            raise ConfigError(where, "duplicate table key", f"det_id {e.det_id}")
        if {e.port_a, e.port_b} != ports:
            raise ConfigError(where, "unknown port", f"{e.port_a}, {e.port_b}")
        dets[e.det_id] = e
    if set(dets) != {mid.det_id}:
        raise ConfigError("midpoint.det_tbl", "one detector per node pair",
                          f"expected exactly det_id {mid.det_id}")
    det = dets[mid.det_id]
    for e in mid.mp_tbl:
        if e.det_id != mid.det_id:
            raise ConfigError("midpoint.mp_tbl", "unknown detector", f"det_id {e.det_id}")
        if e.mcast_grp != det.mcast_grp:
            raise ConfigError("midpoint.mp_tbl", "mp_tbl and det_tbl disagree on mcast_grp")
    members = groups.get(det.mcast_grp)
    if members is None:
        raise ConfigError("midpoint.mcast_groups", "unknown multicast group", f"group {det.mcast_grp}")
    if sorted(members) != sorted(ports):
        raise ConfigError("midpoint.mcast_groups", "multicast group must reach both nodes",
                          f"group {det.mcast_grp} = {list(members)}")


def _check_attempt_pairing(s: Scenario) -> None:
    a, b = s.nodes
    if a.gen_default.attempts != b.gen_default.attempts:
        raise ConfigError("nodes.gen_default", "unpaired attempts",
                          "both nodes must attempt on the same cycles")
    cycles = {c for c, _ in a.gen_entries} | {c for c, _ in b.gen_entries}
    for c in sorted(cycles):
        if a.call_for(c).attempts != b.call_for(c).attempts:
            raise ConfigError("nodes.gen_entries", "unpaired attempts", f"cycle {c}")


def _check_timing(s: Scenario) -> None:
    plan = derive_timing(s)
    W = plan.bin_width_ns
    if s.period_ns % W:
        raise ConfigError("midpoint.bin_width_ns", "bin width must divide the period",
                          f"{W} does not divide {s.period_ns}")
    arr = (plan.midpoint_arrival(0, 0), plan.midpoint_arrival(1, 0))
    if arr[0] != arr[1]:
        short = 0 if arr[0] < arr[1] else 1
        raise ConfigError(
            f"nodes[{short}].phase_ns", "misaligned arrivals",
            f"arrivals at the midpoint differ by {abs(arr[0] - arr[1])} ns; "
            f"delay node {s.nodes[short].name} by that much",
        )
    for k, node in enumerate(s.nodes):
        if plan.reply_delivery(k, 0) >= plan.timer(k, 1):
            raise ConfigError(
                "period_ns", "period too short",
                f"reply for cycle 0 reaches node {node.name} at {plan.reply_delivery(k, 0)} ns, "
                f"not before its next timer at {plan.timer(k, 1)} ns",
            )


def validate_scenario(s: Scenario) -> None:
    _check_tables(s)
    _check_attempt_pairing(s)
    _check_timing(s)


# -- control plane ------------------------------------------------------------


def build_devices(s: Scenario) -> Dict[str, Device]:
    """Create the three devices and load their programs."""
    devices = {}
    for node in s.nodes:
        dev = Device(node.name, node.processing_delay_ns)
        dev.load_program(mhp.build_node_program({node.qport: node.cport}))
        devices[node.name] = dev
    mid = Device("midpoint", s.midpoint.processing_delay_ns)
    ports = [n.midpoint_port for n in s.nodes]
    mid.load_program(mhp.build_midpoint_program(
        s.midpoint.detector.bin_width_ns,
        num_ports=max(16, max(ports) + 1),
        num_detectors=max(16, s.midpoint.det_id + 1),
    ))
    devices["midpoint"] = mid
    return devices


def apply_control(s: Scenario, devices: Mapping[str, Device]) -> None:
    """Install all table entries, defaults and multicast groups of ``s``.

    Not idempotent: a second application fails on the first duplicate key.
    """
    for node in s.nodes:
        dev = devices[node.name]
        dev.set_default_action("gen_tbl", node.gen_default.action, node.gen_default.params())
        for cycle, call in node.gen_entries:
            dev.install_entry(TableEntry("gen_tbl", (cycle,), call.action, call.params()))
    mid = devices["midpoint"]
    for e in s.midpoint.mp_tbl:
        mid.install_entry(TableEntry("mp_tbl", (e.port,), "set_peer",
                                     (e.other_port, e.mcast_grp, e.det_id)))
    for e in s.midpoint.det_tbl:
        mid.install_entry(TableEntry("det_tbl", (e.det_id,), "set_pair",
                                     (e.port_a, e.port_b, e.mcast_grp)))
    for g, members in s.midpoint.mcast_groups:
        mid.create_mcast_group(g, members)
