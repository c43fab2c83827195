"""Midpoint Heralding Protocol: wire formats and the two pipeline programs.

All messages start with a one-byte type. Integers are big-endian.

=========  ====  =====================================================
message    type  layout after the type byte
=========  ====  =====================================================
TIMER      0x01  cycle:u32                                   (5 bytes)
GEN        0x02  cycle:u32 qubit_slot:u16 attempt_params:u16 (9 bytes)
MP_REPLY   0x03  outcome:u8 cycle:u32 pair_seq:u32          (10 bytes)
DETECTOR   0x04  outcome:u8 det_id:u16 bin:u32               (8 bytes)
=========  ====  =====================================================

A GEN packet is the TIMER packet it was produced from with two fields
appended, so its first five bytes read as a TIMER carry the same cycle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Mapping, Optional, Union

from .pipeline import ir
from .pipeline.document import parse_program_document
from .pipeline.ir import (
    ActionCall,
    ActionSpec,
    AddHeader,
    Apply,
    BinOp,
    Const,
    Drop,
    Extern,
    Forward,
    HeaderSpec,
    If,
    Multicast,
    Param,
    ParserState,
    PipelineProgram,
    Ref,
    RegisterSpec,
    RegRead,
    RegWrite,
    RemoveHeader,
    SetField,
    TableSpec,
    UnOp,
    Valid,
)

TIMER_TYPE = 0x01
GEN_TYPE = 0x02
MP_REPLY_TYPE = 0x03
DETECTOR_TYPE = 0x04

FAIL = 0
SUCCESS = 1
ERROR = 2
OUTCOME_NAMES = {FAIL: "FAIL", SUCCESS: "SUCCESS", ERROR: "ERROR"}

CPU_PORT = 0


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Timer:
    cycle: int


@dataclass(frozen=True)
class Gen:
    cycle: int
    qubit_slot: int
    attempt_params: int


@dataclass(frozen=True)
class Detector:
    outcome: int
    det_id: int
    bin: int


@dataclass(frozen=True)
class MpReply:
    outcome: int
    cycle: int
    pair_seq: int = 0


WireMessage = Union[Timer, Gen, Detector, MpReply]

_FORMATS = {
    TIMER_TYPE: (struct.Struct(">BI"), Timer),
    GEN_TYPE: (struct.Struct(">BIHH"), Gen),
    MP_REPLY_TYPE: (struct.Struct(">BBII"), MpReply),
    DETECTOR_TYPE: (struct.Struct(">BBHI"), Detector),
}
_TYPES = {Timer: TIMER_TYPE, Gen: GEN_TYPE, MpReply: MP_REPLY_TYPE, Detector: DETECTOR_TYPE}


_FIELDS = {cls: tuple(cls.__dataclass_fields__) for cls in _TYPES}


def _check(msg: WireMessage) -> None:
    if isinstance(msg, MpReply):
        if msg.outcome not in OUTCOME_NAMES:
            raise ValueError(f"MP_REPLY outcome {msg.outcome} is not FAIL, SUCCESS or ERROR")
        if msg.outcome != SUCCESS and msg.pair_seq != 0:
            raise ValueError("MP_REPLY pair_seq must be 0 unless the outcome is SUCCESS")
    elif isinstance(msg, Detector) and msg.outcome not in (0, 1):
        raise ValueError(f"DETECTOR outcome {msg.outcome} is not 0 or 1")


def encode(msg: WireMessage) -> bytes:
    cls = type(msg)
    msg_type = _TYPES[cls]
    if msg_type == MP_REPLY_TYPE or msg_type == DETECTOR_TYPE:
        _check(msg)
    try:
        return _FORMATS[msg_type][0].pack(msg_type, *[getattr(msg, f) for f in _FIELDS[cls]])
    except struct.error as exc:
        raise ValueError(f"{cls.__name__} field out of range: {exc}") from None


def decode(data: bytes) -> WireMessage:
    if not data:
        raise DecodeError("truncated: empty frame")
    entry = _FORMATS.get(data[0])
    if entry is None:
        raise DecodeError(f"unknown type 0x{data[0]:02x}")
    fmt, cls = entry
    if len(data) != fmt.size:
        if len(data) < fmt.size:
            raise DecodeError(f"truncated: {cls.__name__} needs {fmt.size} bytes, got {len(data)}")
        raise DecodeError(f"bad length: {cls.__name__} is {fmt.size} bytes, got {len(data)}")
    msg = cls(*fmt.unpack(data)[1:])
    if cls is MpReply or cls is Detector:
        try:
            _check(msg)
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
    return msg


_TIMER_PACK = _FORMATS[TIMER_TYPE][0].pack


def timer_frame(cycle: int) -> bytes:
    """``encode(Timer(cycle))`` for the per-cycle hot path; the cycle wraps at 2**32."""
    return _TIMER_PACK(TIMER_TYPE, cycle & 0xFFFFFFFF)


def bin_of(t: int, bin_width_ns: int) -> int:
    if bin_width_ns <= 0:
        raise ValueError("bin width must be positive")
    return t // bin_width_ns


# -- programs ----------------------------------------------------------------

COMMON = HeaderSpec("common", (("msg_type", 8),))
TIMER_HDR = HeaderSpec("timer", (("cycle", 32),))
GEN_HDR = HeaderSpec("gen", (("qubit_slot", 16), ("attempt_params", 16)))
REPLY_HDR = HeaderSpec("reply", (("outcome", 8), ("cycle", 32), ("pair_seq", 32)))
DETECTOR_HDR = HeaderSpec("detector", (("outcome", 8), ("det_id", 16), ("bin", 32)))

EMIT_PHOTON = "emit_photon"


def _ref(path: str) -> Ref:
    return Ref(path)


def _eq(a, b) -> BinOp:
    return BinOp("eq", a, b)


def _all(*conds) -> ir.Expr:
    out = conds[0]
    for c in conds[1:]:
        out = BinOp("land", out, c)
    return out


def _any(*conds) -> ir.Expr:
    out = conds[0]
    for c in conds[1:]:
        out = BinOp("lor", out, c)
    return out


def build_node_program(ports: Optional[Mapping[int, int]] = None) -> PipelineProgram:
    """Program for an end node.

    ``ports`` maps each quantum port to its paired classical port (default
    ``{1: 1}``). TIMER pseudo-packets on the CPU port are looked up in
    ``gen_tbl``; MP_REPLY packets arriving on a classical port go to the CPU
    port; everything else is dropped.
    """
    ports = dict(ports or {1: 1})
    cports = sorted(set(ports.values()))
    ingress = _ref("meta.ingress_port")
    gen = ActionSpec(
        "gen",
        (("qport", 16), ("cport", 16), ("qubit_slot", 16), ("attempt_params", 16)),
        (
            Extern(EMIT_PHOTON, (Param("qport"), Param("qubit_slot"), _ref("hdr.timer.cycle"),
                                 Param("attempt_params"))),
            AddHeader("gen"),
            SetField("hdr.gen.qubit_slot", Param("qubit_slot")),
            SetField("hdr.gen.attempt_params", Param("attempt_params")),
            SetField("hdr.common.msg_type", Const(GEN_TYPE)),
            Forward(Param("cport")),
        ),
    )
    no_op = ActionSpec("no_op", (), (Drop(),))
    from_classical = _any(*(_eq(ingress, Const(p)) for p in cports))
    return PipelineProgram(
        name="mhp_node",
        headers=(COMMON, TIMER_HDR, GEN_HDR, REPLY_HDR),
        parser=(
            ParserState("start", ("common",), "hdr.common.msg_type",
                        ((TIMER_TYPE, "parse_timer"), (GEN_TYPE, "parse_gen"),
                         (MP_REPLY_TYPE, "parse_reply"))),
            ParserState("parse_timer", ("timer",)),
            ParserState("parse_gen", ("timer", "gen")),
            ParserState("parse_reply", ("reply",)),
        ),
        actions=(gen, no_op),
        tables=(TableSpec("gen_tbl", ("hdr.timer.cycle",), ("gen", "no_op"), ActionCall("no_op")),),
        externs=(EMIT_PHOTON,),
        apply=(
            If(
                _all(Valid("timer"), UnOp("not", Valid("gen")), _eq(ingress, Const(CPU_PORT))),
                (Apply("gen_tbl"),),
                (
                    If(
                        _all(Valid("reply"), from_classical),
                        (Forward(Const(CPU_PORT)),),
                        (Drop(),),
                    ),
                ),
            ),
        ),
    )


def build_midpoint_program(bin_width_ns: int, num_ports: int = 16,
                           num_detectors: int = 16) -> PipelineProgram:
    """Program for the heralding station.

    Each GEN and DETECTOR message is stored in registers (GEN state indexed
    by ingress port, detector state by detector id). After storing, the
    program checks whether both GENs and the detector report of one link are
    present and fall in the same time bin; if so it multicasts one MP_REPLY
    and clears the three valid flags, otherwise it drops the packet and keeps
    the state.
    """
    if bin_width_ns <= 0:
        raise ValueError("bin width must be positive")
    W = Const(bin_width_ns)
    m = _ref
    metadata = (
        ("hit", 1), ("port_a", 16), ("port_b", 16), ("grp", 16), ("det", 16),
        ("valid_a", 1), ("valid_b", 1), ("valid_d", 1),
        ("time_a", 64), ("time_b", 64), ("det_bin", 32),
        ("cycle_a", 32), ("cycle_b", 32), ("params_a", 16), ("params_b", 16),
        ("det_outcome", 8), ("seq", 32), ("outcome", 8),
    )
    set_peer = ActionSpec(
        "set_peer",
        (("other_port", 16), ("mcast_grp", 16), ("det_id", 16)),
        (
            SetField("meta.port_b", Param("other_port")),
            SetField("meta.grp", Param("mcast_grp")),
            SetField("meta.det", Param("det_id")),
            SetField("meta.hit", Const(1)),
        ),
    )
    set_pair = ActionSpec(
        "set_pair",
        (("port_a", 16), ("port_b", 16), ("mcast_grp", 16)),
        (
            SetField("meta.port_a", Param("port_a")),
            SetField("meta.port_b", Param("port_b")),
            SetField("meta.grp", Param("mcast_grp")),
            SetField("meta.hit", Const(1)),
        ),
    )
    miss = ActionSpec("miss", (), (Drop(),))
    ingress = m("meta.ingress_port")
    store_gen = (
        RegWrite("gen_cycle", ingress, m("hdr.timer.cycle")),
        RegWrite("gen_slot", ingress, m("hdr.gen.qubit_slot")),
        RegWrite("gen_params", ingress, m("hdr.gen.attempt_params")),
        RegWrite("gen_time", ingress, m("meta.arrival_time_ns")),
        RegWrite("gen_valid", ingress, Const(1)),
        SetField("meta.port_a", ingress),
        Apply("mp_tbl"),
    )
    det_id = m("hdr.detector.det_id")
    store_detector = (
        RegWrite("det_outcome", det_id, m("hdr.detector.outcome")),
        RegWrite("det_bin", det_id, m("hdr.detector.bin")),
        RegWrite("det_valid", det_id, Const(1)),
        SetField("meta.det", det_id),
        Apply("det_tbl"),
    )
    a, b, d = m("meta.port_a"), m("meta.port_b"), m("meta.det")
    load_state = (
        RegRead("gen_valid", a, "meta.valid_a"),
        RegRead("gen_valid", b, "meta.valid_b"),
        RegRead("det_valid", d, "meta.valid_d"),
        RegRead("gen_time", a, "meta.time_a"),
        RegRead("gen_time", b, "meta.time_b"),
        RegRead("det_bin", d, "meta.det_bin"),
        RegRead("gen_cycle", a, "meta.cycle_a"),
        RegRead("gen_cycle", b, "meta.cycle_b"),
        RegRead("gen_params", a, "meta.params_a"),
        RegRead("gen_params", b, "meta.params_b"),
        RegRead("det_outcome", d, "meta.det_outcome"),
    )
    complete = _all(
        _eq(m("meta.valid_a"), Const(1)),
        _eq(m("meta.valid_b"), Const(1)),
        _eq(m("meta.valid_d"), Const(1)),
        _eq(BinOp("div", m("meta.time_a"), W), BinOp("div", m("meta.time_b"), W)),
        _eq(BinOp("div", m("meta.time_b"), W), m("meta.det_bin")),
    )
    inconsistent = _any(
        BinOp("ne", m("meta.cycle_a"), m("meta.cycle_b")),
        BinOp("ne", m("meta.params_a"), m("meta.params_b")),
    )
    decide = If(
        inconsistent,
        (SetField("meta.outcome", Const(ERROR)), SetField("meta.seq", Const(0))),
        (
            If(
                _eq(m("meta.det_outcome"), Const(1)),
                (
                    RegRead("pair_seq", d, "meta.seq"),
                    SetField("meta.seq", BinOp("add", m("meta.seq"), Const(1))),
                    RegWrite("pair_seq", d, m("meta.seq")),
                    SetField("meta.outcome", Const(SUCCESS)),
                ),
                (SetField("meta.outcome", Const(FAIL)), SetField("meta.seq", Const(0))),
            ),
        ),
    )
    reply = (
        decide,
        RegWrite("gen_valid", a, Const(0)),
        RegWrite("gen_valid", b, Const(0)),
        RegWrite("det_valid", d, Const(0)),
        RemoveHeader("timer"),
        RemoveHeader("gen"),
        RemoveHeader("detector"),
        AddHeader("reply"),
        SetField("hdr.common.msg_type", Const(MP_REPLY_TYPE)),
        SetField("hdr.reply.outcome", m("meta.outcome")),
        SetField("hdr.reply.cycle", m("meta.cycle_a")),
        SetField("hdr.reply.pair_seq", m("meta.seq")),
        Multicast(m("meta.grp")),
    )
    return PipelineProgram(
        name="mhp_midpoint",
        headers=(COMMON, TIMER_HDR, GEN_HDR, DETECTOR_HDR, REPLY_HDR),
        metadata=metadata,
        parser=(
            ParserState("start", ("common",), "hdr.common.msg_type",
                        ((GEN_TYPE, "parse_gen"), (DETECTOR_TYPE, "parse_detector"))),
            ParserState("parse_gen", ("timer", "gen")),
            ParserState("parse_detector", ("detector",)),
        ),
        actions=(set_peer, set_pair, miss),
        tables=(
            TableSpec("mp_tbl", ("meta.ingress_port",), ("set_peer", "miss"), ActionCall("miss")),
            TableSpec("det_tbl", ("hdr.detector.det_id",), ("set_pair", "miss"), ActionCall("miss")),
        ),
        registers=(
            RegisterSpec("gen_cycle", 32, num_ports),
            RegisterSpec("gen_slot", 16, num_ports),
            RegisterSpec("gen_params", 16, num_ports),
            RegisterSpec("gen_time", 64, num_ports),
            RegisterSpec("gen_valid", 1, num_ports),
            RegisterSpec("det_outcome", 8, num_detectors),
            RegisterSpec("det_bin", 32, num_detectors),
            RegisterSpec("det_valid", 1, num_detectors),
            RegisterSpec("pair_seq", 32, num_detectors),
        ),
        externs=(),
        apply=(
            If(Valid("gen"), store_gen, (If(Valid("detector"), store_detector, (Drop(),)),)),
            If(_eq(m("meta.hit"), Const(1)),
               load_state + (If(complete, reply, (Drop(),)),)),
        ),
    )


# Bin width baked into the shipped midpoint document.
SHIPPED_BIN_WIDTH_NS = 300_000

_SHIPPED: Dict[str, str] = {"node": "node.json", "midpoint": "midpoint.json"}


def shipped_program_text(which: str) -> str:
    return resources.files("qp4link.programs").joinpath(_SHIPPED[which]).read_text()


def load_shipped_program(which: str) -> PipelineProgram:
    """Parse one of the program documents shipped with the package."""
    return parse_program_document(shipped_program_text(which))
