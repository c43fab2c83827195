import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qp4link import mhp
from qp4link.pipeline import (
    Device,
    GroupError,
    NoProgram,
    Packet,
    ParseError,
    ProgramError,
    RegisterError,
    TableEntry,
    TableError,
    parse_program_document,
    serialize_program,
    validate,
)
from qp4link.pipeline.ir import (
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
    Valid,
)

H = HeaderSpec("h", (("a", 8), ("b", 16)))
X = HeaderSpec("x", (("v", 8),))
FWD = ActionSpec("fwd", (("port", 16),), (Forward(Param("port")),))
SET_B = ActionSpec("set_b", (("val", 16),), (SetField("hdr.h.b", Param("val")), Forward(Const(1))))
TBL = TableSpec("t", ("hdr.h.a",), ("fwd", "set_b"), ActionCall("fwd", (7,)))


def program(apply, **kw):
    fields = dict(
        name="toy",
        headers=(H, X),
        metadata=(("tmp", 8),),
        parser=(ParserState("start", ("h",)),),
        actions=(FWD, SET_B),
        tables=(TBL,),
        registers=(RegisterSpec("r", 8, 4),),
        apply=tuple(apply),
    )
    fields.update(kw)
    return PipelineProgram(**fields)


def device(apply, **kw):
    dev = Device("d")
    dev.load_program(program(apply, **kw))
    return dev


def pkt(a, b, tail=b""):
    return Packet(bytes([a]) + b.to_bytes(2, "big") + tail, ingress_port=1)


# -- execution ---------------------------------------------------------------


def test_miss_runs_default_action():
    dev = device([Apply("t")])
    dev.install_entry(TableEntry("t", (1,), "fwd", (3,)))
    assert dev.execute(pkt(1, 0)).outputs[0][0] == 3
    out = dev.execute(pkt(2, 0))
    assert out.kind == "unicast" and out.outputs[0][0] == 7


def test_entry_with_params_rewrites_field():
    dev = device([Apply("t")])
    dev.install_entry(TableEntry("t", (5,), "set_b", (0xBEEF,)))
    assert dev.execute(pkt(5, 0, b"zz")).outputs == ((1, b"\x05\xbe\xefzz"),)
    assert dev.execute(pkt(6, 0)).outputs[0][0] == 7


def test_register_read_after_write():
    dev = device([
        RegWrite("r", Const(3), Const(7)),
        RegRead("r", Const(3), "meta.tmp"),
        SetField("hdr.h.a", Ref("meta.tmp")),
        Forward(Const(1)),
    ])
    assert dev.execute(pkt(0, 0)).outputs == ((1, b"\x07\x00\x00"),)
    assert dev.register_read("r", 3) == 7


def test_control_plane_write_visible_to_data_plane():
    dev = device([RegRead("r", Const(2), "meta.tmp"), SetField("hdr.h.a", Ref("meta.tmp")),
                  Forward(Const(1))])
    dev.register_write("r", 2, 0x5A)
    assert dev.execute(pkt(0, 0)).outputs[0][1][0] == 0x5A


def test_register_bounds_from_control_plane():
    dev = device([Drop()])
    with pytest.raises(RegisterError):
        dev.register_read("r", 4)
    with pytest.raises(RegisterError):
        dev.register_write("r", -1, 0)
    with pytest.raises(RegisterError):
        dev.register_read("nope", 0)


@pytest.mark.parametrize("index", [Ref("hdr.h.a"), BinOp("add", Ref("hdr.h.a"), Const(0)),
                                   BinOp("sub", Ref("hdr.h.a"), Const(5))])
def test_out_of_range_register_index_traps(index):
    dev = device([RegWrite("r", index, Const(1)), Forward(Const(1))])
    ok = dev.execute(pkt(3 if isinstance(index, Ref) or index.op == "add" else 8, 0))
    assert ok.trap is None and ok.kind == "unicast"
    bad = dev.execute(pkt(4, 0))
    assert bad.trap is not None and "out of range" in bad.trap
    assert bad.dropped and bad.outputs == ()
    assert dev.traps == 1


def test_multicast_copy_count():
    dev = device([Multicast(Const(1))])
    dev.create_mcast_group(1, [1, 2, 5])
    out = dev.execute(pkt(1, 2, b"pp"))
    assert out.kind == "multicast"
    assert [p for p, _ in out.outputs] == [1, 2, 5]
    assert len({data for _, data in out.outputs}) == 1


def test_multicast_to_missing_group_traps():
    dev = device([Multicast(Const(9))])
    assert "unknown group" in dev.execute(pkt(0, 0)).trap


def test_add_and_remove_header_layout():
    dev = device([AddHeader("x"), SetField("hdr.x.v", Const(0xAB)), Forward(Const(1))])
    assert dev.execute(pkt(1, 0x0203, b"!")).outputs[0][1] == b"\x01\x02\x03\xab!"
    dev = device([RemoveHeader("h"), AddHeader("x"), Forward(Const(1))])
    assert dev.execute(pkt(1, 2, b"!")).outputs[0][1] == b"\x00!"


def test_add_header_keeps_existing_contents():
    dev = device([AddHeader("h"), Forward(Const(1))])
    assert dev.execute(pkt(9, 9)).outputs[0][1] == b"\x09\x00\x09"


def test_eight_bit_wraparound():
    dev = device([SetField("hdr.h.a", BinOp("add", Ref("hdr.h.a"), Const(1))), Forward(Const(1))])
    assert dev.execute(pkt(255, 0)).outputs[0][1][0] == 0


def test_invalid_header_access_traps():
    dev = device([SetField("hdr.h.a", Ref("hdr.x.v")), Forward(Const(1))])
    assert "invalid header" in dev.execute(pkt(0, 0)).trap
    dev = device([SetField("hdr.x.v", Const(1)), Forward(Const(1))])
    assert "invalid header" in dev.execute(pkt(0, 0)).trap


def test_truncated_packet_traps():
    dev = device([Forward(Const(1))])
    assert "malformed" in dev.execute(Packet(b"\x01\x02")).trap


def test_parser_reject_drops_silently():
    parser = (ParserState("start", ("h",), "hdr.h.a", ((1, "accept"),), "reject"),)
    dev = device([Forward(Const(1))], parser=parser)
    assert dev.execute(pkt(1, 0)).kind == "unicast"
    out = dev.execute(pkt(2, 0))
    assert out.dropped and out.trap is None


def test_no_forwarding_decision_drops():
    dev = device([SetField("meta.tmp", Const(1))])
    assert dev.execute(pkt(0, 0)).kind == "drop"


def test_extern_called_and_failures_trap():
    calls = []
    dev = device([Extern("probe", (Ref("hdr.h.a"), Const(4))), Drop()], externs=("probe",))
    out = dev.execute(pkt(3, 0))
    assert out.trap and "not registered" in out.trap
    dev.register_extern("probe", lambda *a: calls.append(a))
    dev.execute(pkt(3, 0))
    assert calls == [(3, 4)]
    dev.register_extern("probe", lambda *a: 1 / 0)
    assert "failed" in dev.execute(pkt(3, 0)).trap


def test_execute_without_program():
    with pytest.raises(NoProgram):
        Device("empty").execute(pkt(0, 0))


def test_purity_same_inputs_same_outputs():
    prog = mhp.build_midpoint_program(1000)

    def run():
        dev = Device("m")
        dev.load_program(prog)
        dev.install_entry(TableEntry("mp_tbl", (1,), "set_peer", (2, 1, 0)))
        dev.install_entry(TableEntry("mp_tbl", (2,), "set_peer", (1, 1, 0)))
        dev.install_entry(TableEntry("det_tbl", (0,), "set_pair", (1, 2, 1)))
        dev.create_mcast_group(1, [1, 2])
        outs = [
            dev.execute(Packet(mhp.encode(mhp.Gen(4, 0, 2)), 1, 3500)),
            dev.execute(Packet(mhp.encode(mhp.Gen(4, 0, 2)), 2, 3600)),
            dev.execute(Packet(mhp.encode(mhp.Detector(1, 0, 3)), 0, 4000)),
        ]
        regs = {r.name: [dev.register_read(r.name, i) for i in range(r.size)] for r in prog.registers}
        return outs, regs

    assert run() == run()


# -- control plane -----------------------------------------------------------


def test_table_entry_errors():
    dev = device([Apply("t")])
    dev.install_entry(TableEntry("t", (5,), "fwd", (1,)))
    with pytest.raises(TableError, match="duplicate"):
        dev.install_entry(TableEntry("t", (5,), "fwd", (2,)))
    with pytest.raises(TableError, match="width mismatch"):
        dev.install_entry(TableEntry("t", (6,), "fwd", (1 << 16,)))
    with pytest.raises(TableError, match="width mismatch"):
        dev.install_entry(TableEntry("t", (256,), "fwd", (1,)))
    with pytest.raises(TableError):
        dev.install_entry(TableEntry("t", (6,), "nope", ()))
    with pytest.raises(TableError):
        dev.install_entry(TableEntry("t", (6,), "fwd", ()))
    with pytest.raises(TableError):
        dev.install_entry(TableEntry("zzz", (6,), "fwd", (1,)))
    with pytest.raises(TableError):
        dev.set_default_action("t", "nope")


def test_modify_and_delete_entries():
    dev = device([Apply("t")])
    dev.install_entry(TableEntry("t", (5,), "fwd", (1,)))
    dev.modify_entry(TableEntry("t", (5,), "fwd", (4,)))
    assert dev.execute(pkt(5, 0)).outputs[0][0] == 4
    dev.delete_entry("t", (5,))
    assert dev.execute(pkt(5, 0)).outputs[0][0] == 7
    with pytest.raises(TableError):
        dev.delete_entry("t", (5,))
    with pytest.raises(TableError):
        dev.modify_entry(TableEntry("t", (5,), "fwd", (4,)))
    dev.set_default_action("t", "fwd", (11,))
    assert dev.default_action("t") == ActionCall("fwd", (11,))
    assert dev.execute(pkt(5, 0)).outputs[0][0] == 11


def test_group_errors():
    dev = device([Drop()])
    with pytest.raises(GroupError, match="reserved"):
        dev.create_mcast_group(0, [1])
    with pytest.raises(GroupError):
        dev.create_mcast_group(2, [])
    dev.create_mcast_group(2, [1])
    with pytest.raises(GroupError):
        dev.create_mcast_group(2, [3])


def test_reload_resets_state():
    dev = device([Drop()])
    dev.register_write("r", 1, 9)
    dev.install_entry(TableEntry("t", (1,), "fwd", (1,)))
    dev.load_program(program([Drop()]))
    assert dev.register_read("r", 1) == 0 and dev.entries("t") == {}


# -- static validation -------------------------------------------------------


def test_shipped_programs_validate():
    validate(mhp.build_node_program())
    validate(mhp.build_midpoint_program(300000))


MUTANTS = {
    "unresolved name": dict(apply=(RegWrite("ghost", Const(0), Const(0)),)),
    "non-terminating parser": dict(parser=(
        ParserState("start", ("h",), "hdr.h.a", ((1, "again"),)),
        ParserState("again", (), "hdr.h.a", ((1, "start"),)),
    )),
    "width mismatch": dict(apply=(SetField("hdr.h.a", Ref("hdr.h.b")),)),
    "byte aligned": dict(headers=(HeaderSpec("h", (("a", 8), ("b", 15))), X)),
    "duplicate": dict(actions=(FWD, FWD, SET_B)),
    "no 'start' state": dict(parser=(ParserState("begin", ("h",)),)),
    "inside an action": dict(actions=(ActionSpec("fwd", (("port", 16),), (Apply("t"),)), SET_B)),
    "not permitted": dict(tables=(TableSpec("t", ("hdr.h.a",), ("fwd",), ActionCall("set_b", (1,))),)),
    "shadows": dict(metadata=(("drop", 1),)),
    "does not fit": dict(apply=(SetField("hdr.h.a", Const(256)),)),
}


@pytest.mark.parametrize("rule", sorted(MUTANTS))
def test_validation_rejects_mutant(rule):
    base = dict(apply=(Apply("t"),))
    base.update(MUTANTS[rule])
    with pytest.raises(ProgramError) as exc:
        validate(program(**base))
    assert rule in str(exc.value)


def test_validation_reports_every_error():
    with pytest.raises(ProgramError) as exc:
        validate(program((RegWrite("ghost", Const(0), Const(0)), Apply("nope"))))
    assert len(exc.value.errors) == 2


# -- arithmetic property -----------------------------------------------------

FIELDS = {"p": 8, "q": 8, "s": 16}
WIDE = HeaderSpec("w", (("p", 8), ("q", 8), ("s", 16), ("o16", 16), ("o32", 32)))
OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
}

leaves = st.one_of(
    st.sampled_from(sorted(FIELDS)).map(lambda f: Ref(f"hdr.w.{f}")),
    st.integers(0, 0xFFFF).map(Const),
)
exprs = st.recursive(
    leaves,
    lambda sub: st.builds(BinOp, st.sampled_from(sorted(OPS)), sub, sub),
    max_leaves=8,
)


def oracle(e, env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Ref):
        return env[e.path.split(".")[-1]]
    return OPS[e.op](oracle(e.left, env), oracle(e.right, env))


@settings(max_examples=80, deadline=None)
@given(exprs, st.integers(0, 255), st.integers(0, 255), st.integers(0, 0xFFFF))
def test_arithmetic_wraps_modulo_destination_width(e, p, q, s):
    prog = PipelineProgram(
        name="arith",
        headers=(WIDE,),
        parser=(ParserState("start", ("w",)),),
        apply=(SetField("hdr.w.o16", e), SetField("hdr.w.o32", e), Forward(Const(1))),
    )
    dev = Device("a")
    dev.load_program(prog)
    data = bytes([p, q]) + s.to_bytes(2, "big") + bytes(6)
    out = dev.execute(Packet(data)).outputs[0][1]
    expected = oracle(e, {"p": p, "q": q, "s": s})
    assert int.from_bytes(out[4:6], "big") == expected % 2 ** 16
    assert int.from_bytes(out[6:10], "big") == expected % 2 ** 32


@pytest.mark.parametrize("op,a,b,expect", [
    ("div", 7, 2, 3), ("mod", 7, 2, 1), ("shl", 1, 7, 128), ("shl", 1, 8, 0),
    ("shr", 128, 7, 1), ("lt", 1, 2, 1), ("ge", 1, 2, 0), ("eq", 3, 3, 1),
])
def test_other_operators(op, a, b, expect):
    prog = program([SetField("hdr.h.a", BinOp(op, Ref("hdr.h.a"), Const(b))), Forward(Const(1))])
    dev = Device("o")
    dev.load_program(prog)
    assert dev.execute(pkt(a, 0)).outputs[0][1][0] == expect


def test_division_by_zero_traps():
    dev = device([SetField("hdr.h.a", BinOp("div", Ref("hdr.h.a"), Ref("meta.tmp"))),
                  Forward(Const(1))])
    assert "division by zero" in dev.execute(pkt(1, 0)).trap


def test_conditionals_and_validity():
    dev = device([
        If(BinOp("land", Valid("h"), BinOp("eq", Ref("hdr.h.a"), Const(1))),
           (Forward(Const(2)),), (Forward(Const(3)),)),
    ])
    assert dev.execute(pkt(1, 0)).outputs[0][0] == 2
    assert dev.execute(pkt(2, 0)).outputs[0][0] == 3


# -- documents ---------------------------------------------------------------


def test_shipped_documents_equal_builders():
    assert mhp.load_shipped_program("node") == mhp.build_node_program()
    assert mhp.load_shipped_program("midpoint") == mhp.build_midpoint_program(mhp.SHIPPED_BIN_WIDTH_NS)


@pytest.mark.parametrize("prog", [mhp.build_node_program({1: 1, 2: 3}), mhp.build_midpoint_program(500),
                                  program([Apply("t"), If(Valid("x"), (RemoveHeader("x"),))])])
def test_document_round_trip(prog):
    assert parse_program_document(serialize_program(prog)) == prog


def test_truncated_document():
    text = serialize_program(mhp.build_node_program())
    with pytest.raises(ParseError) as exc:
        parse_program_document(text[: len(text) // 2])
    assert exc.value.line is not None


def test_unknown_instruction():
    doc = json.loads(serialize_program(program([Drop()])))
    doc["apply"] = [{"instr": "teleport"}]
    with pytest.raises(ParseError, match="teleport") as exc:
        parse_program_document(json.dumps(doc))
    assert exc.value.path.startswith("apply")


def test_document_missing_key():
    doc = json.loads(serialize_program(program([Drop()])))
    del doc["headers"][0]["fields"]
    with pytest.raises(ParseError, match="fields"):
        parse_program_document(json.dumps(doc))


def test_document_is_validated():
    doc = json.loads(serialize_program(program([Drop()])))
    doc["apply"] = [{"instr": "apply", "table": "ghost"}]
    with pytest.raises(ProgramError):
        Device("v").load_program(parse_program_document(json.dumps(doc)))


def test_program_is_immutable():
    with pytest.raises(dataclasses.FrozenInstanceError):
        program([Drop()]).name = "other"
