"""Program representation for the match-action pipeline and its static checks.

Field references are dotted paths: ``hdr.<header>.<field>`` or
``meta.<field>``. Everything is an unsigned integer; the only typing is the
bit width of each field, parameter and register cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

# Built-in metadata available to every program.
STANDARD_META: Dict[str, int] = {
    "ingress_port": 16,
    "arrival_time_ns": 64,
    "egress_spec": 16,
    "mcast_grp": 16,
    "drop": 1,
}
EGRESS_NONE = 0xFFFF
PARSER_ACCEPT = "accept"
PARSER_REJECT = "reject"

ARITH_OPS = ("add", "sub", "mul", "div", "mod", "and", "or", "xor")
SHIFT_OPS = ("shl", "shr")
COMPARE_OPS = ("eq", "ne", "lt", "le", "gt", "ge")
LOGIC_OPS = ("land", "lor")
BINARY_OPS = ARITH_OPS + SHIFT_OPS + COMPARE_OPS + LOGIC_OPS
UNARY_OPS = ("not", "inv")


class ProgramError(Exception):
    """Static validation failure. ``errors`` holds ``(location, message)`` pairs."""

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in self.errors))


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: int
    width: Optional[int] = None


@dataclass(frozen=True)
class Ref:
    path: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Valid:
    header: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class UnOp:
    op: str
    arg: "Expr"


Expr = Union[Const, Ref, Param, Valid, BinOp, UnOp]


# -- instructions ------------------------------------------------------------


@dataclass(frozen=True)
class Apply:
    table: str


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Tuple["Instruction", ...] = ()
    orelse: Tuple["Instruction", ...] = ()


@dataclass(frozen=True)
class SetField:
    dest: str
    value: Expr


@dataclass(frozen=True)
class RegRead:
    register: str
    index: Expr
    dest: str


@dataclass(frozen=True)
class RegWrite:
    register: str
    index: Expr
    value: Expr


@dataclass(frozen=True)
class AddHeader:
    header: str


@dataclass(frozen=True)
class RemoveHeader:
    header: str


@dataclass(frozen=True)
class Extern:
    name: str
    args: Tuple[Expr, ...] = ()


@dataclass(frozen=True)
class Forward:
    port: Expr


@dataclass(frozen=True)
class Multicast:
    group: Expr


@dataclass(frozen=True)
class Drop:
    pass


Instruction = Union[
    Apply, If, SetField, RegRead, RegWrite, AddHeader, RemoveHeader, Extern, Forward, Multicast, Drop
]


# -- program -----------------------------------------------------------------


@dataclass(frozen=True)
class HeaderSpec:
    name: str
    fields: Tuple[Tuple[str, int], ...]

    @property
    def bit_length(self) -> int:
        return sum(w for _, w in self.fields)


@dataclass(frozen=True)
class ParserState:
    name: str
    extract: Tuple[str, ...] = ()
    select: Optional[str] = None
    cases: Tuple[Tuple[int, str], ...] = ()
    default: str = PARSER_ACCEPT


@dataclass(frozen=True)
class ActionSpec:
    name: str
    params: Tuple[Tuple[str, int], ...] = ()
    body: Tuple[Instruction, ...] = ()


@dataclass(frozen=True)
class ActionCall:
    action: str
    params: Tuple[int, ...] = ()


@dataclass(frozen=True)
class TableSpec:
    name: str
    keys: Tuple[str, ...]
    actions: Tuple[str, ...]
    default_action: ActionCall


@dataclass(frozen=True)
class RegisterSpec:
    name: str
    width: int
    size: int


@dataclass(frozen=True)
class PipelineProgram:
    name: str
    headers: Tuple[HeaderSpec, ...] = ()
    metadata: Tuple[Tuple[str, int], ...] = ()
    parser: Tuple[ParserState, ...] = ()
    actions: Tuple[ActionSpec, ...] = ()
    tables: Tuple[TableSpec, ...] = ()
    registers: Tuple[RegisterSpec, ...] = ()
    externs: Tuple[str, ...] = ()
    apply: Tuple[Instruction, ...] = ()

    def header(self, name: str) -> HeaderSpec:
        for h in self.headers:
            if h.name == name:
                return h
        raise KeyError(name)

    def action(self, name: str) -> ActionSpec:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def table(self, name: str) -> TableSpec:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def register(self, name: str) -> RegisterSpec:
        for r in self.registers:
            if r.name == name:
                return r
        raise KeyError(name)

    def field_widths(self) -> Dict[str, int]:
        widths = {f"meta.{n}": w for n, w in STANDARD_META.items()}
        widths.update({f"meta.{n}": w for n, w in self.metadata})
        for h in self.headers:
            for f, w in h.fields:
                widths[f"hdr.{h.name}.{f}"] = w
        return widths


# -- static validation -------------------------------------------------------


@dataclass
class _Checker:
    program: PipelineProgram
    errors: List[Tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        p = self.program
        self.widths = p.field_widths()
        self.headers = {h.name: h for h in p.headers}
        self.actions = {a.name: a for a in p.actions}
        self.tables = {t.name: t for t in p.tables}
        self.registers = {r.name: r for r in p.registers}
        self.externs = set(p.externs)

    def err(self, loc: str, msg: str) -> None:
        self.errors.append((loc, msg))

    def run(self) -> None:
        self.check_declarations()
        self.check_parser()
        for a in self.program.actions:
            params = dict(a.params)
            for pname, w in a.params:
                if w <= 0:
                    self.err(f"action {a.name}", f"parameter {pname!r} has non-positive width {w}")
            self.block(a.body, f"action {a.name}", params, in_action=True)
        for t in self.program.tables:
            self.check_table(t)
        self.block(self.program.apply, "apply", {}, in_action=False)

    def check_declarations(self) -> None:
        p = self.program
        for kind, names in (
            ("header", [h.name for h in p.headers]),
            ("action", [a.name for a in p.actions]),
            ("table", [t.name for t in p.tables]),
            ("register", [r.name for r in p.registers]),
            ("parser state", [s.name for s in p.parser]),
            ("metadata field", [n for n, _ in p.metadata]),
        ):
            seen = set()
            for n in names:
                if n in seen:
                    self.err(kind, f"duplicate {kind} {n!r}")
                seen.add(n)
        for h in p.headers:
            if not h.fields:
                self.err(f"header {h.name}", "header has no fields")
            for f, w in h.fields:
                if w <= 0:
                    self.err(f"header {h.name}", f"field {f!r} has non-positive width {w}")
            if h.bit_length % 8:
                self.err(f"header {h.name}", f"total width {h.bit_length} bits is not byte aligned")
        for n, w in p.metadata:
            if n in STANDARD_META:
                self.err("metadata", f"{n!r} shadows a standard metadata field")
            if w <= 0:
                self.err("metadata", f"field {n!r} has non-positive width {w}")
        for r in p.registers:
            if r.width <= 0 or r.size <= 0:
                self.err(f"register {r.name}", "width and size must be positive")

    def check_parser(self) -> None:
        states = {s.name: s for s in self.program.parser}
        if "start" not in states:
            self.err("parser", "no 'start' state")
            return
        targets = set(states) | {PARSER_ACCEPT, PARSER_REJECT}
        for s in self.program.parser:
            loc = f"parser state {s.name}"
            if s.name in (PARSER_ACCEPT, PARSER_REJECT):
                self.err(loc, "reserved state name")
            for h in s.extract:
                if h not in self.headers:
                    self.err(loc, f"unresolved name: header {h!r}")
            if s.select is not None and s.select not in self.widths:
                self.err(loc, f"unresolved name: select field {s.select!r}")
            if s.cases and s.select is None:
                self.err(loc, "select cases without a select field")
            for value, nxt in s.cases:
                if nxt not in targets:
                    self.err(loc, f"unresolved name: state {nxt!r}")
                if s.select in self.widths and not 0 <= value < (1 << self.widths[s.select]):
                    self.err(loc, f"case value {value} does not fit {s.select}")
            if s.default not in targets:
                self.err(loc, f"unresolved name: state {s.default!r}")
        # cycle detection over the select graph
        WHITE, GREY, BLACK = 0, 1, 2
        colour = {n: WHITE for n in states}

        def visit(n: str) -> bool:
            colour[n] = GREY
            s = states[n]
            for nxt in [v for _, v in s.cases] + [s.default]:
                if nxt not in states:
                    continue
                if colour[nxt] == GREY:
                    return True
                if colour[nxt] == WHITE and visit(nxt):
                    return True
            colour[n] = BLACK
            return False

        if visit("start"):
            self.err("parser", "non-terminating parser: select graph has a cycle")

    def check_table(self, t: TableSpec) -> None:
        loc = f"table {t.name}"
        if not t.keys:
            self.err(loc, "table has no key fields")
        for k in t.keys:
            if k not in self.widths:
                self.err(loc, f"unresolved name: key field {k!r}")
        for a in t.actions:
            if a not in self.actions:
                self.err(loc, f"unresolved name: action {a!r}")
        call = t.default_action
        if call.action not in t.actions:
            self.err(loc, f"default action {call.action!r} is not permitted by the table")
        elif call.action in self.actions:
            problem = check_call(self.actions[call.action], call.params)
            if problem:
                self.err(loc, f"default action: {problem}")

    # expressions return their width (None for an unsized constant)
    def expr(self, e: Expr, loc: str, params: Dict[str, int]) -> Optional[int]:
        if isinstance(e, Const):
            if e.value < 0:
                self.err(loc, f"negative constant {e.value}")
            if e.width is not None and e.value >= (1 << e.width):
                self.err(loc, f"constant {e.value} does not fit {e.width} bits")
            return e.width
        if isinstance(e, Ref):
            if e.path not in self.widths:
                self.err(loc, f"unresolved name: field {e.path!r}")
                return None
            return self.widths[e.path]
        if isinstance(e, Param):
            if e.name not in params:
                self.err(loc, f"unresolved name: parameter {e.name!r}")
                return None
            return params[e.name]
        if isinstance(e, Valid):
            if e.header not in self.headers:
                self.err(loc, f"unresolved name: header {e.header!r}")
            return 1
        if isinstance(e, BinOp):
            if e.op not in BINARY_OPS:
                self.err(loc, f"unknown operator {e.op!r}")
            lw = self.expr(e.left, loc, params)
            rw = self.expr(e.right, loc, params)
            if e.op in COMPARE_OPS or e.op in LOGIC_OPS:
                return 1
            if e.op in SHIFT_OPS:
                return lw
            known = [w for w in (lw, rw) if w is not None]
            return max(known) if known else None
        if isinstance(e, UnOp):
            if e.op not in UNARY_OPS:
                self.err(loc, f"unknown operator {e.op!r}")
            w = self.expr(e.arg, loc, params)
            return 1 if e.op == "not" else w
        self.err(loc, f"not an expression: {e!r}")
        return None

    def assign(self, dest: str, value_width: Optional[int], value: Expr, loc: str) -> None:
        if dest not in self.widths:
            self.err(loc, f"unresolved name: destination {dest!r}")
            return
        dw = self.widths[dest]
        if value_width is not None and value_width > dw:
            self.err(loc, f"width mismatch: {value_width}-bit value assigned to {dw}-bit {dest}")
        if isinstance(value, Const) and value.value >= (1 << dw):
            self.err(loc, f"width mismatch: constant {value.value} does not fit {dw}-bit {dest}")

    def block(self, body, loc: str, params: Dict[str, int], in_action: bool) -> None:
        for i, ins in enumerate(body):
            self.instruction(ins, f"{loc}[{i}]", params, in_action)

    def instruction(self, ins, loc: str, params: Dict[str, int], in_action: bool) -> None:
        if isinstance(ins, Apply):
            if in_action:
                self.err(loc, "tables cannot be applied from inside an action")
            if ins.table not in self.tables:
                self.err(loc, f"unresolved name: table {ins.table!r}")
        elif isinstance(ins, If):
            self.expr(ins.cond, loc, params)
            self.block(ins.then, f"{loc}.then", params, in_action)
            self.block(ins.orelse, f"{loc}.else", params, in_action)
        elif isinstance(ins, SetField):
            self.assign(ins.dest, self.expr(ins.value, loc, params), ins.value, loc)
        elif isinstance(ins, RegRead):
            reg = self.registers.get(ins.register)
            self.expr(ins.index, loc, params)
            if reg is None:
                self.err(loc, f"unresolved name: register {ins.register!r}")
            else:
                self.assign(ins.dest, reg.width, Const(0), loc)
        elif isinstance(ins, RegWrite):
            reg = self.registers.get(ins.register)
            self.expr(ins.index, loc, params)
            vw = self.expr(ins.value, loc, params)
            if reg is None:
                self.err(loc, f"unresolved name: register {ins.register!r}")
            elif vw is not None and vw > reg.width:
                self.err(loc, f"width mismatch: {vw}-bit value written to {reg.width}-bit register")
        elif isinstance(ins, (AddHeader, RemoveHeader)):
            if ins.header not in self.headers:
                self.err(loc, f"unresolved name: header {ins.header!r}")
        elif isinstance(ins, Extern):
            if ins.name not in self.externs:
                self.err(loc, f"unresolved name: extern {ins.name!r}")
            for a in ins.args:
                self.expr(a, loc, params)
        elif isinstance(ins, Forward):
            self.expr(ins.port, loc, params)
        elif isinstance(ins, Multicast):
            self.expr(ins.group, loc, params)
        elif isinstance(ins, Drop):
            pass
        else:
            self.err(loc, f"not an instruction: {ins!r}")


def check_call(action: ActionSpec, params) -> Optional[str]:
    """Return a description of why ``params`` cannot bind to ``action``, or None."""
    if len(params) != len(action.params):
        return f"action {action.name!r} takes {len(action.params)} parameters, got {len(params)}"
    for value, (pname, width) in zip(params, action.params):
        if not isinstance(value, int) or value < 0:
            return f"parameter {pname!r} must be a non-negative integer"
        if value >= (1 << width):
            return f"width mismatch: {value} does not fit {width}-bit parameter {pname!r}"
    return None


def validate(program: PipelineProgram) -> None:
    """Raise :class:`ProgramError` listing every static problem in ``program``."""
    checker = _Checker(program)
    checker.run()
    if checker.errors:
        raise ProgramError(checker.errors)
