"""Compile a validated :class:`PipelineProgram` into one Python function.

The generated function takes ``(data, ingress_port, arrival_time_ns)`` and
returns ``None`` when the parser rejects the packet, otherwise the tuple
``(drop, egress_spec, mcast_grp, out_bytes)``. Header fields, metadata and
action parameters become local variables; tables, registers and defaults are
bound by reference so control-plane updates are seen by the next packet.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Mapping

from . import ir
from .ir import EGRESS_NONE, PARSER_ACCEPT, PARSER_REJECT


class RuntimeTrap(Exception):
    pass


def _mask(width: int) -> int:
    return (1 << width) - 1


class _Gen:
    def __init__(self, program: ir.PipelineProgram):
        self.p = program
        self.lines: List[str] = []
        self.hdr_index = {h.name: i for i, h in enumerate(program.headers)}
        self.field_var: Dict[str, str] = {}
        self.widths = program.field_widths()
        for hi, h in enumerate(program.headers):
            for fi, (f, _) in enumerate(h.fields):
                self.field_var[f"hdr.{h.name}.{f}"] = f"h{hi}_{fi}"
        meta_names = list(ir.STANDARD_META) + [n for n, _ in program.metadata]
        for mi, n in enumerate(meta_names):
            self.field_var[f"meta.{n}"] = f"m{mi}"
        self.meta_names = meta_names
        self.reg_index = {r.name: i for i, r in enumerate(program.registers)}
        self.table_index = {t.name: i for i, t in enumerate(program.tables)}
        self.action_index = {a.name: i for i, a in enumerate(program.actions)}
        self.params: Dict[str, str] = {}
        self.param_widths: Dict[str, int] = {}
        # headers proven valid at the current point, so reads skip the check
        self.known_valid: set = set()
        self.removed: set = set()

    def emit(self, depth: int, line: str) -> None:
        self.lines.append("    " * depth + line)

    def var(self, path: str) -> str:
        return self.field_var[path]

    def valid_var(self, header: str) -> str:
        return f"v{self.hdr_index[header]}"

    # -- expressions -----------------------------------------------------------

    def expr(self, e: ir.Expr) -> str:
        if isinstance(e, ir.Const):
            return str(e.value)
        if isinstance(e, ir.Ref):
            v = self.var(e.path)
            if e.path.startswith("hdr."):
                header = e.path.split(".")[1]
                if header in self.known_valid:
                    return v
                return f"({v} if {self.valid_var(header)} else _invalid({e.path!r}))"
            return v
        if isinstance(e, ir.Param):
            return self.params[e.name]
        if isinstance(e, ir.Valid):
            return f"(1 if {self.valid_var(e.header)} else 0)"
        if isinstance(e, ir.UnOp):
            a = self.expr(e.arg)
            if e.op == "not":
                return f"(0 if {a} else 1)"
            width = self._width(e.arg) or 64
            return f"(~{a} & {_mask(width)})"
        if isinstance(e, ir.BinOp):
            a, b = self.expr(e.left), self.expr(e.right)
            simple = {"add": "+", "sub": "-", "mul": "*", "and": "&", "or": "|", "xor": "^"}
            compare = {"eq": "==", "ne": "!=", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}
            if e.op in simple:
                return f"({a} {simple[e.op]} {b})"
            if e.op in compare:
                return f"(1 if {a} {compare[e.op]} {b} else 0)"
            if e.op == "land":
                return f"(1 if ({a} and {b}) else 0)"
            if e.op == "lor":
                return f"(1 if ({a} or {b}) else 0)"
            return f"_{e.op}({a}, {b})"
        raise TypeError(f"not an expression: {e!r}")

    def cond(self, e: ir.Expr) -> str:
        """Render ``e`` for truth testing only, without normalising to 0/1."""
        if isinstance(e, ir.Valid):
            return self.valid_var(e.header)
        if isinstance(e, ir.UnOp) and e.op == "not":
            return f"(not {self.cond(e.arg)})"
        if isinstance(e, ir.BinOp):
            if e.op in ("land", "lor"):
                op = "and" if e.op == "land" else "or"
                return f"({self.cond(e.left)} {op} {self.cond(e.right)})"
            compare = {"eq": "==", "ne": "!=", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}
            if e.op in compare:
                return f"({self.expr(e.left)} {compare[e.op]} {self.expr(e.right)})"
        return self.expr(e)

    @staticmethod
    def implied_valid(e: ir.Expr) -> set:
        if isinstance(e, ir.Valid):
            return {e.header}
        if isinstance(e, ir.BinOp) and e.op == "land":
            return _Gen.implied_valid(e.left) | _Gen.implied_valid(e.right)
        return set()

    def _width(self, e: ir.Expr):
        if isinstance(e, ir.Ref):
            return self.widths[e.path]
        if isinstance(e, ir.Const):
            return e.width
            ws = [w for w in (self._width(e.left), self._width(e.right)) if w]
            return max(ws) if ws else None
        return None

    # -- statements ------------------------------------------------------------

    def masked(self, value: ir.Expr, width: int) -> str:
        if isinstance(value, ir.Const):
            return str(value.value & _mask(width))
        if isinstance(value, ir.Ref):
            w = self.widths[value.path]
        elif isinstance(value, ir.Param):
            w = self.param_widths[value.name]
        else:
            w = None
        if w is not None and w <= width:
            return self.expr(value)
        return f"{self.expr(value)} & {_mask(width)}"

    def assign(self, d: int, dest: str, value: str) -> None:
        if dest.startswith("hdr."):
            header = dest.split(".")[1]
            if header not in self.known_valid:
                self.emit(d, f"if not {self.valid_var(header)}: _invalid_write({dest!r})")
        self.emit(d, f"{self.var(dest)} = {value}")

    def block(self, d: int, body) -> None:
        if not body:
            self.emit(d, "pass")
        for ins in body:
            self.instruction(d, ins)

    def index_check(self, d: int, register: str, index: ir.Expr) -> str:
        ri = self.reg_index[register]
        size = self.p.register(register).size
        if isinstance(index, (ir.Ref, ir.Param, ir.Const)):
            # never negative, so an overrun surfaces as IndexError (see function())
            if isinstance(index, ir.Const) and index.value >= size:
                self.emit(d, f"_trap('register {register} index {index.value} out of range')")
            return f"R{ri}[{self.expr(index)}]"
        self.emit(d, f"_i = {self.expr(index)}")
        self.emit(d, f"if not 0 <= _i < {size}: _trap('register {register} index %d out of range' % _i)")
        return f"R{ri}[_i]"

    def instruction(self, d: int, ins) -> None:
        if isinstance(ins, ir.SetField):
            self.assign(d, ins.dest, self.masked(ins.value, self.widths[ins.dest]))
        elif isinstance(ins, ir.If):
            self.emit(d, f"if {self.cond(ins.cond)}:")
            outer = set(self.known_valid)
            self.known_valid |= self.implied_valid(ins.cond)
            self.block(d + 1, ins.then)
            self.known_valid = set(outer)
            if ins.orelse:
                self.emit(d, "else:")
                self.block(d + 1, ins.orelse)
            # only a header valid on entry and never removed inside stays known
            self.known_valid = outer - self.removed
        elif isinstance(ins, ir.Apply):
            self.apply(d, ins.table)
        elif isinstance(ins, ir.RegRead):
            reg = self.index_check(d, ins.register, ins.index)
            rw = self.p.register(ins.register).width
            dw = self.widths[ins.dest]
            self.assign(d, ins.dest, reg if rw <= dw else f"{reg} & {_mask(dw)}")
        elif isinstance(ins, ir.RegWrite):
            reg = self.index_check(d, ins.register, ins.index)
            self.emit(d, f"{reg} = {self.masked(ins.value, self.p.register(ins.register).width)}")
        elif isinstance(ins, ir.AddHeader):
            hi = self.hdr_index[ins.header]
            self.emit(d, f"if not v{hi}:")
            self.emit(d + 1, f"v{hi} = True")
            for fi in range(len(self.p.headers[hi].fields)):
                self.emit(d + 1, f"h{hi}_{fi} = 0")
            self.known_valid.add(ins.header)
        elif isinstance(ins, ir.RemoveHeader):
            self.emit(d, f"{self.valid_var(ins.header)} = False")
            self.known_valid.discard(ins.header)
            self.removed.add(ins.header)
        elif isinstance(ins, ir.Extern):
            args = ", ".join(self.expr(a) for a in ins.args)
            self.emit(d, f"_extern({ins.name!r}, ({args}{',' if ins.args else ''}))")
        elif isinstance(ins, ir.Forward):
            self.emit(d, f"m3 = 0; m4 = 0; m2 = {self.masked(ins.port, 16)}")
        elif isinstance(ins, ir.Multicast):
            self.emit(d, f"m2 = {EGRESS_NONE}; m4 = 0; m3 = {self.masked(ins.group, 16)}")
        elif isinstance(ins, ir.Drop):
            self.emit(d, f"m2 = {EGRESS_NONE}; m3 = 0; m4 = 1")
        else:
            raise TypeError(f"not an instruction: {ins!r}")

    def apply(self, d: int, table: str) -> None:
        spec = self.p.table(table)
        ti = self.table_index[table]
        key = ", ".join(self.expr(ir.Ref(k)) for k in spec.keys)
        self.emit(d, f"_c = E{ti}.get(({key},))")
        self.emit(d, f"if _c is None: _c = D[{table!r}]")
        self.emit(d, "_a = _c.action")
        for n, name in enumerate(spec.actions):
            action = self.p.action(name)
            ai = self.action_index[name]
            self.emit(d, f"{'if' if n == 0 else 'elif'} _a == {name!r}:")
            saved = self.params, self.param_widths, set(self.known_valid)
            self.params = {p: f"a{ai}_{pi}" for pi, (p, _) in enumerate(action.params)}
            self.param_widths = dict(action.params)
            if action.params:
                names = ", ".join(self.params[p] for p, _ in action.params)
                self.emit(d + 1, f"{names}, = _c.params")
            self.block(d + 1, action.body)
            self.params, self.param_widths, self.known_valid = saved
        self.known_valid -= self.removed

    # -- parser / deparser -----------------------------------------------------

    def parser_state(self, d: int, name: str, off: int = 0) -> None:
        # the parser is acyclic, so every header has a fixed offset on each path
        if name == PARSER_ACCEPT:
            self.emit(d, f"off = {off}")
            return
        if name == PARSER_REJECT:
            self.emit(d, "return None")
            return
        state = next(s for s in self.p.parser if s.name == name)
        for h in state.extract:
            hi = self.hdr_index[h]
            spec = self.p.headers[hi]
            n = spec.bit_length // 8
            end = off + n
            self.emit(d, f"if _len < {end}: _trap('malformed packet: %d bytes, header {h} needs {end}' % _len)")
            self.emit(d, f"_raw = _from_bytes(data[{off}:{end}], 'big')")
            shift = spec.bit_length
            for fi, (_, w) in enumerate(spec.fields):
                shift -= w
                self.emit(d, f"h{hi}_{fi} = (_raw >> {shift}) & {_mask(w)}" if shift else
                          f"h{hi}_{fi} = _raw & {_mask(w)}")
            self.emit(d, f"v{hi} = True")
            off = end
        if state.select is None or not state.cases:
            self.parser_state(d, state.default, off)
            return
        saved = set(self.known_valid)
        self.known_valid |= set(state.extract)
        self.emit(d, f"_s = {self.expr(ir.Ref(state.select))}")
        self.known_valid = saved
        for n, (value, nxt) in enumerate(state.cases):
            self.emit(d, f"{'if' if n == 0 else 'elif'} _s == {value}:")
            self.parser_state(d + 1, nxt, off)
        self.emit(d, "else:")
        self.parser_state(d + 1, state.default, off)

    def deparse(self, d: int) -> None:
        self.emit(d, "_parts = []")
        for hi, h in enumerate(self.p.headers):
            n = h.bit_length // 8
            shift = h.bit_length
            terms = []
            for fi, (_, w) in enumerate(h.fields):
                shift -= w
                terms.append(f"(h{hi}_{fi} << {shift})" if shift else f"h{hi}_{fi}")
            self.emit(d, f"if v{hi}: _parts.append(({' | '.join(terms)}).to_bytes({n}, 'big'))")
        self.emit(d, "return (m4, m2, m3, b''.join(_parts) + data[off:])")

    def function(self) -> str:
        self.emit(0, "def _run(data, ingress_port, arrival_time_ns):")
        self.emit(1, "try:")
        self.emit(1, "_len = len(data)")
        # field locals are only bound once their header is valid, and every
        # read of them is guarded by validity, so only the flags need initialising
        self.emit(1, " = ".join(f"v{hi}" for hi in range(len(self.p.headers))) + " = False")
        self.emit(1, f"m0 = ingress_port; m1 = arrival_time_ns; m2 = {EGRESS_NONE}; m3 = 0; m4 = 0")
        for mi in range(len(ir.STANDARD_META), len(self.meta_names)):
            self.emit(1, f"m{mi} = 0")
        self.parser_state(1, "start")
        self.block(1, self.p.apply)
        self.emit(1, "if m4: return (1, m2, m3, b'')")
        self.deparse(1)
        # the body runs inside one try so register overruns need no per-access check
        head, body = self.lines[:2], self.lines[2:]
        lines = head + ["    " + ln for ln in body]
        lines += ["    except IndexError:", "        _trap('register index out of range')"]
        return "\n".join(lines) + "\n"


def generate_source(program: ir.PipelineProgram) -> str:
    return _Gen(program).function()


def compile_program(
    program: ir.PipelineProgram,
    entries: Mapping[str, dict],
    defaults: dict,
    registers: Mapping[str, list],
    call_extern: Callable[[str, tuple], None],
) -> Callable:
    """Return the packet function for ``program`` bound to the given device state."""
    source = generate_source(program)

    def _trap(reason):
        raise RuntimeTrap(reason)

    def _invalid(path):
        raise RuntimeTrap(f"read of field {path} in invalid header")

    def _invalid_write(path):
        raise RuntimeTrap(f"write to field {path} in invalid header")

    def _div(a, b):
        if b == 0:
            raise RuntimeTrap("division by zero")
        return a // b

    def _mod(a, b):
        if b == 0:
            raise RuntimeTrap("division by zero")
        return a % b

    def _shl(a, b):
        if b < 0:
            raise RuntimeTrap("negative shift")
        return a << b

    def _shr(a, b):
        if b < 0:
            raise RuntimeTrap("negative shift")
        return a >> b

    env = {
        "_trap": _trap,
        "_invalid": _invalid,
        "_invalid_write": _invalid_write,
        "_div": _div,
        "_mod": _mod,
        "_shl": _shl,
        "_shr": _shr,
        "_extern": call_extern,
        "_from_bytes": int.from_bytes,
        "D": defaults,
    }
    for i, t in enumerate(program.tables):
        env[f"E{i}"] = entries[t.name]
    for i, r in enumerate(program.registers):
        env[f"R{i}"] = registers[r.name]
    code = compile(source, f"<pipeline {program.name}>", "exec")
    exec(code, env)
    return env["_run"]
