"""JSON program documents.

A document is one JSON object::

    {
      "name": "node",
      "headers":   [{"name": "common", "fields": [["msg_type", 8]]}, ...],
      "metadata":  [["other_port", 16], ...],
      "parser":    [{"name": "start", "extract": ["common"],
                     "select": "hdr.common.msg_type",
                     "cases": [[1, "parse_timer"]], "default": "accept"}, ...],
      "actions":   [{"name": "gen", "params": [["qport", 16]], "body": [...]}, ...],
      "tables":    [{"name": "gen_tbl", "keys": ["hdr.timer.cycle"],
                     "actions": ["gen", "no_op"],
                     "default_action": {"action": "no_op", "params": []}}, ...],
      "registers": [{"name": "pair_seq", "width": 32, "size": 16}, ...],
      "externs":   ["emit_photon"],
      "apply":     [...]
    }

Instructions are objects tagged by ``"instr"``:

    apply {table} | if {cond, then, else} | set_field {dest, value}
    reg_read {register, index, dest} | reg_write {register, index, value}
    add_header {header} | remove_header {header} | extern {name, args}
    forward {port} | multicast {group} | drop {}

Expressions are ``{"const": n}`` (optionally with ``"width"``),
``{"ref": "hdr.h.f"}``, ``{"param": "p"}``, ``{"valid": "h"}`` or
``{"op": name, "args": [...]}`` with one argument for ``not``/``inv`` and two
for every other operator.
"""

from __future__ import annotations

import json
from typing import Any, List, Optional

from . import ir


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None,
                 path: str = ""):
        self.line = line
        self.column = column
        self.path = path
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if path:
            where.append(path)
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)


def _need(obj: Any, key: str, path: str, kind=None):
    if not isinstance(obj, dict):
        raise ParseError("expected an object", path=path)
    if key not in obj:
        raise ParseError(f"missing key {key!r}", path=path)
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise ParseError(f"key {key!r} has the wrong type", path=f"{path}.{key}")
    return value


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError("expected an integer", path=path)
    return value


def _pairs(items: Any, path: str):
    if not isinstance(items, list):
        raise ParseError("expected a list", path=path)
    out = []
    for i, item in enumerate(items):
        if not (isinstance(item, list) and len(item) == 2 and isinstance(item[0], str)):
            raise ParseError("expected a [name, width] pair", path=f"{path}[{i}]")
        out.append((item[0], _int(item[1], f"{path}[{i}][1]")))
    return tuple(out)


def expr_from_json(obj: Any, path: str) -> ir.Expr:
    if not isinstance(obj, dict) or len(obj) == 0:
        raise ParseError("expected an expression object", path=path)
    if "const" in obj:
        width = obj.get("width")
        return ir.Const(_int(obj["const"], path), None if width is None else _int(width, path))
    if "ref" in obj:
        return ir.Ref(_need(obj, "ref", path, str))
    if "param" in obj:
        return ir.Param(_need(obj, "param", path, str))
    if "valid" in obj:
        return ir.Valid(_need(obj, "valid", path, str))
    if "op" in obj:
        op = _need(obj, "op", path, str)
        args = _need(obj, "args", path, list)
        if op in ir.UNARY_OPS:
            if len(args) != 1:
                raise ParseError(f"operator {op!r} takes one argument", path=path)
            return ir.UnOp(op, expr_from_json(args[0], f"{path}.args[0]"))
        if op in ir.BINARY_OPS:
            if len(args) != 2:
                raise ParseError(f"operator {op!r} takes two arguments", path=path)
            return ir.BinOp(op, expr_from_json(args[0], f"{path}.args[0]"),
                            expr_from_json(args[1], f"{path}.args[1]"))
        raise ParseError(f"unknown operator {op!r}", path=path)
    raise ParseError(f"unknown expression form {sorted(obj)}", path=path)


def expr_to_json(e: ir.Expr) -> Any:
    if isinstance(e, ir.Const):
        return {"const": e.value} if e.width is None else {"const": e.value, "width": e.width}
    if isinstance(e, ir.Ref):
        return {"ref": e.path}
    if isinstance(e, ir.Param):
        return {"param": e.name}
    if isinstance(e, ir.Valid):
        return {"valid": e.header}
    if isinstance(e, ir.UnOp):
        return {"op": e.op, "args": [expr_to_json(e.arg)]}
    if isinstance(e, ir.BinOp):
        return {"op": e.op, "args": [expr_to_json(e.left), expr_to_json(e.right)]}
    raise TypeError(f"not an expression: {e!r}")


def block_from_json(items: Any, path: str):
    if not isinstance(items, list):
        raise ParseError("expected a list of instructions", path=path)
    return tuple(instr_from_json(obj, f"{path}[{i}]") for i, obj in enumerate(items))


def instr_from_json(obj: Any, path: str) -> ir.Instruction:
    tag = _need(obj, "instr", path, str)
    if tag == "apply":
        return ir.Apply(_need(obj, "table", path, str))
    if tag == "if":
        return ir.If(expr_from_json(_need(obj, "cond", path), f"{path}.cond"),
                     block_from_json(obj.get("then", []), f"{path}.then"),
                     block_from_json(obj.get("else", []), f"{path}.else"))
    if tag == "set_field":
        return ir.SetField(_need(obj, "dest", path, str),
                           expr_from_json(_need(obj, "value", path), f"{path}.value"))
    if tag == "reg_read":
        return ir.RegRead(_need(obj, "register", path, str),
                          expr_from_json(_need(obj, "index", path), f"{path}.index"),
                          _need(obj, "dest", path, str))
    if tag == "reg_write":
        return ir.RegWrite(_need(obj, "register", path, str),
                           expr_from_json(_need(obj, "index", path), f"{path}.index"),
                           expr_from_json(_need(obj, "value", path), f"{path}.value"))
    if tag == "add_header":
        return ir.AddHeader(_need(obj, "header", path, str))
    if tag == "remove_header":
        return ir.RemoveHeader(_need(obj, "header", path, str))
    if tag == "extern":
        args = _need(obj, "args", path, list)
        return ir.Extern(_need(obj, "name", path, str),
                         tuple(expr_from_json(a, f"{path}.args[{i}]") for i, a in enumerate(args)))
    if tag == "forward":
        return ir.Forward(expr_from_json(_need(obj, "port", path), f"{path}.port"))
    if tag == "multicast":
        return ir.Multicast(expr_from_json(_need(obj, "group", path), f"{path}.group"))
    if tag == "drop":
        return ir.Drop()
    raise ParseError(f"unknown instruction {tag!r}", path=path)


def instr_to_json(ins: ir.Instruction) -> dict:
    if isinstance(ins, ir.Apply):
        return {"instr": "apply", "table": ins.table}
    if isinstance(ins, ir.If):
        return {"instr": "if", "cond": expr_to_json(ins.cond),
                "then": [instr_to_json(i) for i in ins.then],
                "else": [instr_to_json(i) for i in ins.orelse]}
    if isinstance(ins, ir.SetField):
        return {"instr": "set_field", "dest": ins.dest, "value": expr_to_json(ins.value)}
    if isinstance(ins, ir.RegRead):
        return {"instr": "reg_read", "register": ins.register,
                "index": expr_to_json(ins.index), "dest": ins.dest}
    if isinstance(ins, ir.RegWrite):
        return {"instr": "reg_write", "register": ins.register,
                "index": expr_to_json(ins.index), "value": expr_to_json(ins.value)}
    if isinstance(ins, ir.AddHeader):
        return {"instr": "add_header", "header": ins.header}
    if isinstance(ins, ir.RemoveHeader):
        return {"instr": "remove_header", "header": ins.header}
    if isinstance(ins, ir.Extern):
        return {"instr": "extern", "name": ins.name, "args": [expr_to_json(a) for a in ins.args]}
    if isinstance(ins, ir.Forward):
        return {"instr": "forward", "port": expr_to_json(ins.port)}
    if isinstance(ins, ir.Multicast):
        return {"instr": "multicast", "group": expr_to_json(ins.group)}
    if isinstance(ins, ir.Drop):
        return {"instr": "drop"}
    raise TypeError(f"not an instruction: {ins!r}")


def program_from_json(doc: Any) -> ir.PipelineProgram:
    if not isinstance(doc, dict):
        raise ParseError("program document must be a JSON object")
    headers = []
    for i, h in enumerate(_need(doc, "headers", "$", list)):
        p = f"headers[{i}]"
        headers.append(ir.HeaderSpec(_need(h, "name", p, str), _pairs(_need(h, "fields", p), f"{p}.fields")))
    parser = []
    for i, s in enumerate(_need(doc, "parser", "$", list)):
        p = f"parser[{i}]"
        extract = _need(s, "extract", p, list) if "extract" in s else []
        if not all(isinstance(x, str) for x in extract):
            raise ParseError("extract must list header names", path=f"{p}.extract")
        cases = []
        for j, case in enumerate(s.get("cases", [])):
            if not (isinstance(case, list) and len(case) == 2 and isinstance(case[1], str)):
                raise ParseError("expected a [value, state] pair", path=f"{p}.cases[{j}]")
            cases.append((_int(case[0], f"{p}.cases[{j}][0]"), case[1]))
        select = s.get("select")
        if select is not None and not isinstance(select, str):
            raise ParseError("select must be a field path", path=f"{p}.select")
        parser.append(ir.ParserState(_need(s, "name", p, str), tuple(extract), select, tuple(cases),
                                     s.get("default", ir.PARSER_ACCEPT)))
    actions = []
    for i, a in enumerate(_need(doc, "actions", "$", list)):
        p = f"actions[{i}]"
        actions.append(ir.ActionSpec(_need(a, "name", p, str), _pairs(a.get("params", []), f"{p}.params"),
                                     block_from_json(a.get("body", []), f"{p}.body")))
    tables = []
    for i, t in enumerate(_need(doc, "tables", "$", list)):
        p = f"tables[{i}]"
        default = _need(t, "default_action", p, dict)
        params = default.get("params", [])
        if not isinstance(params, list):
            raise ParseError("params must be a list", path=f"{p}.default_action")
        call = ir.ActionCall(_need(default, "action", f"{p}.default_action", str),
                             tuple(_int(v, f"{p}.default_action.params") for v in params))
        keys = _need(t, "keys", p, list)
        acts = _need(t, "actions", p, list)
        if not all(isinstance(x, str) for x in keys + acts):
            raise ParseError("keys and actions must be names", path=p)
        tables.append(ir.TableSpec(_need(t, "name", p, str), tuple(keys), tuple(acts), call))
    registers = []
    for i, r in enumerate(_need(doc, "registers", "$", list)):
        p = f"registers[{i}]"
        registers.append(ir.RegisterSpec(_need(r, "name", p, str), _int(_need(r, "width", p), p),
                                         _int(_need(r, "size", p), p)))
    externs = _need(doc, "externs", "$", list)
    if not all(isinstance(x, str) for x in externs):
        raise ParseError("externs must list names", path="externs")
    return ir.PipelineProgram(
        name=doc.get("name", "program"),
        headers=tuple(headers),
        metadata=_pairs(doc.get("metadata", []), "metadata"),
        parser=tuple(parser),
        actions=tuple(actions),
        tables=tuple(tables),
        registers=tuple(registers),
        externs=tuple(externs),
        apply=block_from_json(_need(doc, "apply", "$", list), "apply"),
    )


def program_to_json(program: ir.PipelineProgram) -> dict:
    return {
        "name": program.name,
        "headers": [{"name": h.name, "fields": [list(f) for f in h.fields]} for h in program.headers],
        "metadata": [list(m) for m in program.metadata],
        "parser": [
            {"name": s.name, "extract": list(s.extract), "select": s.select,
             "cases": [list(c) for c in s.cases], "default": s.default}
            for s in program.parser
        ],
        "actions": [
            {"name": a.name, "params": [list(p) for p in a.params],
             "body": [instr_to_json(i) for i in a.body]}
            for a in program.actions
        ],
        "tables": [
            {"name": t.name, "keys": list(t.keys), "actions": list(t.actions),
             "default_action": {"action": t.default_action.action,
                                "params": list(t.default_action.params)}}
            for t in program.tables
        ],
        "registers": [{"name": r.name, "width": r.width, "size": r.size} for r in program.registers],
        "externs": list(program.externs),
        "apply": [instr_to_json(i) for i in program.apply],
    }


def parse_program_document(text: str) -> ir.PipelineProgram:
    """Parse a JSON program document. Raises :class:`ParseError`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return program_from_json(doc)


def serialize_program(program: ir.PipelineProgram) -> str:
    return json.dumps(program_to_json(program), indent=1) + "\n"
