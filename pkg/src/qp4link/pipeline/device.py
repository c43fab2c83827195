"""Packet-at-a-time execution of a :class:`PipelineProgram` on a device.

Loading a program validates it and compiles it to a Python function (see
:mod:`.codegen`). Tables, registers and multicast groups live on the
:class:`Device` and are reset whenever a program is loaded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

from . import ir
from .codegen import RuntimeTrap, compile_program
from .ir import EGRESS_NONE


class TableError(Exception):
    pass


class GroupError(Exception):
    pass


class RegisterError(IndexError):
    pass


class NoProgram(RuntimeError):
    pass


@dataclass
class Packet:
    data: bytes
    ingress_port: int = 0
    arrival_time_ns: int = 0


class Disposition(NamedTuple):
    """Result of one execution: emitted ``(port, bytes)`` copies, or a drop."""

    outputs: Tuple[Tuple[int, bytes], ...] = ()
    kind: str = "drop"  # "drop" | "unicast" | "multicast"
    trap: Optional[str] = None

    @property
    def dropped(self) -> bool:
        return self.kind == "drop"


_DROPPED = Disposition()


@dataclass(frozen=True)
class TableEntry:
    table: str
    key: Tuple[int, ...]
    action: str
    params: Tuple[int, ...] = ()


def _mask(width: int) -> int:
    return (1 << width) - 1


class Device:
    """A programmable pipeline device with numbered ports.

    Externs are host callbacks registered with :meth:`register_extern` and are
    looked up at call time, so they may be registered before or after a
    program is loaded.
    """

    def __init__(self, name: str, processing_delay_ns: int = 100):
        self.name = name
        self.processing_delay_ns = int(processing_delay_ns)
        self.program: Optional[ir.PipelineProgram] = None
        self.externs: Dict[str, Callable[..., None]] = {}
        self.traps = 0
        self.last_trap: Optional[str] = None
        self.executed = 0

    # -- control plane --------------------------------------------------------

    def load_program(self, program: ir.PipelineProgram) -> None:
        ir.validate(program)
        self.program = program
        self._widths = program.field_widths()
        self._actions = {a.name: a for a in program.actions}
        self._tables = {t.name: t for t in program.tables}
        self._entries: Dict[str, Dict[Tuple[int, ...], ir.ActionCall]] = {
            t.name: {} for t in program.tables
        }
        self._defaults: Dict[str, ir.ActionCall] = {t.name: t.default_action for t in program.tables}
        self._registers: Dict[str, List[int]] = {r.name: [0] * r.size for r in program.registers}
        self._reg_specs = {r.name: r for r in program.registers}
        self._groups: Dict[int, Tuple[int, ...]] = {}
        self._run = compile_program(program, self._entries, self._defaults, self._registers,
                                    self._call_extern)

    def _require_program(self) -> None:
        if self.program is None:
            raise NoProgram(f"device {self.name} has no program loaded")

    def register_extern(self, name: str, fn: Callable[..., None]) -> None:
        self.externs[name] = fn

    def _check_call(self, table: str, action: str, params: Sequence[int]) -> ir.ActionCall:
        self._require_program()
        spec = self._tables.get(table)
        if spec is None:
            raise TableError(f"unknown table {table!r}")
        if action not in spec.actions:
            raise TableError(f"bad action: {action!r} is not permitted in table {table!r}")
        problem = ir.check_call(self._actions[action], tuple(params))
        if problem:
            raise TableError(problem)
        return ir.ActionCall(action, tuple(int(p) for p in params))

    def install_entry(self, entry: TableEntry) -> None:
        call = self._check_call(entry.table, entry.action, entry.params)
        spec = self._tables[entry.table]
        key = tuple(entry.key)
        if len(key) != len(spec.keys):
            raise TableError(f"key for {entry.table!r} needs {len(spec.keys)} fields, got {len(key)}")
        for value, kf in zip(key, spec.keys):
            if not 0 <= value < (1 << self._widths[kf]):
                raise TableError(f"width mismatch: key value {value} does not fit {kf}")
        entries = self._entries[entry.table]
        if key in entries:
            raise TableError(f"duplicate key {key} in table {entry.table!r}")
        entries[key] = call

    def modify_entry(self, entry: TableEntry) -> None:
        call = self._check_call(entry.table, entry.action, entry.params)
        key = tuple(entry.key)
        if key not in self._entries[entry.table]:
            raise TableError(f"no entry with key {key} in table {entry.table!r}")
        self._entries[entry.table][key] = call

    def delete_entry(self, table: str, key: Sequence[int]) -> None:
        self._require_program()
        try:
            del self._entries[table][tuple(key)]
        except KeyError:
            raise TableError(f"no entry with key {tuple(key)} in table {table!r}") from None

    def entries(self, table: str) -> Dict[Tuple[int, ...], ir.ActionCall]:
        self._require_program()
        return dict(self._entries[table])

    def set_default_action(self, table: str, action: str, params: Sequence[int] = ()) -> None:
        self._defaults[table] = self._check_call(table, action, params)

    def default_action(self, table: str) -> ir.ActionCall:
        self._require_program()
        return self._defaults[table]

    def create_mcast_group(self, grp: int, ports: Sequence[int]) -> None:
        self._require_program()
        if grp == 0:
            raise GroupError("multicast group 0 is reserved")
        if not 0 < grp <= 0xFFFF:
            raise GroupError(f"multicast group {grp} out of range")
        if grp in self._groups:
            raise GroupError(f"multicast group {grp} already exists")
        if not ports:
            raise GroupError(f"multicast group {grp} has no ports")
        self._groups[grp] = tuple(int(p) for p in ports)

    def mcast_groups(self) -> Dict[int, Tuple[int, ...]]:
        return dict(self._groups)

    def register_read(self, register: str, index: int) -> int:
        cells = self._cells(register, index)
        return cells[index]

    def register_write(self, register: str, index: int, value: int) -> None:
        cells = self._cells(register, index)
        cells[index] = value & _mask(self._reg_specs[register].width)

    def _cells(self, register: str, index: int) -> List[int]:
        self._require_program()
        if register not in self._registers:
            raise RegisterError(f"unknown register {register!r}")
        cells = self._registers[register]
        if not 0 <= index < len(cells):
            raise RegisterError(f"index {index} out of range for register {register!r} of size {len(cells)}")
        return cells

    # -- data plane -----------------------------------------------------------

    def execute(self, packet: Packet) -> Disposition:
        """Parse, run the apply block and deparse one packet.

        A trap aborts the packet: it is dropped and :attr:`traps` incremented.
        Register writes made before the trap are kept.
        """
        return self.process(packet.data, packet.ingress_port, packet.arrival_time_ns)

    def process(self, data: bytes, ingress_port: int, arrival_time_ns: int) -> Disposition:
        """:meth:`execute` without building a :class:`Packet`."""
        if self.program is None:
            raise NoProgram(f"device {self.name} has no program loaded")
        self.executed += 1
        try:
            result = self._run(data, ingress_port, arrival_time_ns)
            if result is None:
                return _DROPPED
            drop, egress, mcast, out = result
            if drop:
                return _DROPPED
            if mcast:
                ports = self._groups.get(mcast)
                if ports is None:
                    raise RuntimeTrap(f"multicast to unknown group {mcast}")
                return Disposition(tuple((p, out) for p in ports), "multicast")
            if egress != EGRESS_NONE:
                return Disposition(((egress, out),), "unicast")
            return _DROPPED
        except RuntimeTrap as exc:
            self.traps += 1
            self.last_trap = str(exc)
            return Disposition(trap=str(exc))

    def _call_extern(self, name: str, args: tuple) -> None:
        fn = self.externs.get(name)
        if fn is None:
            raise RuntimeTrap(f"extern {name!r} is not registered on {self.name}")
        try:
            fn(*args)
        except RuntimeTrap:
            raise
        except Exception as exc:
            raise RuntimeTrap(f"extern {name!r} failed: {exc}") from exc
