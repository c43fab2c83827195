"""Minimal match-action pipeline: program IR, JSON documents and the interpreter."""

from .device import (
    Device,
    Disposition,
    GroupError,
    NoProgram,
    Packet,
    RegisterError,
    RuntimeTrap,
    TableEntry,
    TableError,
)
from .document import ParseError, parse_program_document, serialize_program
from .ir import EGRESS_NONE, PipelineProgram, ProgramError, validate

__all__ = [
    "Device",
    "Disposition",
    "EGRESS_NONE",
    "GroupError",
    "NoProgram",
    "Packet",
    "ParseError",
    "PipelineProgram",
    "ProgramError",
    "RegisterError",
    "RuntimeTrap",
    "TableEntry",
    "TableError",
    "parse_program_document",
    "serialize_program",
    "validate",
]
