"""Bit-exact 64-byte operation descriptor.

Layout (little-endian)::

    off  0  u8   opcode          0x01 PUT, 0x02 PUT_INLINE, 0x03 SIGNAL_ONLY
    off  1  u8   flags           bit0 HAS_SIGNAL, bit1 SIGNAL_IS_ADD, bit2 HAS_COUNTER
    off  2  u16  team
    off  4  u32  peer            team-relative
    off  8  u32  dst_window
    off 12  u32  src_window      0xFFFFFFFF = inline / no source
    off 16  u64  dst_offset
    off 24  u64  src_offset_or_value
    off 32  u64  bytes
    off 40  u32  signal_id
    off 44  u32  counter_id
    off 48  u64  signal_operand
    off 56  u64  reserved        must be 0

Field order and endianness are this project's choice; only the 64-byte
total is fixed by the protocol being modelled.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional

from .core import CompletionAction, SignalKind, SignalOp
from .errors import InvalidDescriptor, MalformedDescriptor

DESCRIPTOR_SIZE = 64
INLINE = 0xFFFF_FFFF
NO_WINDOW = 0xFFFF_FFFF
MAX_INLINE_BYTES = 8

_LAYOUT = struct.Struct("<BBHIIIQQQIIQQ")
assert _LAYOUT.size == DESCRIPTOR_SIZE


class Opcode(enum.IntEnum):
    PUT = 0x01
    PUT_INLINE = 0x02
    SIGNAL_ONLY = 0x03


HAS_SIGNAL = 0x1
SIGNAL_IS_ADD = 0x2
HAS_COUNTER = 0x4
_KNOWN_FLAGS = HAS_SIGNAL | SIGNAL_IS_ADD | HAS_COUNTER

_U16 = (1 << 16) - 1
_U32 = (1 << 32) - 1
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class Descriptor:
    opcode: Opcode
    flags: int
    team: int
    peer: int
    dst_window: int
    src_window: int
    dst_offset: int
    src_offset_or_value: int
    nbytes: int
    signal_id: int = 0
    counter_id: int = 0
    signal_operand: int = 0

    @classmethod
    def build(
        cls,
        opcode: Opcode,
        *,
        team: int,
        peer: int,
        dst_window: int = NO_WINDOW,
        dst_offset: int = 0,
        src_window: int = INLINE,
        src_offset_or_value: int = 0,
        nbytes: int = 0,
        action: Optional[CompletionAction] = None,
    ) -> "Descriptor":
        """Assemble a descriptor, deriving flags from ``action``."""
        flags = 0
        signal_id = counter_id = operand = 0
        if action is not None and action.signal is not None:
            signal_id, op = action.signal
            flags |= HAS_SIGNAL
            if op.kind == SignalKind.ADD:
                flags |= SIGNAL_IS_ADD
            operand = op.operand
        if action is not None and action.counter is not None:
            flags |= HAS_COUNTER
            counter_id = action.counter
        return cls(
            Opcode(opcode), flags, team, peer, dst_window, src_window, dst_offset,
            src_offset_or_value, nbytes, signal_id, counter_id, operand,
        )

    @property
    def signal(self) -> Optional[SignalOp]:
        if not self.flags & HAS_SIGNAL:
            return None
        if self.flags & SIGNAL_IS_ADD:
            return SignalOp.add(self.signal_operand)
        return SignalOp.inc()

    @property
    def action(self) -> CompletionAction:
        sig = self.signal
        return CompletionAction(
            signal=(self.signal_id, sig) if sig is not None else None,
            counter=self.counter_id if self.flags & HAS_COUNTER else None,
        )

    def inline_bytes(self) -> bytes:
        return self.src_offset_or_value.to_bytes(8, "little")[: self.nbytes]

    def problems(self) -> list:
        """Invariant violations, empty when the descriptor is valid."""
        out = []
        try:
            Opcode(self.opcode)
        except ValueError:
            return [f"unknown opcode {self.opcode:#x}"]
        if self.flags & ~_KNOWN_FLAGS:
            out.append(f"unknown flag bits {self.flags:#x}")
        for name, limit in (
            ("team", _U16), ("peer", _U32), ("dst_window", _U32), ("src_window", _U32),
            ("dst_offset", _U64), ("src_offset_or_value", _U64), ("nbytes", _U64),
            ("signal_id", _U32), ("counter_id", _U32), ("signal_operand", _U64),
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or not 0 <= v <= limit:
                out.append(f"{name}={v!r} out of range")
        if out:
            return out
        if self.opcode == Opcode.PUT:
            if self.src_window == INLINE:
                out.append("PUT needs a source window")
        elif self.opcode == Opcode.PUT_INLINE:
            if self.src_window != INLINE:
                out.append("PUT_INLINE must use the inline source sentinel")
            if self.nbytes > MAX_INLINE_BYTES:
                out.append(f"inline put of {self.nbytes} bytes exceeds {MAX_INLINE_BYTES}")
            elif self.src_offset_or_value >> (8 * self.nbytes):
                out.append("inline value wider than its byte count")
        else:
            if self.nbytes != 0:
                out.append("SIGNAL_ONLY carries no bytes")
            if not self.flags & HAS_SIGNAL:
                out.append("SIGNAL_ONLY needs a signal")
            if self.src_window != INLINE or self.src_offset_or_value != 0:
                out.append("SIGNAL_ONLY has no source")
        if self.flags & HAS_SIGNAL:
            if not self.flags & SIGNAL_IS_ADD and self.signal_operand != 1:
                out.append("SignalInc operand must be 1")
        else:
            if self.flags & SIGNAL_IS_ADD or self.signal_id or self.signal_operand:
                out.append("signal fields set without HAS_SIGNAL")
        if not self.flags & HAS_COUNTER and self.counter_id:
            out.append("counter_id set without HAS_COUNTER")
        return out


def encode_descriptor(d: Descriptor) -> bytes:
    problems = d.problems()
    if problems:
        raise InvalidDescriptor("; ".join(problems))
    return _LAYOUT.pack(
        d.opcode, d.flags, d.team, d.peer, d.dst_window, d.src_window, d.dst_offset,
        d.src_offset_or_value, d.nbytes, d.signal_id, d.counter_id, d.signal_operand, 0,
    )


def decode_descriptor(buf) -> Descriptor:
    if len(buf) != DESCRIPTOR_SIZE:
        raise MalformedDescriptor(f"descriptor must be {DESCRIPTOR_SIZE} bytes, got {len(buf)}")
    (opcode, flags, team, peer, dst_w, src_w, dst_off, src_ov, nbytes,
     sig, ctr, operand, reserved) = _LAYOUT.unpack(buf)
    if reserved:
        raise MalformedDescriptor(f"reserved word is {reserved:#x}")
    try:
        opcode = Opcode(opcode)
    except ValueError:
        raise MalformedDescriptor(f"unknown opcode {opcode:#x}") from None
    d = Descriptor(opcode, flags, team, peer, dst_w, src_w, dst_off, src_ov, nbytes, sig, ctr, operand)
    problems = d.problems()
    if problems:
        raise MalformedDescriptor("; ".join(problems))
    return d
