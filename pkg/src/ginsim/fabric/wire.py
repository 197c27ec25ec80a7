"""Socket frame codec.

One frame per message, little-endian::

    magic u32 = 0x474E4931 ("GIN1") | type u8 | src_rank u32 | ctx u16 | pad u16 | seq_or_watermark u64
    Put:     dst_window u32 | dst_offset u64 | len u64 | payload
    Signal:  signal_id u32 | op u8 (0 Inc, 1 Add) | pad3 | operand u64
    Ack:     (header only)
    Control: len u64 | blob
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

from ..core import SignalKind, SignalOp
from .model import Ack, ChannelKey, Put, Signal

MAGIC = 0x474E4931

T_PUT, T_SIGNAL, T_ACK, T_CONTROL = 1, 2, 3, 4

HEADER = struct.Struct("<IBIHHQ")
PUT_BODY = struct.Struct("<IQQ")
SIGNAL_BODY = struct.Struct("<IB3xQ")
CONTROL_BODY = struct.Struct("<Q")


class WireError(Exception):
    pass


@dataclass(frozen=True)
class Control:
    src: int
    blob: bytes
    ctx: int = 0
    seq: int = 0


Frame = Union[Put, Signal, Ack, Control]


def encode_put(msg: Put) -> bytes:
    k = msg.key
    return b"".join((
        HEADER.pack(MAGIC, T_PUT, k.src, k.ctx, 0, msg.seq),
        PUT_BODY.pack(msg.dst_window, msg.dst_offset, len(msg.payload)),
        msg.payload,
    ))


def encode_signal(msg: Signal) -> bytes:
    k = msg.key
    return (HEADER.pack(MAGIC, T_SIGNAL, k.src, k.ctx, 0, msg.watermark)
            + SIGNAL_BODY.pack(msg.signal_id, int(msg.op.kind), msg.op.operand))


def encode_ack(sender: int, ctx: int, seq: int) -> bytes:
    """Ack frame sent by ``sender`` (the data receiver) for ``seq``."""
    return HEADER.pack(MAGIC, T_ACK, sender, ctx, 0, seq)


def encode_control(src: int, blob: bytes, ctx: int = 0, seq: int = 0) -> bytes:
    return HEADER.pack(MAGIC, T_CONTROL, src, ctx, 0, seq) + CONTROL_BODY.pack(len(blob)) + blob


def encode(msg: Frame) -> bytes:
    if isinstance(msg, Put):
        return encode_put(msg)
    if isinstance(msg, Signal):
        return encode_signal(msg)
    if isinstance(msg, Control):
        return encode_control(msg.src, msg.blob, msg.ctx, msg.seq)
    raise TypeError("acks are encoded with encode_ack")


def decode(buf, self_rank: int) -> Optional[tuple]:
    """Parse one frame from the front of ``buf``.

    Returns ``(frame, consumed)`` or ``None`` if ``buf`` holds only a partial
    frame. Channel keys are rebuilt relative to the receiving rank: data
    frames are keyed ``(src, ctx, self_rank)``, acks ``(self_rank, ctx, src)``.
    """
    if len(buf) < HEADER.size:
        return None
    magic, ftype, src, ctx, pad, seq = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic:#x}")
    if pad:
        raise WireError("nonzero header padding")
    off = HEADER.size
    if ftype == T_PUT:
        if len(buf) < off + PUT_BODY.size:
            return None
        window, dst_off, n = PUT_BODY.unpack_from(buf, off)
        off += PUT_BODY.size
        if len(buf) < off + n:
            return None
        payload = bytes(buf[off:off + n])
        return Put(ChannelKey(src, ctx, self_rank), seq, window, dst_off, payload), off + n
    if ftype == T_SIGNAL:
        if len(buf) < off + SIGNAL_BODY.size:
            return None
        sid, op, operand = SIGNAL_BODY.unpack_from(buf, off)
        kind = SignalKind(op)
        sop = SignalOp.inc() if kind == SignalKind.INC else SignalOp.add(operand)
        return Signal(ChannelKey(src, ctx, self_rank), seq, sid, sop), off + SIGNAL_BODY.size
    if ftype == T_ACK:
        return Ack(ChannelKey(self_rank, ctx, src), seq), off
    if ftype == T_CONTROL:
        if len(buf) < off + CONTROL_BODY.size:
            return None
        (n,) = CONTROL_BODY.unpack_from(buf, off)
        off += CONTROL_BODY.size
        if len(buf) < off + n:
            return None
        return Control(src, bytes(buf[off:off + n]), ctx, seq), off + n
    raise WireError(f"unknown frame type {ftype}")


class FrameReader:
    """Incremental parser over a byte stream."""

    def __init__(self, self_rank: int):
        self.self_rank = self_rank
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf += data
        out = []
        pos = 0
        view = memoryview(self._buf)
        try:
            while True:
                r = decode(view[pos:], self.self_rank)
                if r is None:
                    break
                out.append(r[0])
                pos += r[1]
        finally:
            view.release()
        if pos:
            del self._buf[:pos]
        return out
