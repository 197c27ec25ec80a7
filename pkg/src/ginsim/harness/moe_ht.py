"""High-throughput style channels with circular-buffer flow control.

Each logical channel links one sender to one receiver through a ring of
``slots`` message slots in the receiver's window. Two signals govern it:

* tail, on the receiver: the sender adds 1 with every data put, so by
  the watermark rule a tail of ``n`` means messages ``< n`` have landed;
* head, on the sender: the receiver adds 1 after consuming a message.

The sender reuses slot ``m % slots`` only once ``m - head < slots``. Every
message starts with a generation stamp, so a slot overwritten before it
was consumed shows up as a stamp from the future.

Channels are spread over communicators and contexts with
:func:`pool_select`; each rank steps all of its channels without
blocking and waits only when none of them can move.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from typing import List

import numpy as np

from ..core import CounterInc, SignalAdd, SignalOp
from ..errors import FlowControlViolation, UsageError, VerificationFailure
from ..runtime import GinConfig, comm_init, pool_select, window_register
from .moe_ll import MoeConfig

HEADER = struct.Struct("<IIII")  # stamp (message index + 1), src rank, channel, slot


def peers(rank: int, size: int, channel: int) -> tuple:
    """``(send_to, receive_from)`` for ``channel`` on ``rank``."""
    hop = 1 + channel % (size - 1)
    return (rank + hop) % size, (rank - hop) % size


def payload(src: int, channel: int, m: int, hidden: int) -> np.ndarray:
    i = np.arange(hidden, dtype=np.uint32)
    return ((i * 17 + src * 7919 + channel * 131 + m * 1009 + 1) & 0xFFFF).astype(np.uint16)


class _Channel:
    __slots__ = ("id", "comm", "gin", "cells", "ctx", "tail", "head", "dst", "src", "sent", "consumed",
                 "stage", "ring", "w_stage", "w_ring")

    def __init__(self, cid, comm, ctx, dst, src):
        self.id, self.comm, self.ctx = cid, comm, ctx
        self.gin = comm.gin(ctx)
        self.cells = comm.signals.cells
        self.dst, self.src = dst, src
        # signal ids within the channel's communicator
        self.tail, self.head = 2 * ctx, 2 * ctx + 1
        self.sent = 0
        self.consumed = 0


def moe_ht_rank(bootstrap, cfg: MoeConfig, *, unsafe: bool = False, consume_ns: int = 0,
                close: bool = True) -> dict:
    """Run every channel of this rank to completion.

    ``consume_ns`` makes the receiver spend that long (on the rank's clock)
    before reading each slot. With ``unsafe`` the sender ignores its head
    signal; paired with a slow consumer this must end in a
    :class:`FlowControlViolation` on some receiver.
    """
    if cfg.mode != "ht":
        raise UsageError("moe_ht_rank runs the HT mode only")
    size, me = bootstrap.size, bootstrap.rank
    if size < 2:
        raise UsageError("the HT demo needs at least 2 ranks")
    config = GinConfig(backend=cfg.backend)
    nctx = config.n_contexts
    n_comms = pool_select(cfg.channels - 1, nctx)[0] + 1
    comms = [comm_init(bootstrap, config) for _ in range(n_comms)]
    B, M, D = cfg.slots, cfg.messages, HEADER.size + 2 * cfg.hidden
    clock = comms[0].clock

    # one staging ring and one receive ring per context of each communicator
    stages, rings = [], []
    for comm in comms:
        stage = np.zeros((nctx, B, D), dtype=np.uint8)
        ring = np.zeros((nctx, B, D), dtype=np.uint8)
        stages.append((stage, window_register(comm, stage)))
        rings.append((ring, window_register(comm, ring)))

    chans: List[_Channel] = []
    for c in range(cfg.channels):
        ci, ctx = pool_select(c, nctx)
        ch = _Channel(c, comms[ci], ctx, *peers(me, size, c))
        ch.stage, ch.w_stage = stages[ci][0][ctx], stages[ci][1]
        ch.ring, ch.w_ring = rings[ci][0][ctx], rings[ci][1]
        chans.append(ch)
    checks = 0

    def send(ch: _Channel, m: int) -> None:
        s = m % B
        HEADER.pack_into(ch.stage[s], 0, m + 1, me, ch.id, s)
        ch.stage[s, HEADER.size:] = payload(me, ch.id, m, cfg.hidden).view(np.uint8)
        off = (ch.ctx * B + s) * D
        ch.gin.put(ch.comm.world, ch.dst, ch.w_ring, off, ch.w_stage, off, D,
                   SignalAdd(ch.tail, 1) | CounterInc(ch.ctx))
        ch.sent = m + 1

    def consume(ch: _Channel, r: int) -> None:
        if consume_ns:
            clock.sleep(consume_ns)
        s = r % B
        stamp = HEADER.unpack_from(ch.ring[s])
        body = ch.ring[s, HEADER.size:].copy()
        again = HEADER.unpack_from(ch.ring[s])
        if stamp[0] != r + 1 or again != stamp:
            what = "overwritten before it was consumed" if max(stamp[0], again[0]) > r + 1 else "not yet visible"
            raise FlowControlViolation(
                f"rank {me} channel {ch.id}: slot {s} holds message {stamp[0] - 1}, expected {r}; {what}")
        if stamp[1:] != (ch.src, ch.id, s) or not np.array_equal(body.view(np.uint16),
                                                                 payload(ch.src, ch.id, r, cfg.hidden)):
            raise VerificationFailure(f"rank {me} channel {ch.id}: message {r} from {ch.src} is corrupt")
        ch.gin.signal(ch.comm.world, ch.src, ch.head, SignalOp.add(1))
        ch.consumed = r + 1

    def sweep() -> bool:
        """One non-blocking pass over every channel; checks head <= tail on both ends."""
        nonlocal checks
        moved = False
        for ch in chans:
            cells = ch.cells
            head, tail = cells[ch.head], cells[ch.tail]
            checks += 1
            if head > ch.sent:
                raise FlowControlViolation(f"rank {me} channel {ch.id}: head {head} passed tail {ch.sent}")
            if ch.consumed > tail:
                raise FlowControlViolation(f"rank {me} channel {ch.id}: head {ch.consumed} passed tail {tail}")
            if ch.sent < M and (unsafe or ch.sent - head < B):
                send(ch, ch.sent)
                moved = True
            if ch.consumed < tail:
                consume(ch, ch.consumed)
                moved = True
        return moved

    tables = [comm.signals for comm in comms]
    seen = [-1] * len(tables)
    last = [False]

    def can_move() -> bool:
        # re-scan the channels only when some signal table has changed; this
        # rank's own state is frozen while it waits, so the cached answer holds
        now = [t.version for t in tables]
        if now != seen:
            seen[:] = now
            last[0] = any(
                (ch.sent < M and (unsafe or ch.sent - ch.cells[ch.head] < B)) or ch.consumed < ch.cells[ch.tail]
                for ch in chans)
        return last[0]

    sweeps = 0
    while any(ch.sent < M or ch.consumed < M for ch in chans):
        sweeps += 1
        if not sweep():
            seen[:] = [-1] * len(tables)
            clock.wait_until(can_move, config.timeout_s, what=f"HT channels on rank {me}")

    for comm in comms:
        comm.flush_all()
        comm.poll()
    for ch in chans:
        # every data put carried CounterInc on its own (communicator, context)
        got = ch.comm.counters[ch.ctx]
        if got != ch.sent:
            raise VerificationFailure(f"rank {me}: counter {ch.ctx} on comm {ch.comm.id} is {got}, expected {ch.sent}")
    comms[0].gin(0).barrier_session().sync()

    h = hashlib.sha256()
    for ring, _ in rings:
        h.update(ring)
    result = {"rank": me, "backend": comms[0].backend, "channels": cfg.channels, "communicators": n_comms,
              "delivered": [ch.consumed for ch in chans], "sent": [ch.sent for ch in chans],
              "checks": checks, "sweeps": sweeps, "t_ns": clock.now(), "digest": h.hexdigest()}
    if close:
        for comm in comms:
            comm.close()
    return result


def run_moe_ht(cfg: MoeConfig, *, transport: str = "inproc", model=None, unsafe: bool = False,
               consume_ns: int = 0, processes: bool = False) -> list:
    from ..fabric.model import LatencyModel
    from .launch import launch
    from .programs import RankProgram

    prog = RankProgram("moe-ht", {**dataclasses.asdict(cfg), "unsafe": unsafe, "consume_ns": consume_ns})
    model = model or LatencyModel(seed=cfg.seed)
    return launch(cfg.ranks, prog, transport=transport, model=model, min_ranks=2, processes=processes)
