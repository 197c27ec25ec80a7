"""Proxy path: submitters publish descriptors, one progress agent posts them.

Each context owns a multi-producer/single-consumer :class:`DescriptorRing`.
The communicator's progress agent drains every ring in bounded batches,
posts through the plugin's proxy-semantics calls, then matches
completions back to counters and retires them.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Dict, List, Optional, Tuple

from .core import team_translate
from .descriptor import DESCRIPTOR_SIZE, NO_WINDOW, Descriptor, Opcode, decode_descriptor, encode_descriptor
from .direct import _Prefix
from .plugin import MrHandle, NetPlugin, RequestHandle

SLOT_STRIDE = 8 + DESCRIPTOR_SIZE
BATCH = 64

# virtual ns for the proxy to notice a published descriptor / a completion
PICKUP_NS = 1500
COMPLETION_NS = 500

_SEQ = struct.Struct("<Q")


class DescriptorRing:
    """Fixed-capacity MPSC ring of 64-byte descriptors.

    Slot layout is an 8-byte sequence word followed by the descriptor.
    A producer with ticket ``t`` owns slot ``t & mask`` once the slot's
    word reads ``t``; it writes the descriptor, then stores ``t + 1`` to
    publish. The consumer reads a slot whose word is ``tail + 1`` and
    frees it by storing ``tail + capacity``.
    """

    def __init__(self, capacity: int = 1024):
        if capacity <= 0 or capacity & (capacity - 1):
            raise ValueError(f"ring capacity must be a power of two, got {capacity}")
        self.capacity = capacity
        self.mask = capacity - 1
        self.buf = bytearray(capacity * SLOT_STRIDE)
        for i in range(capacity):
            _SEQ.pack_into(self.buf, i * SLOT_STRIDE, i)
        self._head = 0
        self._ticket_lock = threading.Lock()  # stands in for an atomic fetch-add
        self.tail = 0

    @property
    def issued(self) -> int:
        """Tickets handed out so far."""
        return self._head

    def _word(self, slot: int) -> int:
        return _SEQ.unpack_from(self.buf, slot * SLOT_STRIDE)[0]

    def take_ticket(self) -> int:
        with self._ticket_lock:
            t = self._head
            self._head += 1
            return t

    def slot_free(self, ticket: int) -> bool:
        return self._word(ticket & self.mask) == ticket

    def publish(self, ticket: int, data: bytes) -> None:
        """Write into the ticket's slot; the slot must already be free."""
        if len(data) != DESCRIPTOR_SIZE:
            raise ValueError("descriptor must be 64 bytes")
        off = (ticket & self.mask) * SLOT_STRIDE
        self.buf[off + 8:off + SLOT_STRIDE] = data
        _SEQ.pack_into(self.buf, off, ticket + 1)

    def push(self, data: bytes, wait: Callable[[Callable[[], bool]], None]) -> int:
        t = self.take_ticket()
        if not self.slot_free(t):
            wait(lambda: self.slot_free(t))
        self.publish(t, data)
        return t

    def ready(self) -> bool:
        """True when the slot at the tail is published."""
        return self._word(self.tail & self.mask) == self.tail + 1

    def pop(self) -> Optional[Tuple[int, bytes]]:
        t = self.tail
        off = (t & self.mask) * SLOT_STRIDE
        if _SEQ.unpack_from(self.buf, off)[0] != t + 1:
            return None
        data = bytes(self.buf[off + 8:off + SLOT_STRIDE])
        _SEQ.pack_into(self.buf, off, t + self.capacity)
        self.tail = t + 1
        return t, data

    def __len__(self):
        return self._head - self.tail


class OutstandingTable:
    """Posted-but-unretired requests, with a retired-ticket prefix per context."""

    def __init__(self, n_contexts: int):
        self._by_handle: Dict[int, Tuple[int, int]] = {}
        self.counts = [0] * n_contexts
        self._retired = [_Prefix() for _ in range(n_contexts)]

    def add(self, handle: RequestHandle, ctx: int, ticket: int) -> None:
        self._by_handle[handle.id] = (ctx, ticket)
        self.counts[ctx] += 1

    def retire(self, handle: RequestHandle) -> int:
        ctx, ticket = self._by_handle.pop(handle.id)
        self.counts[ctx] -= 1
        self._retired[ctx].add(ticket + 1)
        return ctx

    def retired_through(self, ctx: int) -> int:
        """Number of leading tickets on ``ctx`` that are fully retired."""
        return self._retired[ctx].value

    def __len__(self):
        return len(self._by_handle)


class ProxyBackend:
    def __init__(self, comm, endpoint, plugin: NetPlugin, *, queue_depth: int = 1024):
        self.comm = comm
        self.endpoint = endpoint
        self.plugin = plugin
        self.clock = comm.clock
        n = endpoint.n_contexts
        self.rings = [DescriptorRing(queue_depth) for _ in range(n)]
        self.table = OutstandingTable(n)
        self.posted = 0
        self.mrs: Dict[int, MrHandle] = {}
        self._lock = threading.RLock()
        plugin.on_complete = self._on_complete
        self.agent = self.clock.agent((comm.id, endpoint.rank), self.progress_once,
                                      f"proxy/c{comm.id}/r{endpoint.rank}", repoll_ns=100)

    def register(self, window) -> None:
        self.mrs[window.id] = self.plugin.reg_mr(window)

    def _on_complete(self, handle: RequestHandle) -> None:
        self.agent.kick(COMPLETION_NS)

    # -- submitter side ----------------------------------------------------
    def submit(self, ctx: int, d: Descriptor) -> int:
        data = encode_descriptor(d)
        ring = self.rings[ctx]
        if d.action.counter is not None:
            self.comm.counters.expect(d.action.counter)

        def wait(pred):
            self.agent.kick(PICKUP_NS)
            self.clock.wait_until(pred, self.comm.config.timeout_s,
                                  what=f"free slot in ring ctx {ctx} on rank {self.endpoint.rank}")

        t = ring.push(data, wait)
        self.agent.kick(PICKUP_NS)
        return t

    # -- progress agent ----------------------------------------------------
    def progress_once(self) -> bool:
        """One agent step; True when a ring still holds undrained work."""
        return self.step()[1]

    def step(self) -> Tuple[int, bool]:
        with self._lock:
            work = 0
            backlog = False
            for ctx, ring in enumerate(self.rings):
                for _ in range(BATCH):
                    item = ring.pop()
                    if item is None:
                        break
                    ticket, data = item
                    self._post(ctx, ticket, decode_descriptor(data))
                    work += 1
                backlog = backlog or ring.ready()
            for h in self.plugin.completed():
                if not self.plugin.test(h):
                    continue
                if h.action.counter is not None:
                    self.comm.counters.complete(h.action.counter)
                self.plugin.retire(h)
                self.table.retire(h)
                work += 1
            return work, backlog

    def _post(self, ctx: int, ticket: int, d: Descriptor) -> None:
        peer = team_translate(self.comm.team(d.team), d.peer)
        mr_dst = self.mrs[d.dst_window] if d.dst_window != NO_WINDOW else None
        action = d.action
        if d.opcode == Opcode.PUT:
            args = (self.mrs[d.src_window], d.src_offset_or_value, mr_dst, d.dst_offset, d.nbytes, peer, ctx)
            inline = None
        else:
            args = (None, 0, mr_dst, d.dst_offset, d.nbytes, peer, ctx)
            inline = d.inline_bytes()
        if action.signal is not None:
            sid, op = action.signal
            h = self.plugin.iput_signal(*args, sid, op, action, inline=inline)
        else:
            h = self.plugin.iput(*args, action, inline=inline)
        self.posted += 1
        self.table.add(h, ctx, ticket)

    # -- flush -------------------------------------------------------------
    def flush(self, ctx: int, timeout: Optional[float] = None) -> None:
        """Block until every descriptor submitted to ``ctx`` before the call is acked."""
        target = self.rings[ctx].issued
        if self.table.retired_through(ctx) >= target:
            return
        self.agent.kick(PICKUP_NS)
        self.clock.wait_until(lambda: self.table.retired_through(ctx) >= target, timeout,
                              what=f"proxy flush ctx {ctx} on rank {self.endpoint.rank}")

    def stop(self) -> None:
        self.agent.stop()

    @property
    def outstanding(self) -> int:
        return len(self.table)

    def ring_depths(self) -> List[int]:
        return [len(r) for r in self.rings]


def proxy_flush(backend: ProxyBackend, ctx: int, timeout: Optional[float] = None) -> None:
    backend.flush(ctx, timeout)
