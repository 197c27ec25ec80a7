"""Direct posting: the submitting agent writes straight to the endpoint.

There is no descriptor ring and no intermediary agent. Completion is
tracked per ``(peer, seq)`` and retired by :meth:`DirectContext.poll`,
which plays the part of a completion queue consumer.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Dict, List, Optional, Set

from .agents import current_agent
from .core import team_translate, window_resolve
from .descriptor import NO_WINDOW, Descriptor, Opcode
from .errors import UnknownWindow
from .fabric.model import ChannelKey

# virtual ns between the caller building a work entry and the NIC picking it up
POST_NS = 200


class _Prefix:
    """Contiguous prefix over a set of completed sequence numbers."""

    __slots__ = ("value", "_ahead")

    def __init__(self):
        self.value = 0
        self._ahead: Set[int] = set()

    def add(self, seq: int) -> None:
        self._ahead.add(seq)
        while self.value + 1 in self._ahead:
            self.value += 1
            self._ahead.discard(self.value)


class DirectContext:
    def __init__(self, comm, endpoint, ctx_index: int):
        self.comm = comm
        self.endpoint = endpoint
        self.ctx = ctx_index
        self.trace_calls = False
        self.calls: List[tuple] = []
        self._lock = threading.Lock()
        self._outstanding: Dict[tuple, Optional[int]] = {}
        self._early: Set[tuple] = set()
        self._cq: deque = deque()
        self._retired: Dict[int, _Prefix] = {}
        endpoint.add_ack_hook(self._on_ack)

    def _on_ack(self, key: ChannelKey, seq: int) -> None:
        if key.ctx == self.ctx:
            self._cq.append((key.dst, seq))

    @property
    def outstanding(self) -> int:
        return len(self._outstanding)

    # -- posting -----------------------------------------------------------
    def post(self, d: Descriptor) -> int:
        """Post one operation inline; returns its put sequence number."""
        ep = self.endpoint
        peer = team_translate(self.comm.team(d.team), d.peer)
        key = ep.channel(self.ctx, peer)
        n = d.nbytes
        if d.dst_window == NO_WINDOW:
            if n:
                raise UnknownWindow("a non-empty put needs a destination window")
        else:
            window_resolve(ep.windows.get(d.dst_window), peer, d.dst_offset, n)
        if d.opcode == Opcode.PUT:
            src = ep.windows.get(d.src_window)
            payload = bytes(src.local[window_resolve(src, ep.rank, d.src_offset_or_value, n)]) if src else None
            if payload is None:
                raise UnknownWindow(f"source window {d.src_window} is not registered")
        elif d.opcode == Opcode.PUT_INLINE:
            payload = d.inline_bytes()
        else:
            payload = b""

        action = d.action
        counter = action.counter
        if counter is not None:
            self.comm.counters.expect(counter)
        seq = ep.tx_put(key, d.dst_window, d.dst_offset, payload, post_delay_ns=POST_NS)
        if action.signal is not None:
            ep.tx_signal(key, d.signal_id, action.signal[1], post_delay_ns=POST_NS)
        if self.trace_calls:
            self.calls.append((current_agent(), d.opcode.name, key, seq))
        with self._lock:
            if (peer, seq) in self._early:
                self._early.discard((peer, seq))
                self._retire_locked(peer, seq, counter)
            else:
                self._outstanding[peer, seq] = counter
        return seq

    # -- completion --------------------------------------------------------
    def poll(self) -> int:
        """Consume delivered acks and apply their counter actions exactly once."""
        if not self._cq:
            return 0
        n = 0
        with self._lock:
            while self._cq:
                peer, seq = self._cq.popleft()
                try:
                    counter = self._outstanding.pop((peer, seq))
                except KeyError:
                    # ack beat the poster's bookkeeping; it retires on record
                    self._early.add((peer, seq))
                    continue
                self._retire_locked(peer, seq, counter)
                n += 1
        return n

    def _retire_locked(self, peer: int, seq: int, counter: Optional[int]) -> None:
        if counter is not None:
            self.comm.counters.complete(counter)
        p = self._retired.get(peer)
        if p is None:
            p = self._retired[peer] = _Prefix()
        p.add(seq)

    def retired_prefix(self, peer: int) -> int:
        p = self._retired.get(peer)
        return p.value if p else 0

    def flush(self, timeout: Optional[float] = None) -> None:
        """Block until every op posted on this context before the call is acked."""
        ep = self.endpoint
        targets = {}
        for peer in (*ep.peers, ep.rank):
            issued = ep._tx[self.ctx, peer].next_seq - 1
            if issued:
                targets[peer] = issued
        if not targets:
            return

        def done():
            self.poll()
            return all(self.retired_prefix(p) >= s for p, s in targets.items())

        self.comm.clock.wait_until(done, timeout, what=f"direct flush ctx {self.ctx} on rank {ep.rank}")


def post_direct(dctx: DirectContext, d: Descriptor) -> int:
    return dctx.post(d)


def direct_poll(dctx: DirectContext) -> int:
    return dctx.poll()


def direct_flush(dctx: DirectContext, timeout: Optional[float] = None) -> None:
    dctx.flush(timeout)
