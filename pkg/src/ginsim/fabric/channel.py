"""Sequence/watermark bookkeeping shared by every transport.

A signal carries the highest put sequence number issued on its channel
before it. The receiver applies it only once every put up to that
watermark has been copied into its window, which is what makes
"signal implies prior puts visible" hold under reordering.
"""

from __future__ import annotations

import heapq
from typing import Callable, Dict, Iterable, List, Tuple

from ..core import CellTable, Window, window_resolve
from ..descriptor import NO_WINDOW
from ..errors import InvalidSignal, UnknownChannel, UnknownWindow
from .model import Ack, ChannelKey, Put, Signal


class TxChannel:
    __slots__ = ("next_seq", "n_msgs", "acked", "ack_prefix")

    def __init__(self):
        self.next_seq = 1
        self.n_msgs = 0
        self.acked: set = set()
        self.ack_prefix = 0

    def take_seq(self) -> int:
        seq = self.next_seq
        self.next_seq += 1
        self.n_msgs += 1
        return seq

    def watermark(self) -> int:
        self.n_msgs += 1
        return self.next_seq - 1

    @property
    def outstanding(self) -> int:
        return (self.next_seq - 1) - self.ack_prefix - len(self.acked)

    def ack(self, seq: int) -> bool:
        """Record an ack; False for duplicates or unknown sequence numbers."""
        if seq <= self.ack_prefix or seq >= self.next_seq or seq in self.acked:
            return False
        self.acked.add(seq)
        while self.ack_prefix + 1 in self.acked:
            self.ack_prefix += 1
            self.acked.discard(self.ack_prefix)
        return True


class RxChannel:
    __slots__ = ("applied", "prefix", "pending", "arrivals")

    def __init__(self):
        self.applied: set = set()
        self.prefix = 0
        self.pending: list = []  # (watermark, arrival, Signal)
        self.arrivals = 0

    def put_applied(self, seq: int) -> None:
        if seq <= self.prefix or seq in self.applied:
            raise RuntimeError(f"put seq {seq} applied twice")
        self.applied.add(seq)
        while self.prefix + 1 in self.applied:
            self.prefix += 1
            self.applied.discard(self.prefix)

    def hold(self, sig: Signal) -> None:
        self.arrivals += 1
        heapq.heappush(self.pending, (sig.watermark, self.arrivals, sig))

    def releasable(self) -> List[Signal]:
        out = []
        while self.pending and self.pending[0][0] <= self.prefix:
            out.append(heapq.heappop(self.pending)[2])
        return out


AckHook = Callable[[ChannelKey, int], None]
SignalObserver = Callable[[ChannelKey, int, object, int, int], None]


class Endpoint:
    """Per-rank network endpoint state common to the simulated and socket transports.

    Delivery methods (``_deliver_*``) run on the endpoint's progress agent
    only; transports are responsible for that serialization.
    """

    def __init__(
        self,
        rank: int,
        peers: Iterable[int],
        *,
        comm: int = 0,
        n_contexts: int = 4,
        n_signals: int = 256,
        reserved_signals: int = 0,
    ):
        self.rank = rank
        self.comm = comm
        self.peers: Tuple[int, ...] = tuple(sorted(p for p in set(peers) if p != rank))
        self.n_contexts = n_contexts
        self.windows: Dict[int, Window] = {}
        self.signals = CellTable(n_signals, reserved_signals, kind="signal")
        self._tx: Dict[Tuple[int, int], TxChannel] = {
            (c, d): TxChannel() for c in range(n_contexts) for d in (*self.peers, rank)
        }
        self._rx: Dict[Tuple[int, int], RxChannel] = {}
        self._ack_hooks: List[AckHook] = []
        self.signal_observers: List[SignalObserver] = []
        self.duplicate_acks = 0

    # -- sender side -------------------------------------------------------
    def channel(self, ctx: int, dst: int) -> ChannelKey:
        if (ctx, dst) not in self._tx:
            raise UnknownChannel(f"rank {self.rank} has no channel ctx={ctx} -> {dst}")
        return ChannelKey(self.rank, ctx, dst)

    def _txc(self, key: ChannelKey) -> TxChannel:
        try:
            return self._tx[key.ctx, key.dst]
        except KeyError:
            raise UnknownChannel(f"unknown channel {key}") from None

    def add_ack_hook(self, hook: AckHook) -> None:
        self._ack_hooks.append(hook)

    def outstanding(self, key: ChannelKey = None) -> int:
        if key is not None:
            return self._txc(key).outstanding
        return sum(c.outstanding for c in self._tx.values())

    def register_window(self, window: Window) -> None:
        self.windows[window.id] = window

    @property
    def channels(self) -> List[ChannelKey]:
        return [ChannelKey(self.rank, c, d) for (c, d) in self._tx if d != self.rank]

    # -- receiver side -----------------------------------------------------
    def _rxc(self, key: ChannelKey) -> RxChannel:
        rx = self._rx.get((key.src, key.ctx))
        if rx is None:
            rx = self._rx[key.src, key.ctx] = RxChannel()
        return rx

    def applied_prefix(self, src: int, ctx: int) -> int:
        rx = self._rx.get((src, ctx))
        return rx.prefix if rx else 0

    def _deliver_put(self, msg: Put) -> List[Signal]:
        """Copy the payload into place; returns signals that became applicable."""
        n = len(msg.payload)
        if not (msg.dst_window == NO_WINDOW and n == 0):
            window = self.windows.get(msg.dst_window)
            if window is None:
                raise UnknownWindow(f"rank {self.rank}: put into unregistered window {msg.dst_window}")
            sl = window_resolve(window, self.rank, msg.dst_offset, n)
            if n:
                window.local[sl] = msg.payload
        rx = self._rxc(msg.key)
        rx.put_applied(msg.seq)
        return rx.releasable()

    def _deliver_signal(self, msg: Signal) -> List[Signal]:
        rx = self._rxc(msg.key)
        rx.hold(msg)
        return rx.releasable()

    def _apply_signal(self, msg: Signal) -> None:
        if not 0 <= msg.signal_id < len(self.signals):
            raise InvalidSignal(f"rank {self.rank}: signal id {msg.signal_id} outside table")
        value = self.signals.add(msg.signal_id, msg.op.operand)
        for obs in self.signal_observers:
            obs(msg.key, msg.signal_id, msg.op, msg.watermark, value)

    def _deliver_ack(self, msg: Ack) -> bool:
        if not self._txc(msg.key).ack(msg.seq):
            self.duplicate_acks += 1
            return False
        for hook in self._ack_hooks:
            hook(msg.key, msg.seq)
        return True
