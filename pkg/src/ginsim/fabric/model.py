"""Messages, channel keys and the latency model used by the simulated network."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

from ..core import SignalOp


class ChannelKey(NamedTuple):
    """Ordering domain: one sender, one context, one receiver."""

    src: int
    ctx: int
    dst: int


@dataclass(frozen=True)
class LatencyModel:
    """Per-message delay = base + bytes / bandwidth + uniform(0, jitter).

    A channel's link carries one payload at a time, so back-to-back puts
    on the same channel queue behind each other's serialization time.

    ``reorder_window`` bounds how many later messages on the same channel
    may overtake a given one; 0 gives per-channel FIFO. Channels never
    constrain each other.
    """

    base_ns: int = 1000
    jitter_ns: int = 500
    reorder_window: int = 4
    seed: int = 0
    bytes_per_ns: float = 50.0  # ~400 Gb/s

    def __post_init__(self):
        if self.base_ns < 0 or self.jitter_ns < 0 or self.reorder_window < 0:
            raise ValueError("latency model parameters must be non-negative")

    def serialization_ns(self, nbytes: int) -> int:
        """Time the payload occupies its channel's link."""
        return int(nbytes / self.bytes_per_ns) if self.bytes_per_ns > 0 else 0

    def data_delay(self, rng: random.Random, nbytes: int) -> int:
        """Serialization plus propagation for a message on an idle link."""
        return self.serialization_ns(nbytes) + self.propagation_ns(rng)

    def propagation_ns(self, rng: random.Random) -> int:
        d = self.base_ns
        if self.jitter_ns:
            d += int(rng.random() * (self.jitter_ns + 1))
        return d


class ReorderBound:
    """Clamps delivery times so at most ``window`` later messages overtake any message."""

    __slots__ = ("window", "_recent", "_floor")

    def __init__(self, window: int):
        self.window = window
        self._recent: deque = deque()
        self._floor = 0

    def clamp(self, t: int) -> int:
        t = max(t, self._floor)
        self._recent.append(t)
        if len(self._recent) > self.window:
            self._floor = max(self._floor, self._recent.popleft())
        return t


@dataclass(frozen=True, slots=True)
class Put:
    key: ChannelKey
    seq: int
    dst_window: int
    dst_offset: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class Signal:
    key: ChannelKey
    watermark: int
    signal_id: int
    op: SignalOp


@dataclass(frozen=True, slots=True)
class Ack:
    key: ChannelKey  # the data channel being acknowledged
    seq: int
