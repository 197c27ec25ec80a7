"""Identifiers, teams, windows and completion actions.

Ranks, windows, signals, counters and contexts are plain ``int`` ids. The
types here are immutable except for the bytes a window exposes locally.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .errors import InvalidCounter, InvalidSignal, OutOfBounds, RankOutOfRange, UnknownWindow

U64_MASK = (1 << 64) - 1

DEFAULT_CONTEXTS = 4
DEFAULT_SIGNALS = 256
DEFAULT_COUNTERS = 256

WORLD_TEAM_ID = 0


class SignalKind(enum.IntEnum):
    INC = 0
    ADD = 1


@dataclass(frozen=True)
class SignalOp:
    kind: SignalKind
    operand: int = 1

    def __post_init__(self):
        if self.kind == SignalKind.INC and self.operand != 1:
            raise ValueError("SignalInc always carries operand 1")
        if not 0 <= self.operand <= U64_MASK:
            raise ValueError(f"signal operand {self.operand} is not a u64")

    @classmethod
    def inc(cls) -> "SignalOp":
        return cls(SignalKind.INC, 1)

    @classmethod
    def add(cls, value: int) -> "SignalOp":
        return cls(SignalKind.ADD, value)


@dataclass(frozen=True)
class CompletionAction:
    """Optional remote signal update and/or local counter increment.

    Actions combine with ``|``::

        gin.put(..., action=SignalInc(0) | CounterInc(3))
    """

    signal: Optional[Tuple[int, SignalOp]] = None
    counter: Optional[int] = None

    def __or__(self, other: "CompletionAction") -> "CompletionAction":
        if self.signal is not None and other.signal is not None:
            raise ValueError("an operation carries at most one signal action")
        if self.counter is not None and other.counter is not None:
            raise ValueError("an operation carries at most one counter action")
        return CompletionAction(
            signal=self.signal if self.signal is not None else other.signal,
            counter=self.counter if self.counter is not None else other.counter,
        )


NO_ACTION = CompletionAction()


def SignalInc(signal_id: int) -> CompletionAction:
    return CompletionAction(signal=(signal_id, SignalOp.inc()))


def SignalAdd(signal_id: int, value: int) -> CompletionAction:
    return CompletionAction(signal=(signal_id, SignalOp.add(value)))


def CounterInc(counter_id: int) -> CompletionAction:
    return CompletionAction(counter=counter_id)


@dataclass(frozen=True)
class Team:
    id: int
    members: Tuple[int, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("a team needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"team members must be distinct: {self.members}")

    @classmethod
    def world(cls, world_size: int) -> "Team":
        return cls(WORLD_TEAM_ID, tuple(range(world_size)))

    @property
    def size(self) -> int:
        return len(self.members)

    def rank_of(self, world_rank: int) -> int:
        try:
            return self.members.index(world_rank)
        except ValueError:
            raise RankOutOfRange(f"world rank {world_rank} not in team {self.id}") from None


def team_translate(team: Team, team_rank: int) -> int:
    """World rank of ``team_rank`` within ``team``."""
    if not 0 <= team_rank < len(team.members):
        raise RankOutOfRange(f"team rank {team_rank} outside team {team.id} of size {team.size}")
    return team.members[team_rank]


@dataclass(eq=False)
class Window:
    """One rank's view of a collectively registered window.

    ``sizes[r]`` is the capacity rank ``r`` registered; only ``local`` (this
    rank's bytes) is addressable in-process.
    """

    id: int
    rank: int
    sizes: Tuple[int, ...]
    local: memoryview = field(repr=False)

    def __post_init__(self):
        if self.local.nbytes != self.sizes[self.rank]:
            raise ValueError("local buffer does not match the registered size")

    def size_of(self, rank: int) -> int:
        if not 0 <= rank < len(self.sizes):
            raise RankOutOfRange(f"rank {rank} not registered in window {self.id}")
        return self.sizes[rank]

    def resolve(self, rank: int, offset: int, length: int) -> slice:
        return window_resolve(self, rank, offset, length)

    def read(self, offset: int, length: int) -> bytes:
        return bytes(self.local[window_resolve(self, self.rank, offset, length)])


def window_resolve(window: Optional[Window], rank: int, offset: int, length: int) -> slice:
    """Bounds-check ``[offset, offset + length)`` against ``rank``'s capacity."""
    if window is None:
        raise UnknownWindow("window is not registered")
    size = window.size_of(rank)
    if offset < 0 or length < 0 or offset + length > size:
        raise OutOfBounds(
            f"[{offset}, {offset + length}) outside window {window.id} of rank {rank} (size {size})"
        )
    return slice(offset, offset + length)


def as_bytes_view(buffer) -> memoryview:
    """Writable flat byte view of a bytearray, numpy array or memoryview."""
    view = memoryview(buffer)
    if view.readonly:
        raise ValueError("window buffers must be writable")
    if view.ndim != 1 or view.format != "B":
        view = view.cast("B")
    return view


class CellTable:
    """Fixed table of 64-bit cells (signals or counters).

    Cells only grow through ``add``; ``reset`` is the one decrement.
    ``reserved`` cells past ``size`` are internal (barrier slots) and are not
    addressable by user ids.
    """

    def __init__(self, size: int, reserved: int = 0, kind: str = "signal"):
        self.size = size
        self.kind = kind
        self._cells = [0] * (size + reserved)
        self._lock = threading.Lock()
        self.version = 0  # bumped on every write; lets pollers skip unchanged tables

    def __len__(self):
        return len(self._cells)

    @property
    def cells(self) -> list:
        """The live cell list, for hot read-only loops. Never write through it."""
        return self._cells

    def check(self, cell_id: int) -> None:
        if not 0 <= cell_id < self.size:
            exc = InvalidSignal if self.kind == "signal" else InvalidCounter
            raise exc(f"{self.kind} id {cell_id} outside table of {self.size}")

    def __getitem__(self, cell_id: int) -> int:
        return self._cells[cell_id]

    def add(self, cell_id: int, value: int) -> int:
        with self._lock:
            v = (self._cells[cell_id] + value) & U64_MASK
            self._cells[cell_id] = v
            self.version += 1
            return v

    def reset(self, cell_id: int) -> None:
        with self._lock:
            self._cells[cell_id] = 0
            self.version += 1

    def snapshot(self) -> Tuple[int, ...]:
        return tuple(self._cells)


class CounterTable(CellTable):
    """Counter cells plus a count of in-flight operations targeting each one."""

    def __init__(self, size: int):
        super().__init__(size, kind="counter")
        self._pending = [0] * size

    def expect(self, counter_id: int) -> None:
        with self._lock:
            self._pending[counter_id] += 1

    def complete(self, counter_id: int) -> int:
        with self._lock:
            self._pending[counter_id] -= 1
            v = (self._cells[counter_id] + 1) & U64_MASK
            self._cells[counter_id] = v
            self.version += 1
            return v

    def pending(self, counter_id: int) -> int:
        return self._pending[counter_id]
