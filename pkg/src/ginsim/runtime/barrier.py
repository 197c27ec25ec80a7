"""Dissemination barrier over reserved signal cells.

In step ``s`` of a round, team rank ``i`` sends a zero-byte signal to team
rank ``(i + 2**s) % n`` and waits for the one from ``(i - 2**s) % n``.
Cells are never reset: each round adds exactly one increment per step, so
round ``k`` waits for a cell value of at least ``k``. That keeps
back-to-back rounds from cross-talking even when a fast rank is already
signalling round ``k + 1``.

The barrier only establishes arrival. Puts issued before it are not
guaranteed visible afterwards; flush and signal for that.
"""

from __future__ import annotations

from ..core import SignalOp, Team
from ..errors import InvalidSignal
from .comm import barrier_steps


class BarrierSession:
    def __init__(self, gin, team: Team, slot: int = 0):
        comm = gin.comm
        if not 0 <= slot < comm.config.barrier_slots:
            raise InvalidSignal(f"barrier slot {slot} outside [0, {comm.config.barrier_slots})")
        self.gin = gin
        self.team = team
        self.slot = slot
        self.me = team.rank_of(comm.rank)
        self.steps = barrier_steps(team.size)
        self.base = comm.config.n_signals + slot * comm.barrier_stride
        self._key = (team.id, slot)

    @property
    def round(self) -> int:
        """Rounds completed by this rank on ``(team, slot)``."""
        return self.gin.comm.barrier_rounds.get(self._key, 0)

    def sync(self, timeout=None) -> int:
        comm = self.gin.comm
        rnd = self.round + 1
        n = self.team.size
        for s in range(self.steps):
            cell = self.base + s
            self.gin._signal_raw(self.team, (self.me + (1 << s)) % n, cell, SignalOp.inc())
            self.gin._wait_cell(cell, rnd, timeout)
        comm.barrier_rounds[self._key] = rnd
        return rnd


def barrier_sync(session: BarrierSession, timeout=None) -> int:
    return session.sync(timeout)
