"""The per-context device API: data movement, completion cells and flush.

Every call validates its arguments up front so that errors surface to the
caller rather than to a progress agent, then hands a descriptor to the
communicator's backend.
"""

from __future__ import annotations

from typing import Optional

from ..core import NO_ACTION, CompletionAction, SignalOp, Team, Window, window_resolve
from ..descriptor import INLINE, MAX_INLINE_BYTES, NO_WINDOW, Descriptor, Opcode
from ..errors import InvalidPeer, OutOfBounds, ResetWhileOutstanding, UnknownWindow
from ..plugin import PROXY


class Gin:
    """Handle bound to one context of a :class:`DevComm`.

    Cooperation scopes collapse to the calling agent, and memory-scope
    hints are accepted but have no effect.
    """

    def __init__(self, comm, ctx: int = 0):
        comm.check_context(ctx)
        self.comm = comm
        self.ctx = ctx

    def __repr__(self):
        return f"Gin(rank={self.comm.rank}, comm={self.comm.id}, ctx={self.ctx})"

    # -- validation ----------------------------------------------------------
    def _peer(self, team: Team, peer: int) -> int:
        if self.comm.teams.get(team.id) != team:
            raise InvalidPeer(f"team {team.id} is not defined on this communicator")
        if not 0 <= peer < team.size:
            raise InvalidPeer(f"peer {peer} outside team {team.id} of size {team.size}")
        return team.members[peer]

    def _window(self, w: Window) -> Window:
        if w is None or self.comm.windows.get(w.id) is not w:
            raise UnknownWindow(f"window {getattr(w, 'id', None)} is not registered on this communicator")
        return w

    def _check_action(self, action: CompletionAction) -> None:
        if action.signal is not None:
            self.comm.signals.check(action.signal[0])
        if action.counter is not None:
            self.comm.counters.check(action.counter)

    def _submit(self, d: Descriptor) -> None:
        comm = self.comm
        if comm.backend == PROXY:
            comm.proxy.submit(self.ctx, d)
        else:
            comm.contexts[self.ctx].post(d)

    # -- data movement -------------------------------------------------------
    def put(self, team: Team, peer: int, dst_window: Window, dst_offset: int, src_window: Window,
            src_offset: int, nbytes: int, action: CompletionAction = NO_ACTION, *, hints=None) -> None:
        dst_rank = self._peer(team, peer)
        self._window(dst_window)
        self._window(src_window)
        window_resolve(dst_window, dst_rank, dst_offset, nbytes)
        window_resolve(src_window, self.comm.rank, src_offset, nbytes)
        self._check_action(action)
        self._submit(Descriptor.build(
            Opcode.PUT, team=team.id, peer=peer, dst_window=dst_window.id, dst_offset=dst_offset,
            src_window=src_window.id, src_offset_or_value=src_offset, nbytes=nbytes, action=action))

    def put_value(self, team: Team, peer: int, dst_window: Window, dst_offset: int, value: int,
                  action: CompletionAction = NO_ACTION, *, width: int = 8) -> None:
        """Write ``value`` as ``width`` little-endian bytes carried in the descriptor."""
        if not 0 < width <= MAX_INLINE_BYTES:
            raise OutOfBounds(f"inline width {width} outside 1..{MAX_INLINE_BYTES}")
        if not 0 <= value < 1 << (8 * width):
            raise ValueError(f"value {value:#x} does not fit in {width} bytes")
        dst_rank = self._peer(team, peer)
        window_resolve(self._window(dst_window), dst_rank, dst_offset, width)
        self._check_action(action)
        self._submit(Descriptor.build(
            Opcode.PUT_INLINE, team=team.id, peer=peer, dst_window=dst_window.id, dst_offset=dst_offset,
            src_window=INLINE, src_offset_or_value=value, nbytes=width, action=action))

    def signal(self, team: Team, peer: int, signal_id: int, op: Optional[SignalOp] = None,
               action: CompletionAction = NO_ACTION) -> None:
        """Standalone signal; applies only after earlier puts on this context to ``peer``."""
        self._peer(team, peer)
        self.comm.signals.check(signal_id)
        if action.signal is not None:
            raise ValueError("signal() already carries a signal; pass only a counter action")
        if action.counter is not None:
            self.comm.counters.check(action.counter)
        self._signal_raw(team, peer, signal_id, op or SignalOp.inc(), action.counter)

    def _signal_raw(self, team: Team, peer: int, signal_id: int, op: SignalOp,
                    counter: Optional[int] = None) -> None:
        action = CompletionAction(signal=(signal_id, op), counter=counter)
        self._submit(Descriptor.build(Opcode.SIGNAL_ONLY, team=team.id, peer=peer, dst_window=NO_WINDOW,
                                      action=action))

    def flush(self, timeout: Optional[float] = None) -> None:
        """Block until every op posted on this context is locally complete."""
        comm = self.comm
        timeout = comm.config.timeout_s if timeout is None else timeout
        if comm.backend == PROXY:
            comm.proxy.flush(self.ctx, timeout)
        else:
            comm.contexts[self.ctx].flush(timeout)

    # -- counters ------------------------------------------------------------
    def read_counter(self, counter_id: int) -> int:
        self.comm.counters.check(counter_id)
        self.comm.poll()
        return self.comm.counters[counter_id]

    def wait_counter(self, counter_id: int, expected: int, timeout: Optional[float] = None) -> int:
        comm = self.comm
        comm.counters.check(counter_id)
        cells = comm.counters

        def ready():
            comm.poll()
            return cells[counter_id] >= expected

        comm.clock.wait_until(ready, comm.config.timeout_s if timeout is None else timeout,
                              what=f"counter {counter_id} >= {expected} on rank {comm.rank}")
        return cells[counter_id]

    def reset_counter(self, counter_id: int) -> None:
        comm = self.comm
        comm.counters.check(counter_id)
        comm.poll()
        if comm.counters.pending(counter_id):
            raise ResetWhileOutstanding(
                f"counter {counter_id} has {comm.counters.pending(counter_id)} operations in flight")
        comm.counters.reset(counter_id)

    # -- signals -------------------------------------------------------------
    def read_signal(self, signal_id: int) -> int:
        self.comm.signals.check(signal_id)
        return self.comm.signals[signal_id]

    def wait_signal(self, signal_id: int, expected: int, timeout: Optional[float] = None) -> int:
        """Block until the local cell is at least ``expected``; returns its value."""
        comm = self.comm
        comm.signals.check(signal_id)
        return self._wait_cell(signal_id, expected, timeout)

    def _wait_cell(self, cell: int, expected: int, timeout: Optional[float] = None) -> int:
        comm = self.comm
        cells = comm.signals
        if cells[cell] < expected:
            comm.clock.wait_until(lambda: cells[cell] >= expected,
                                  comm.config.timeout_s if timeout is None else timeout,
                                  what=f"signal {cell} >= {expected} on rank {comm.rank}")
        return cells[cell]

    def reset_signal(self, signal_id: int) -> None:
        self.comm.signals.check(signal_id)
        self.comm.signals.reset(signal_id)

    def barrier_session(self, team: Optional[Team] = None, slot: int = 0):
        from .barrier import BarrierSession

        return BarrierSession(self, team or self.comm.world, slot)

