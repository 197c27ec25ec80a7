"""Deterministic virtual-time network.

Every message gets a delivery time sampled from a per-channel RNG stream
(so sampling never depends on thread interleaving) and lands in a single
event heap ordered by ``(time, kind, channel..., index)``.

The clock is advanced by blocked agents: when every attached agent is
inside :meth:`SimFabric.wait_until` and none of their predicates holds,
the last one to block pops the next batch of same-time events, applies
them, and wakes exactly the waiters whose predicates became true. An
empty heap at that point is a deadlock and fails the run.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
import threading
import time
from typing import Callable, Dict, List, Optional, Tuple

from ..agents import acting_as
from ..errors import Deadlock, DuplicateEndpoint, FabricFailure, GinTimeout
from .channel import Endpoint
from .model import Ack, ChannelKey, LatencyModel, Put, ReorderBound, Signal

log = logging.getLogger(__name__)

_DELIVER, _ACK, _AGENT, _TIMER = 0, 1, 2, 3


class _Waiter:
    __slots__ = ("pred", "cond", "ready", "what")

    def __init__(self, pred, cond, what):
        self.pred = pred
        self.cond = cond
        self.ready = False
        self.what = what


class SimAgent:
    """A progress agent whose steps are scheduled as clock events."""

    def __init__(self, fabric: "SimFabric", key: Tuple[int, int], step: Callable[[], bool], name: str,
                 repoll_ns: int = 0):
        self.fabric = fabric
        self.key = key
        self.step = step
        self.name = name
        self.repoll_ns = repoll_ns
        self._next: Optional[int] = None
        self.steps = 0

    def kick(self, delay_ns: int = 0) -> None:
        f = self.fabric
        with f._lock:
            t = f._now + delay_ns
            if self._next is not None and self._next <= t:
                return
            self._next = t
            f._schedule((t, _AGENT) + self.key, self._fire)

    def _fire(self):
        if self._next != self.fabric._now:
            return
        self._next = None
        self.steps += 1
        with acting_as(self.name):
            more = self.step()
        if more:
            self.kick(self.repoll_ns)

    def stop(self):
        self._next = None


class _Stream:
    __slots__ = ("rng", "bound", "link_free")

    def __init__(self, rng: random.Random, bound: ReorderBound):
        self.rng = rng
        self.bound = bound
        self.link_free = 0


class SimEndpoint(Endpoint):
    def __init__(self, fabric: "SimFabric", rank: int, peers, **kw):
        super().__init__(rank, peers, **kw)
        self.fabric = fabric
        self._inbox: List[object] = []
        self._streams: Dict[ChannelKey, _Stream] = {}
        self._ack_rngs: Dict[ChannelKey, random.Random] = {}

    def _stream(self, key: ChannelKey) -> "_Stream":
        s = self._streams.get(key)
        if s is None:
            seed = self.fabric.model.seed
            s = self._streams[key] = _Stream(
                random.Random(f"data/{seed}/{self.comm}/{key.src}/{key.ctx}/{key.dst}"),
                ReorderBound(self.fabric.model.reorder_window))
        return s

    def _send_time(self, key: ChannelKey, nbytes: int, kind: str, ident: int, post_delay_ns: int) -> int:
        f = self.fabric
        m = f.model
        s = self._stream(key)
        start = max(f._now + post_delay_ns, s.link_free)
        s.link_free = start + m.serialization_ns(nbytes)
        delay = m.propagation_ns(s.rng)
        if f.delay_hook is not None:
            delay += f.delay_hook(kind, key, ident) or 0
        return s.bound.clamp(s.link_free + delay)

    def tx_put(self, key: ChannelKey, dst_window: int, dst_offset: int, payload: bytes,
               *, post_delay_ns: int = 0) -> int:
        f = self.fabric
        with f._lock:
            f._check_failure()
            txc = self._txc(key)
            seq = txc.take_seq()
            msg = Put(key, seq, dst_window, dst_offset, bytes(payload))
            t = self._send_time(key, len(msg.payload), "put", seq, post_delay_ns)
            dst = f._endpoint(self.comm, key.dst)
            f._schedule((t, _DELIVER, self.comm, key.src, key.ctx, key.dst, txc.n_msgs),
                        lambda: dst._arrive(msg))
            return seq

    def tx_signal(self, key: ChannelKey, signal_id: int, op, *, post_delay_ns: int = 0) -> int:
        f = self.fabric
        with f._lock:
            f._check_failure()
            txc = self._txc(key)
            wm = txc.watermark()
            msg = Signal(key, wm, signal_id, op)
            t = self._send_time(key, 0, "signal", wm, post_delay_ns)
            dst = f._endpoint(self.comm, key.dst)
            f._schedule((t, _DELIVER, self.comm, key.src, key.ctx, key.dst, txc.n_msgs),
                        lambda: dst._arrive(msg))
            return wm

    def _arrive(self, msg) -> None:
        self._inbox.append(msg)
        self.rx_progress()

    def rx_progress(self) -> int:
        """Apply every message whose delivery time has arrived."""
        f = self.fabric
        with f._lock:
            applied = 0
            inbox, self._inbox = self._inbox, []
            for msg in inbox:
                applied += 1
                if isinstance(msg, Put):
                    f._record("put", self.comm, msg.key, msg.seq)
                    ready = self._deliver_put(msg)
                    self._send_ack(msg)
                elif isinstance(msg, Signal):
                    f._record("signal", self.comm, msg.key, msg.watermark)
                    ready = self._deliver_signal(msg)
                else:
                    f._record("ack", self.comm, msg.key, msg.seq)
                    self._deliver_ack(msg)
                    continue
                for sig in ready:
                    f._record("apply", self.comm, sig.key, sig.watermark)
                    self._apply_signal(sig)
            return applied

    def _send_ack(self, put: Put) -> None:
        f = self.fabric
        key = put.key
        rng = self._ack_rngs.get(key)
        if rng is None:
            rng = self._ack_rngs[key] = random.Random(
                f"ack/{f.model.seed}/{self.comm}/{key.src}/{key.ctx}/{key.dst}")
        t = f._now + f.model.propagation_ns(rng)
        if f.delay_hook is not None:
            t += f.delay_hook("ack", key, put.seq) or 0
        sender = f._endpoint(self.comm, key.src)
        msg = Ack(key, put.seq)
        f._schedule((t, _ACK, self.comm, key.src, key.ctx, key.dst, put.seq), lambda: sender._arrive(msg))


class SimFabric:
    """Virtual-time transport and clock shared by all ranks of an in-process run."""

    transport = "inproc"
    virtual_time = True

    def __init__(self, model: LatencyModel = LatencyModel(), *, direct_capable: bool = True,
                 log_deliveries: bool = False, slice_s: float = 0.05):
        self.model = model
        self.direct_capable = direct_capable
        self.delay_hook: Optional[Callable[[str, ChannelKey, int], Optional[int]]] = None
        self.log: Optional[list] = [] if log_deliveries else None
        self._lock = threading.RLock()
        self._heap: list = []
        self._uid = itertools.count()
        self._timers = itertools.count()
        self._now = 0
        self._endpoints: Dict[Tuple[int, int], SimEndpoint] = {}
        self._waiters: List[_Waiter] = []
        self._agents = 0
        self._failure: Optional[BaseException] = None
        self._slice = slice_s
        self.events = 0

    # -- endpoints ---------------------------------------------------------
    def endpoint_open(self, rank: int, peers, *, comm: int = 0, n_contexts: int = 4,
                      n_signals: int = 256, reserved_signals: int = 0) -> SimEndpoint:
        with self._lock:
            if (comm, rank) in self._endpoints:
                raise DuplicateEndpoint(f"endpoint for rank {rank} (comm {comm}) already open")
            ep = SimEndpoint(self, rank, peers, comm=comm, n_contexts=n_contexts,
                             n_signals=n_signals, reserved_signals=reserved_signals)
            self._endpoints[comm, rank] = ep
            return ep

    def _endpoint(self, comm: int, rank: int) -> SimEndpoint:
        try:
            return self._endpoints[comm, rank]
        except KeyError:
            raise FabricFailure(f"no endpoint for rank {rank} (comm {comm})") from None

    # -- clock -------------------------------------------------------------
    def now(self) -> int:
        return self._now

    def _schedule(self, key: tuple, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (key, next(self._uid), fn))

    def call_at(self, t: int, fn: Callable[[], None] = lambda: None) -> None:
        with self._lock:
            self._schedule((max(t, self._now), _TIMER, next(self._timers)), fn)

    def sleep(self, ns: int, timeout: Optional[float] = None) -> None:
        """Block the calling agent for ``ns`` virtual nanoseconds."""
        with self._lock:
            target = self._now + ns
            self.call_at(target)
        self.wait_until(lambda: self._now >= target, timeout, what=f"sleep until {target}")

    def agent(self, key: Tuple[int, int], step: Callable[[], bool], name: str,
              repoll_ns: int = 0) -> SimAgent:
        return SimAgent(self, key, step, name, repoll_ns)

    def _record(self, kind: str, comm: int, key: ChannelKey, n: int) -> None:
        if self.log is not None:
            self.log.append((self._now, kind, comm, tuple(key), n))

    # -- agents ------------------------------------------------------------
    def attach(self, n: int = 1) -> None:
        """Declare ``n`` more agents that take part in clock advancement."""
        with self._lock:
            self._agents += n

    def detach(self) -> None:
        with self._lock:
            self._agents -= 1
            self._notify_all()

    def poke(self) -> None:
        """Wake waiters so they re-check their predicates after an external change."""
        with self._lock:
            self._notify_all()

    def abort(self, exc: BaseException) -> None:
        with self._lock:
            self._fail(exc)

    @property
    def failed(self) -> Optional[BaseException]:
        return self._failure

    def _notify_all(self):
        for w in self._waiters:
            w.cond.notify()

    def _fail(self, exc: BaseException) -> None:
        if self._failure is None:
            self._failure = exc
            log.debug("fabric failed: %r", exc)
        self._notify_all()

    def _check_failure(self):
        if self._failure is not None:
            raise FabricFailure(f"run aborted: {self._failure!r}") from self._failure

    # -- waiting -----------------------------------------------------------
    def wait_until(self, pred: Callable[[], bool], timeout: Optional[float] = None,
                   what: str = "condition") -> None:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            self._check_failure()
            if pred():
                return
            w = _Waiter(pred, threading.Condition(self._lock), what)
            self._waiters.append(w)
            try:
                while True:
                    self._check_failure()
                    w.ready = False
                    if pred():
                        return
                    blocked = sum(1 for x in self._waiters if not x.ready)
                    if blocked >= max(self._agents, 1):
                        self._drive()
                        continue
                    wait_s = self._slice
                    if deadline is not None:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0:
                            raise GinTimeout(f"timed out waiting for {what} (virtual t={self._now} ns)")
                        wait_s = min(wait_s, remaining)
                    w.cond.wait(wait_s)
            finally:
                self._waiters.remove(w)

    def _drive(self) -> None:
        """Advance the clock until at least one blocked waiter can proceed."""
        while True:
            ready = False
            for x in self._waiters:
                if x.ready:
                    continue
                try:
                    ok = x.pred()
                except Exception:
                    ok = True  # let the owner re-raise in its own thread
                if ok:
                    x.ready = True
                    x.cond.notify()
                    ready = True
            if ready:
                return
            if not self._heap:
                waiting = ", ".join(x.what for x in self._waiters)
                exc = Deadlock(f"all agents blocked with no pending events at t={self._now} ns: {waiting}")
                self._fail(exc)
                raise exc
            self._advance()

    def _advance(self) -> None:
        heap = self._heap
        t = heap[0][0][0]
        self._now = t
        try:
            while heap and heap[0][0][0] == t:
                _, _, fn = heapq.heappop(heap)
                self.events += 1
                fn()
        except Exception as exc:
            self._fail(exc)
            if isinstance(exc, FabricFailure):
                raise
            raise FabricFailure(f"run aborted: {exc!r}") from exc

    # -- single-threaded driving -------------------------------------------
    def step(self) -> bool:
        """Process the next batch of same-time events; False when idle."""
        with self._lock:
            self._check_failure()
            if not self._heap:
                return False
            self._advance()
            self._notify_all()
            return True

    def run_until_idle(self, max_batches: Optional[int] = None) -> int:
        n = 0
        while (max_batches is None or n < max_batches) and self.step():
            n += 1
        return n

    @property
    def pending_events(self) -> int:
        return len(self._heap)
