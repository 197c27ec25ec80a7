"""Loopback TCP transport speaking the GIN1 frame format.

One connection per rank pair carries every context in both directions, so
frames are FIFO per connection and only cross-peer reordering occurs. A
receiver thread per endpoint plays the NIC: it places payloads, applies
signals and queues acks, which a separate writer thread sends so that the
receiver never blocks on a full socket buffer.
"""

from __future__ import annotations

import logging
import queue
import selectors
import socket
import threading
import time
from typing import Callable, Dict, Optional, Tuple

from ..agents import acting_as
from ..errors import BootstrapTimeout, FabricFailure, GinTimeout
from . import wire
from .channel import Endpoint
from .model import Ack, ChannelKey, Put, Signal

log = logging.getLogger(__name__)

_HELLO = b"hello"


class ThreadAgent:
    """Progress agent running on its own thread, woken by kicks or a short backoff."""

    def __init__(self, clock: "WallClock", step: Callable[[], bool], name: str, idle_s: float = 0.02):
        self.clock = clock
        self.step = step
        self.name = name
        self.idle_s = idle_s
        self.steps = 0
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._thread.start()

    def kick(self, delay_ns: int = 0) -> None:
        self._wake.set()

    def _run(self):
        try:
            with acting_as(self.name):
                while not self._stop.is_set():
                    # clear before stepping so a kick that lands mid-step is not lost
                    self._wake.clear()
                    self.steps += 1
                    if self.step():
                        continue
                    self._wake.wait(self.idle_s)
        except BaseException as exc:  # noqa: BLE001 - surfaced through the clock
            self.clock.abort(exc)

    def stop(self):
        self._stop.set()
        self._wake.set()
        if threading.current_thread() is not self._thread:
            self._thread.join(timeout=5)


class WallClock:
    """Blocking/waiting policy for real transports: poll with bounded backoff."""

    transport = "socket"
    virtual_time = False

    def __init__(self, *, direct_capable: bool = True, max_backoff_s: float = 0.0005):
        self.direct_capable = direct_capable
        self.max_backoff_s = max_backoff_s
        self._failure: Optional[BaseException] = None

    def now(self) -> int:
        return time.monotonic_ns()

    def _check_failure(self):
        if self._failure is not None:
            raise FabricFailure(f"run aborted: {self._failure!r}") from self._failure

    def wait_until(self, pred: Callable[[], bool], timeout: Optional[float] = None,
                   what: str = "condition") -> None:
        deadline = None if timeout is None else time.monotonic() + timeout
        delay = 0.0
        spins = 0
        while True:
            self._check_failure()
            if pred():
                return
            if deadline is not None and time.monotonic() > deadline:
                raise GinTimeout(f"timed out waiting for {what}")
            spins += 1
            if spins > 20:
                delay = min(self.max_backoff_s, max(delay * 2, 2e-5))
            time.sleep(delay)

    def sleep(self, ns: int, timeout: Optional[float] = None) -> None:
        time.sleep(ns / 1e9)

    def agent(self, key, step, name, repoll_ns: int = 0) -> ThreadAgent:
        return ThreadAgent(self, step, name)

    def poke(self):
        pass

    def attach(self, n: int = 1):
        pass

    def detach(self):
        pass

    def abort(self, exc: BaseException) -> None:
        if self._failure is None:
            self._failure = exc

    @property
    def failed(self):
        return self._failure


def _tune(sock: socket.socket) -> None:
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class SocketEndpoint(Endpoint):
    def __init__(self, clock: WallClock, rank: int, peers, allgather: Callable[[str, object], list],
                 *, comm: int = 0, host: str = "127.0.0.1", connect_timeout: float = 30.0, **kw):
        super().__init__(rank, peers, comm=comm, **kw)
        self.clock = clock
        self._rx_lock = threading.RLock()
        self._tx_locks: Dict[int, threading.Lock] = {p: threading.Lock() for p in (*self.peers, rank)}
        self._socks: Dict[int, socket.socket] = {}
        self._readers: Dict[int, wire.FrameReader] = {}
        self._acks: "queue.SimpleQueue[Optional[Tuple[int, bytes]]]" = queue.SimpleQueue()
        self._closing = False
        self._pending_early: list = []

        listener = socket.create_server((host, 0), backlog=max(len(self.peers), 1) + 1)
        try:
            port = listener.getsockname()[1]
            ports = allgather(f"ep/{comm}", port)
            self._connect(listener, host, ports, connect_timeout)
        finally:
            listener.close()

        self._sel = selectors.DefaultSelector()
        for peer, sock in self._socks.items():
            sock.setblocking(False)
            self._sel.register(sock, selectors.EVENT_READ, peer)
        self._rx_thread = threading.Thread(target=self._rx_loop, name=f"nic-c{comm}-r{rank}", daemon=True)
        self._ack_thread = threading.Thread(target=self._ack_loop, name=f"ackw-c{comm}-r{rank}", daemon=True)
        self._rx_thread.start()
        self._ack_thread.start()

    # -- connection setup --------------------------------------------------
    def _connect(self, listener, host, ports, timeout):
        deadline = time.monotonic() + timeout
        for peer in self.peers:
            if peer > self.rank:
                s = socket.create_connection((host, ports[peer]), timeout=timeout)
                _tune(s)
                s.sendall(wire.encode_control(self.rank, _HELLO + b":%d" % self.comm))
                self._socks[peer] = s
                self._readers[peer] = wire.FrameReader(self.rank)
        expected = [p for p in self.peers if p < self.rank]
        while len(self._socks) < len(self.peers):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BootstrapTimeout(f"rank {self.rank}: peers {expected} did not connect")
            listener.settimeout(remaining)
            try:
                s, _ = listener.accept()
            except socket.timeout:
                continue
            _tune(s)
            s.settimeout(remaining)
            reader = wire.FrameReader(self.rank)
            frames = []
            while not frames:
                data = s.recv(65536)
                if not data:
                    raise BootstrapTimeout("peer closed during handshake")
                frames = reader.feed(data)
            hello = frames[0]
            if not isinstance(hello, wire.Control) or not hello.blob.startswith(_HELLO):
                raise BootstrapTimeout("bad handshake frame")
            s.settimeout(None)
            self._socks[hello.src] = s
            self._readers[hello.src] = reader
            for f in frames[1:]:
                self._pending_early.append((hello.src, f))

    # -- transmit ----------------------------------------------------------
    def _send_blocking(self, peer: int, data: bytes) -> None:
        # sockets are non-blocking for the selector; sendall on them may raise
        # partway, so push the remainder manually
        sock = self._socks[peer]
        view = memoryview(data)
        while view:
            try:
                n = sock.send(view)
                view = view[n:]
            except (BlockingIOError, InterruptedError):
                time.sleep(0)

    def tx_put(self, key: ChannelKey, dst_window: int, dst_offset: int, payload: bytes,
               *, post_delay_ns: int = 0) -> int:
        self.clock._check_failure()
        txc = self._txc(key)
        with self._tx_locks[key.dst]:
            seq = txc.take_seq()
            msg = Put(key, seq, dst_window, dst_offset, bytes(payload))
            if key.dst == self.rank:
                self._loopback(msg)
            else:
                self._send_blocking(key.dst, wire.encode_put(msg))
        return seq

    def tx_signal(self, key: ChannelKey, signal_id: int, op, *, post_delay_ns: int = 0) -> int:
        self.clock._check_failure()
        txc = self._txc(key)
        with self._tx_locks[key.dst]:
            wm = txc.watermark()
            msg = Signal(key, wm, signal_id, op)
            if key.dst == self.rank:
                self._loopback(msg)
            else:
                self._send_blocking(key.dst, wire.encode_signal(msg))
        return wm

    def _loopback(self, msg) -> None:
        with self._rx_lock:
            self._handle(msg, self.rank)

    # -- receive -----------------------------------------------------------
    def _handle(self, msg, peer: int) -> None:
        if isinstance(msg, Put):
            ready = self._deliver_put(msg)
            if peer == self.rank:
                self._deliver_ack(Ack(msg.key, msg.seq))
            else:
                self._acks.put((peer, wire.encode_ack(self.rank, msg.key.ctx, msg.seq)))
        elif isinstance(msg, Signal):
            ready = self._deliver_signal(msg)
        elif isinstance(msg, Ack):
            self._deliver_ack(msg)
            return
        else:
            return
        for sig in ready:
            self._apply_signal(sig)

    def rx_progress(self, timeout: float = 0.0) -> int:
        """Apply whatever frames are readable within ``timeout`` seconds."""
        applied = 0
        with self._rx_lock:
            if self._pending_early:
                early, self._pending_early = self._pending_early, []
                for peer, f in early:
                    self._handle(f, peer)
                    applied += 1
            for sk, _ in self._sel.select(timeout):
                peer = sk.data
                try:
                    data = sk.fileobj.recv(1 << 20)
                except (BlockingIOError, InterruptedError):
                    continue
                except OSError:
                    data = b""
                if not data:
                    self._sel.unregister(sk.fileobj)
                    continue
                for f in self._readers[peer].feed(data):
                    self._handle(f, peer)
                    applied += 1
        return applied

    def _rx_loop(self):
        try:
            while not self._closing:
                if not self._sel.get_map():
                    time.sleep(0.01)
                    continue
                self.rx_progress(0.05)
        except BaseException as exc:  # noqa: BLE001
            if not self._closing:
                log.exception("receiver for rank %d failed", self.rank)
                self.clock.abort(exc)

    def _ack_loop(self):
        try:
            while True:
                item = self._acks.get()
                if item is None:
                    return
                peer, data = item
                with self._tx_locks[peer]:
                    self._send_blocking(peer, data)
        except BaseException as exc:  # noqa: BLE001
            if not self._closing:
                self.clock.abort(exc)

    def close(self) -> None:
        self._closing = True
        self._acks.put(None)
        self._ack_thread.join(timeout=5)
        self._rx_thread.join(timeout=5)
        for s in self._socks.values():
            try:
                s.close()
            except OSError:
                pass
        self._sel.close()
