"""Control plane: allgather and endpoint creation for each transport.

Every collective call made through a bootstrap is matched by position:
the k-th call on one rank pairs with the k-th call on every other rank.
Each contribution carries a tag, and differing tags mean the ranks made
different collective calls (``RegistrationMismatch``).

In-process runs share one registry; socket runs talk to a rendezvous
server hosted for rank 0, exchanging JSON blobs in Control frames.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from typing import Dict, List, Optional, Tuple

from ..errors import BootstrapTimeout, FabricFailure, GinTimeout, RegistrationMismatch
from ..fabric import wire
from ..fabric.sim import SimFabric
from ..fabric.sockets import SocketEndpoint, WallClock


def _check_tags(rank: int, tag: str, tags: List[str]) -> None:
    if any(t != tag for t in tags):
        raise RegistrationMismatch(f"rank {rank} called {tag!r} but ranks called {tags}")


class _Bootstrap:
    rank: int
    size: int
    clock: object

    def __init__(self):
        self._comm_ids = 0

    def next_comm_id(self) -> int:
        cid = self._comm_ids
        self._comm_ids += 1
        return cid

    def allgather(self, tag: str, obj) -> list:
        raise NotImplementedError

    def open_endpoint(self, *, comm: int, n_contexts: int, n_signals: int, reserved_signals: int):
        raise NotImplementedError

    def close(self) -> None:
        pass


# -- in-process ----------------------------------------------------------------
class InprocWorld:
    """Shared registry for ``size`` ranks living in one process on one :class:`SimFabric`."""

    def __init__(self, size: int, fabric: SimFabric, timeout_s: float = 30.0):
        if size < 1:
            raise ValueError("world size must be positive")
        self.size = size
        self.fabric = fabric
        self.timeout_s = timeout_s
        self._rounds: Dict[int, list] = {}

    def bootstrap(self, rank: int) -> "InprocBootstrap":
        if not 0 <= rank < self.size:
            raise ValueError(f"rank {rank} outside world of {self.size}")
        return InprocBootstrap(self, rank)


class InprocBootstrap(_Bootstrap):
    def __init__(self, world: InprocWorld, rank: int):
        super().__init__()
        self.world = world
        self.rank = rank
        self.size = world.size
        self.clock = world.fabric
        self._calls = 0

    def allgather(self, tag: str, obj) -> list:
        w = self.world
        f = w.fabric
        k = self._calls
        self._calls += 1
        with f._lock:
            slot = w._rounds.get(k)
            if slot is None:
                slot = w._rounds[k] = [[None] * w.size, [None] * w.size, 0]
            slot[0][self.rank] = tag
            slot[1][self.rank] = obj
            slot[2] += 1
            f.poke()
        try:
            f.wait_until(lambda: slot[2] == w.size, w.timeout_s, what=f"allgather {tag!r} #{k}")
        except GinTimeout as exc:
            raise BootstrapTimeout(str(exc)) from None
        tags, objs = slot[0], slot[1]
        _check_tags(self.rank, tag, tags)
        return list(objs)

    def open_endpoint(self, *, comm, n_contexts, n_signals, reserved_signals):
        ep = self.world.fabric.endpoint_open(
            self.rank, range(self.size), comm=comm, n_contexts=n_contexts,
            n_signals=n_signals, reserved_signals=reserved_signals)
        # nobody may post until every peer's endpoint exists
        self.allgather(f"open/{comm}", self.rank)
        return ep


# -- sockets -------------------------------------------------------------------
def _recv_frame(sock: socket.socket, reader: wire.FrameReader, backlog: list):
    while not backlog:
        data = sock.recv(65536)
        if not data:
            raise ConnectionError("control connection closed")
        backlog.extend(reader.feed(data))
    return backlog.pop(0)


class RendezvousServer:
    """Matches collective calls from ``size`` ranks and broadcasts the results."""

    def __init__(self, size: int, host: str = "127.0.0.1", sock: Optional[socket.socket] = None,
                 timeout_s: float = 30.0):
        self.size = size
        self.timeout_s = timeout_s
        self.sock = sock or socket.create_server((host, 0), backlog=size + 1)
        self.address: Tuple[str, int] = self.sock.getsockname()[:2]
        self.error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._serve, name="rendezvous", daemon=True)

    def start(self) -> "RendezvousServer":
        self._thread.start()
        return self

    def _serve(self):
        conns: Dict[int, tuple] = {}
        try:
            self.sock.settimeout(self.timeout_s)
            while len(conns) < self.size:
                s, _ = self.sock.accept()
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                s.settimeout(None)
                reader, backlog = wire.FrameReader(0), []
                hello = _recv_frame(s, reader, backlog)
                conns[hello.src] = (s, reader, backlog)
            while True:
                msgs = []
                for r in range(self.size):
                    s, reader, backlog = conns[r]
                    msgs.append(json.loads(_recv_frame(s, reader, backlog).blob))
                reply = json.dumps({"tags": [m["tag"] for m in msgs], "data": [m["data"] for m in msgs]})
                out = wire.encode_control(0, reply.encode())
                for r in range(self.size):
                    conns[r][0].sendall(out)
                if all(m["tag"] == "bye" for m in msgs):
                    return
        except (OSError, ConnectionError) as exc:
            self.error = exc
        finally:
            for s, _, _ in conns.values():
                s.close()
            self.sock.close()

    def join(self, timeout: Optional[float] = None) -> None:
        self._thread.join(timeout)


class SocketBootstrap(_Bootstrap):
    def __init__(self, rank: int, size: int, address: Tuple[str, int], clock: Optional[WallClock] = None,
                 *, timeout_s: float = 30.0):
        super().__init__()
        self.rank = rank
        self.size = size
        self.clock = clock or WallClock()
        self.host = address[0]
        self.timeout_s = timeout_s
        deadline = time.monotonic() + timeout_s
        while True:
            try:
                self._sock = socket.create_connection(tuple(address), timeout=timeout_s)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise BootstrapTimeout(f"rank {rank}: rendezvous at {address} unreachable") from None
                time.sleep(0.05)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = wire.FrameReader(rank)
        self._backlog: list = []
        self._sock.sendall(wire.encode_control(rank, b"hello"))
        self._closed = False

    def allgather(self, tag: str, obj) -> list:
        self.clock._check_failure()
        self._sock.sendall(wire.encode_control(self.rank, json.dumps({"tag": tag, "data": obj}).encode()))
        try:
            frame = _recv_frame(self._sock, self._reader, self._backlog)
        except socket.timeout:
            raise BootstrapTimeout(f"rank {self.rank}: allgather {tag!r} timed out") from None
        except (OSError, ConnectionError) as exc:
            raise FabricFailure(f"rank {self.rank}: control plane lost during {tag!r}") from exc
        reply = json.loads(frame.blob)
        _check_tags(self.rank, tag, reply["tags"])
        return reply["data"]

    def open_endpoint(self, *, comm, n_contexts, n_signals, reserved_signals):
        return SocketEndpoint(self.clock, self.rank, range(self.size), self.allgather, comm=comm,
                              host=self.host, connect_timeout=self.timeout_s, n_contexts=n_contexts,
                              n_signals=n_signals, reserved_signals=reserved_signals)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.allgather("bye", None)
        finally:
            self._sock.close()
