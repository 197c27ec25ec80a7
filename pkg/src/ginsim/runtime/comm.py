"""Device communicator: contexts, windows, teams and backend selection."""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence

from ..core import CounterTable, Team, Window, as_bytes_view
from ..errors import ConfigMismatch, InvalidContext, RankOutOfRange, RegistrationMismatch
from ..fabric.sim import SimFabric
from ..plugin import DIRECT, PROXY, NetPlugin
from ..proxy import ProxyBackend
from .config import GinConfig


def barrier_steps(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


def resolve_backend(config: GinConfig, clock) -> str:
    if config.backend != "auto":
        return config.backend
    return DIRECT if getattr(clock, "direct_capable", True) else PROXY


class DevComm:
    """One rank's handle on a communicator.

    Signal cells live in the endpoint (remote-visible); counters are local.
    ``n_signals`` user cells are followed by cells reserved for barriers.
    """

    def __init__(self, comm_id: int, rank: int, size: int, config: GinConfig, backend: str, clock,
                 endpoint, bootstrap=None):
        self.id = comm_id
        self.rank = rank
        self.size = size
        self.config = config
        self.backend = backend
        self.clock = clock
        self.endpoint = endpoint
        self.bootstrap = bootstrap
        self.counters = CounterTable(config.n_counters)
        self.windows: Dict[int, Window] = endpoint.windows
        self.teams: Dict[int, Team] = {0: Team.world(size)}
        self.barrier_rounds: Dict[tuple, int] = {}
        self.barrier_stride = max(barrier_steps(size), 1)
        self.plugin = NetPlugin(endpoint, backend)
        self.proxy: Optional[ProxyBackend] = None
        self.contexts: List = []
        if backend == PROXY:
            self.proxy = ProxyBackend(self, endpoint, self.plugin, queue_depth=config.queue_depth)
        else:
            self.contexts = [self.plugin.create_context(self, c) for c in range(config.n_contexts)]
        self._closed = False

    @property
    def n_contexts(self) -> int:
        return self.config.n_contexts

    @property
    def signals(self):
        return self.endpoint.signals

    def team(self, team_id: int) -> Team:
        try:
            return self.teams[team_id]
        except KeyError:
            raise RankOutOfRange(f"team {team_id} is not defined on this communicator") from None

    @property
    def world(self) -> Team:
        return self.teams[0]

    def gin(self, ctx: int = 0):
        from .gin import Gin

        return Gin(self, ctx)

    def check_context(self, ctx: int) -> None:
        if not 0 <= ctx < self.config.n_contexts:
            raise InvalidContext(f"context {ctx} outside [0, {self.config.n_contexts})")

    def poll(self) -> None:
        """Retire direct-path completions (no-op on the proxy path, whose agent does it)."""
        for dctx in self.contexts:
            dctx.poll()

    def _install_window(self, wid: int, sizes: Sequence[int], view: memoryview) -> Window:
        w = Window(wid, self.rank, tuple(sizes), view)
        self.endpoint.register_window(w)
        if self.proxy is not None:
            self.proxy.register(w)
        else:
            self.plugin.reg_mr(w)
        return w

    def _install_team(self, start: int, count: int) -> Team:
        tid = len(self.teams)
        t = self.teams[tid] = Team(tid, tuple(range(start, start + count)))
        return t

    def flush_all(self) -> None:
        for c in range(self.config.n_contexts):
            self.gin(c).flush()

    def close(self) -> None:
        """Collective: drain local work, wait for every rank, then tear down."""
        if self._closed:
            return
        self.flush_all()
        if self.bootstrap is not None:
            self.bootstrap.allgather(f"fin/{self.id}", self.rank)
        self._closed = True
        if self.proxy is not None:
            self.proxy.stop()
        close = getattr(self.endpoint, "close", None)
        if close is not None:
            close()

    def __repr__(self):
        return f"DevComm(id={self.id}, rank={self.rank}/{self.size}, backend={self.backend})"


def _reserved(config: GinConfig, size: int) -> int:
    return config.barrier_slots * max(barrier_steps(size), 1)


def comm_init(bootstrap, config: Optional[GinConfig] = None) -> DevComm:
    """Collectively create a communicator over every rank of ``bootstrap``."""
    config = config or GinConfig.from_env()
    view = config.collective_view()
    views = bootstrap.allgather("comm_init", view)
    for r, v in enumerate(views):
        if v != view:
            diff = sorted(k for k in view if v.get(k) != view.get(k))
            raise ConfigMismatch(f"rank {r} disagrees with rank {bootstrap.rank} on {', '.join(diff)}")
    clock = bootstrap.clock
    backend = resolve_backend(config, clock)
    cid = bootstrap.next_comm_id()
    ep = bootstrap.open_endpoint(comm=cid, n_contexts=config.n_contexts, n_signals=config.n_signals,
                                 reserved_signals=_reserved(config, bootstrap.size))
    return DevComm(cid, bootstrap.rank, bootstrap.size, config, backend, clock, ep, bootstrap)


def window_register(comm: DevComm, buffer) -> Window:
    """Collectively register ``buffer``; sizes may differ across ranks."""
    view = as_bytes_view(buffer)
    wid = len(comm.windows)
    # expose the local region before the exchange: a peer may return from
    # the allgather and put into it before this rank does
    sizes = [0] * comm.size
    sizes[comm.rank] = view.nbytes
    w = comm._install_window(wid, sizes, view)
    got = comm.bootstrap.allgather(f"window/{comm.id}", [wid, view.nbytes])
    if any(g[0] != wid for g in got):
        raise RegistrationMismatch(f"ranks disagree on window ids: {[g[0] for g in got]}")
    w.sizes = tuple(g[1] for g in got)
    return w


def team_create(comm: DevComm, start: int, count: int) -> Team:
    """Collectively define the contiguous team ``[start, start + count)``."""
    if count < 1 or start < 0 or start + count > comm.size:
        raise RankOutOfRange(f"team [{start}, {start + count}) outside world of {comm.size}")
    got = comm.bootstrap.allgather(f"team/{comm.id}", [start, count])
    if any(g != [start, count] for g in got):
        raise ConfigMismatch(f"ranks disagree on team bounds: {got}")
    return comm._install_team(start, count)


def pool_select(channel_id: int, n_contexts: int = 4) -> tuple:
    """Map a logical channel onto ``(communicator index, context index)``."""
    if channel_id < 0:
        raise ValueError("channel id must be non-negative")
    return divmod(channel_id, n_contexts)


# -- single-threaded worlds ------------------------------------------------------
class LocalWorld:
    """All ranks of a communicator built in one thread on a shared :class:`SimFabric`.

    Nothing here blocks during setup, so a test can drive every rank from a
    single thread and let waits advance the virtual clock.
    """

    def __init__(self, size: int, fabric: Optional[SimFabric] = None, config: Optional[GinConfig] = None,
                 comm_id: int = 0):
        self.fabric = fabric or SimFabric()
        self.config = config or GinConfig()
        backend = resolve_backend(self.config, self.fabric)
        self.comms = [
            DevComm(comm_id, r, size, self.config, backend, self.fabric,
                    self.fabric.endpoint_open(r, range(size), comm=comm_id, n_contexts=self.config.n_contexts,
                                              n_signals=self.config.n_signals,
                                              reserved_signals=_reserved(self.config, size)))
            for r in range(size)
        ]

    def __getitem__(self, rank: int) -> DevComm:
        return self.comms[rank]

    def __len__(self):
        return len(self.comms)

    def register(self, buffers: Sequence) -> List[Window]:
        views = [as_bytes_view(b) for b in buffers]
        sizes = [v.nbytes for v in views]
        wid = len(self.comms[0].windows)
        return [c._install_window(wid, sizes, v) for c, v in zip(self.comms, views)]

    def team(self, start: int, count: int) -> List[Team]:
        return [c._install_team(start, count) for c in self.comms]
