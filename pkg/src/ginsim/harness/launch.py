"""Run a per-rank program across a world of ranks.

``program(bootstrap) -> result`` is called once per rank. In-process runs
use one thread per rank on a shared :class:`SimFabric`; socket runs use
loopback TCP, either with rank threads in this process or with one child
process per rank.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
import sys
import threading
from typing import Callable, List, Optional

from ..errors import BootstrapTimeout, ChildFailure, FabricFailure, UsageError
from ..fabric.model import LatencyModel
from ..fabric.sim import SimFabric
from ..fabric.sockets import WallClock
from ..runtime.bootstrap import InprocWorld, RendezvousServer, SocketBootstrap

log = logging.getLogger(__name__)

TRANSPORTS = ("inproc", "socket")

Program = Callable[[object], object]


def _root_cause(errors: List[Optional[BaseException]], failed: Optional[BaseException]):
    """Prefer the error that started the abort over the ones it caused."""
    if failed is not None and any(e is failed for e in errors):
        return failed
    for e in errors:
        if e is not None and not isinstance(e, FabricFailure):
            return e
    return next((e for e in errors if e is not None), failed)


def run_inproc(size: int, program: Program, *, model: LatencyModel = LatencyModel(),
               fabric: Optional[SimFabric] = None, direct_capable: bool = True,
               timeout_s: float = 30.0) -> list:
    fabric = fabric or SimFabric(model, direct_capable=direct_capable)
    world = InprocWorld(size, fabric, timeout_s)
    results: list = [None] * size
    errors: List[Optional[BaseException]] = [None] * size
    fabric.attach(size)

    def body(rank: int):
        try:
            results[rank] = program(world.bootstrap(rank))
        except BaseException as exc:  # noqa: BLE001 - reported below
            errors[rank] = exc
            fabric.abort(exc)
        finally:
            fabric.detach()

    threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}", daemon=True) for r in range(size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if any(errors):
        raise _root_cause(errors, fabric.failed)
    return results


def run_socket_threads(size: int, program: Program, *, timeout_s: float = 30.0) -> list:
    server = RendezvousServer(size, timeout_s=timeout_s).start()
    clock = WallClock()
    results: list = [None] * size
    errors: List[Optional[BaseException]] = [None] * size
    boots: List[Optional[SocketBootstrap]] = [None] * size
    lock = threading.Lock()

    def abort(exc):
        clock.abort(exc)
        with lock:
            for b in boots:
                if b is not None:
                    b._sock.close()

    def body(rank: int):
        try:
            bs = SocketBootstrap(rank, size, server.address, clock, timeout_s=timeout_s)
            with lock:
                boots[rank] = bs
            results[rank] = program(bs)
            bs.close()
        except BaseException as exc:  # noqa: BLE001
            errors[rank] = exc
            abort(exc)

    threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}", daemon=True) for r in range(size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server.join(5)
    if any(errors):
        raise _root_cause(errors, clock.failed)
    return results


def run_socket_processes(size: int, program_name: str, params: dict, *, timeout_s: float = 30.0) -> list:
    """One child per rank running ``python -m ginsim _rank``; results come back as JSON."""
    server = RendezvousServer(size, timeout_s=timeout_s).start()
    host, port = server.address
    env = dict(os.environ)
    procs = []
    for r in range(size):
        cmd = [sys.executable, "-m", "ginsim", "_rank", "--rank", str(r), "--size", str(size),
               "--addr", f"{host}:{port}", "--program", program_name, "--params", json.dumps(params),
               "--timeout", str(timeout_s)]
        procs.append(subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, env=env, text=True))
    results, failures = [], []
    for r, p in enumerate(procs):
        try:
            out, err = p.communicate(timeout=timeout_s * 4)
        except subprocess.TimeoutExpired:
            for q in procs:
                q.kill()
            raise BootstrapTimeout(f"rank {r} did not finish") from None
        if p.returncode != 0:
            failures.append(f"rank {r} exited {p.returncode}: {err.strip().splitlines()[-1] if err.strip() else ''}")
            results.append(None)
        else:
            results.append(json.loads(out.strip().splitlines()[-1]))
    server.join(5)
    if failures:
        raise ChildFailure("; ".join(failures))
    return results


def launch(size: int, program: Program, *, transport: str = "inproc", min_ranks: int = 1,
           model: LatencyModel = LatencyModel(), timeout_s: float = 30.0, processes: bool = False,
           **kw) -> list:
    """Run ``program`` on ``size`` ranks.

    ``processes`` (socket transport only) gives each rank its own child
    process; ``program`` must then be a named :class:`RankProgram`.
    """
    if transport not in TRANSPORTS:
        raise UsageError(f"transport must be one of {TRANSPORTS}")
    if size < min_ranks:
        raise UsageError(f"program needs at least {min_ranks} ranks, got {size}")
    if transport == "inproc":
        return run_inproc(size, program, model=model, timeout_s=timeout_s, **kw)
    if processes:
        name, params = getattr(program, "name", None), getattr(program, "params", None)
        if name is None:
            raise UsageError("process mode needs a named program")
        return run_socket_processes(size, name, params, timeout_s=timeout_s)
    return run_socket_threads(size, program, timeout_s=timeout_s)
