"""Unidirectional ring exchange.

Each round every rank puts its slice to its successor with a SignalInc,
waits for its predecessor's signal, resets it, checks the bytes, then
flushes and joins a barrier before the buffers are reused.
"""

from __future__ import annotations

import hashlib
from typing import Optional

import numpy as np

from ..core import SignalInc
from ..errors import UsageError, VerificationFailure
from ..runtime import GinConfig, comm_init, window_register


def pattern(rank: int, rnd: int, nbytes: int) -> bytes:
    """Bytes tagged by (rank, round) so a stale or misplaced slice is caught."""
    i = np.arange(nbytes, dtype=np.uint64)
    return ((i * 131 + rank * 7919 + rnd * 104729 + (i >> 8) * 17) & 0xFF).astype(np.uint8).tobytes()


def first_mismatch(got, expected) -> Optional[int]:
    a = np.frombuffer(got, dtype=np.uint8)
    b = np.frombuffer(expected, dtype=np.uint8)
    bad = np.flatnonzero(a != b)
    return int(bad[0]) if bad.size else None


def state_digest(comm, *buffers) -> str:
    h = hashlib.sha256()
    for b in buffers:
        h.update(bytes(b))
    h.update(repr(comm.signals.snapshot()[: comm.config.n_signals]).encode())
    h.update(repr(comm.counters.snapshot()).encode())
    return h.hexdigest()


def ring_rank(bootstrap, *, nbytes: int = 1024, rounds: int = 1, config: Optional[GinConfig] = None,
              close: bool = True) -> dict:
    comm = comm_init(bootstrap, config)
    n, r = comm.size, comm.rank
    if n < 2:
        raise UsageError("the ring needs at least 2 ranks")
    send = bytearray(n * nbytes)
    recv = bytearray(n * nbytes)
    w_send = window_register(comm, send)
    w_recv = window_register(comm, recv)
    world = comm.world
    gin = comm.gin(0)
    bar = gin.barrier_session(world, 0)
    succ, pred = (r + 1) % n, (r - 1) % n
    for k in range(rounds):
        send[succ * nbytes:(succ + 1) * nbytes] = pattern(r, k, nbytes)
        gin.put(world, succ, w_recv, r * nbytes, w_send, succ * nbytes, nbytes, SignalInc(0))
        gin.wait_signal(0, 1)
        gin.reset_signal(0)
        got = recv[pred * nbytes:(pred + 1) * nbytes]
        bad = first_mismatch(got, pattern(pred, k, nbytes))
        if bad is not None:
            raise VerificationFailure(
                f"rank {r} round {k}: byte {pred * nbytes + bad} of the receive window differs")
        gin.flush()
        bar.sync()
    out = {"rank": r, "rounds": rounds, "backend": comm.backend,
           "digest": state_digest(comm, recv), "t_ns": comm.clock.now()}
    if close:
        comm.close()
    return out


def run_ring(ranks: int, nbytes: int = 1024, rounds: int = 1, *, backend: str = "auto",
             transport: str = "inproc", model=None, processes: bool = False) -> list:
    from ..fabric.model import LatencyModel
    from .launch import launch
    from .programs import RankProgram

    prog = RankProgram("ring", {"nbytes": nbytes, "rounds": rounds, "backend": backend})
    return launch(ranks, prog, transport=transport, min_ranks=2, model=model or LatencyModel(),
                  processes=processes)
