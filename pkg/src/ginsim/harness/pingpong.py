"""Put-with-signal latency and streaming bandwidth between two ranks.

Times come from the communicator's clock: virtual nanoseconds on the
simulated fabric, monotonic wall nanoseconds over sockets.
"""

from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..core import SignalInc
from ..errors import UsageError
from ..fabric.model import LatencyModel
from ..runtime import GinConfig, comm_init, window_register
from .launch import launch
from .programs import RankProgram

CSV_HEADER = ["size_bytes", "iters", "p50_ns", "p99_ns", "mean_ns", "backend", "transport", "seed"]


def parse_sizes(spec: str) -> List[int]:
    """``"4:4194304"`` doubles from 4 up to 4 MiB; ``"8,64,512"`` lists sizes."""
    if ":" in spec:
        lo, hi = (int(x) for x in spec.split(":"))
        if lo <= 0 or hi < lo:
            raise UsageError(f"bad size range {spec!r}")
        out = []
        s = lo
        while s <= hi:
            out.append(s)
            s *= 2
        return out
    out = sorted(int(x) for x in spec.split(",") if x)
    if not out or out[0] < 0:
        raise UsageError(f"bad size list {spec!r}")
    return out


@dataclass
class BenchConfig:
    ranks: int = 2
    backend: str = "direct"
    sizes: Sequence[int] = field(default_factory=lambda: parse_sizes("4:4194304"))
    iters: int = 100
    warmup: int = 10
    seed: int = 0
    model: LatencyModel = LatencyModel()
    transport: str = "inproc"
    csv_path: Optional[str] = None
    processes: bool = False  # socket transport: one child process per rank

    def __post_init__(self):
        self.sizes = list(self.sizes)
        if self.sizes != sorted(self.sizes):
            raise UsageError("sizes must be ascending")
        if self.iters <= self.warmup:
            raise UsageError("iters must exceed warmup")
        if self.ranks != 2:
            raise UsageError("ping-pong runs on exactly 2 ranks")


def _stats(samples: Sequence[int]) -> tuple:
    a = np.asarray(samples, dtype=np.float64)
    return int(np.percentile(a, 50)), int(np.percentile(a, 99)), float(a.mean())


def pingpong_rank(bootstrap, *, sizes: Sequence[int], iters: int, warmup: int, backend: str,
                  burst: int = 1) -> list:
    """Rank 0 puts ``burst`` signalled messages and waits for one reply; rank 1 echoes.

    With ``burst == 1`` this is a round-trip latency test; larger bursts
    measure streaming time per message.
    """
    comm = comm_init(bootstrap, GinConfig(backend=backend))
    if comm.size != 2:
        raise UsageError("ping-pong runs on exactly 2 ranks")
    cap = max(max(sizes), 1)
    src = bytearray(cap)
    dst = bytearray(cap)
    w_src = window_register(comm, src)
    w_dst = window_register(comm, dst)
    gin = comm.gin(0)
    world = comm.world
    me, peer = comm.rank, 1 - comm.rank
    clock = comm.clock
    rows = []
    seen = 0  # signal 0 is cumulative, never reset
    for size in sizes:
        samples = []
        for i in range(iters):
            if me == 0:
                t0 = clock.now()
                for _ in range(burst):
                    gin.put(world, peer, w_dst, 0, w_src, 0, size, SignalInc(0))
                seen += 1
                gin.wait_signal(0, seen)
                if i >= warmup:
                    samples.append((clock.now() - t0) // burst)
            else:
                seen += burst
                gin.wait_signal(0, seen)
                gin.put(world, peer, w_dst, 0, w_src, 0, size, SignalInc(0))
        gin.flush()
        if me == 0:
            rows.append([size, len(samples), *_stats(samples)])
    comm.close()
    return rows


def _run(cfg: BenchConfig, burst: int) -> List[list]:
    rows = []
    if cfg.transport == "inproc":
        # every size is its own run on a fresh fabric with the same seed, so all
        # sizes see the same jitter draws and differ only in size-driven delay
        for size in cfg.sizes:
            prog = functools.partial(pingpong_rank, sizes=[size], iters=cfg.iters, warmup=cfg.warmup,
                                     backend=cfg.backend, burst=burst)
            rows += launch(2, prog, transport="inproc", model=cfg.model)[0]
    else:
        prog = RankProgram("pingpong", {"sizes": cfg.sizes, "iters": cfg.iters, "warmup": cfg.warmup,
                                        "backend": cfg.backend, "burst": burst})
        rows = launch(2, prog, transport="socket", processes=cfg.processes)[0]
    return [[*r, cfg.backend, cfg.transport, cfg.model.seed] for r in rows]


def run_pingpong(cfg: BenchConfig) -> List[list]:
    rows = _run(cfg, 1)
    if cfg.csv_path:
        write_csv(cfg.csv_path, rows)
    return rows


def run_bw(cfg: BenchConfig, burst: int = 16) -> List[list]:
    rows = _run(cfg, burst)
    if cfg.csv_path:
        write_csv(cfg.csv_path, rows)
    return rows


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r[0], r[1], r[2], r[3], f"{r[4]:.1f}", *r[5:]])
    return buf.getvalue()


def write_csv(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows))
