"""``ginsim`` command line: benchmarks, demos and the per-rank child entry point.

Flags win over ``GINSIM_*`` environment variables, which win over defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from ..errors import GinError, UsageError
from ..runtime.config import GinConfig, latency_from_env
from .moe_ht import run_moe_ht
from .moe_ll import MoeConfig, run_moe_ll
from .pingpong import BenchConfig, format_csv, parse_sizes, run_bw, run_pingpong
from .ring import run_ring

log = logging.getLogger("ginsim")


def _common(p: argparse.ArgumentParser, ranks: int) -> None:
    p.add_argument("--ranks", type=int, default=ranks)
    p.add_argument("--backend", choices=("auto", "direct", "proxy"))
    p.add_argument("--transport", choices=("inproc", "socket"), default="inproc")
    p.add_argument("--seed", type=int)
    p.add_argument("--latency-ns", type=int, dest="base_ns")
    p.add_argument("--jitter-ns", type=int)
    p.add_argument("--reorder", type=int, dest="reorder_window")
    p.add_argument("--threads", action="store_true",
                   help="socket transport: run ranks as threads instead of child processes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ginsim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="ping-pong latency or streaming bandwidth between 2 ranks")
    bench.add_argument("kind", choices=("pingpong", "bw"))
    _common(bench, 2)
    bench.add_argument("--sizes", default="4:4194304")
    bench.add_argument("--iters", type=int, default=100)
    bench.add_argument("--warmup", type=int, default=10)
    bench.add_argument("--burst", type=int, default=16, help="messages per round trip for bw")
    bench.add_argument("--csv", dest="csv_path")

    demo = sub.add_parser("demo", help="run a verified demo")
    demo.add_argument("name", choices=("ring", "moe-ll", "moe-ht"))
    _common(demo, 8)
    d = MoeConfig()
    demo.add_argument("--experts", type=int, default=d.experts)
    demo.add_argument("--tokens", type=int, default=d.tokens)
    demo.add_argument("--hidden", type=int, default=d.hidden)
    demo.add_argument("--topk", type=int, default=d.topk)
    demo.add_argument("--channels", type=int, default=d.channels)
    demo.add_argument("--slots", type=int, default=d.slots)
    demo.add_argument("--messages", type=int, default=d.messages)
    demo.add_argument("--bytes", type=int, default=1024, dest="nbytes", help="ring slice size")
    demo.add_argument("--rounds", type=int, default=100)

    child = sub.add_parser("_rank", help=argparse.SUPPRESS)
    child.add_argument("--rank", type=int, required=True)
    child.add_argument("--size", type=int, required=True)
    child.add_argument("--addr", required=True)
    child.add_argument("--program", required=True)
    child.add_argument("--params", default="{}")
    child.add_argument("--timeout", type=float, default=30.0)
    return ap


def _model(args):
    return latency_from_env(seed=args.seed, base_ns=args.base_ns, jitter_ns=args.jitter_ns,
                            reorder_window=args.reorder_window)


def _bench(args) -> int:
    backend = GinConfig.from_env(backend=args.backend).backend
    if backend == "auto":
        backend = "direct"
    cfg = BenchConfig(ranks=args.ranks, backend=backend, sizes=parse_sizes(args.sizes), iters=args.iters,
                      warmup=args.warmup, seed=0, model=_model(args), transport=args.transport,
                      csv_path=args.csv_path, processes=not args.threads)
    rows = run_pingpong(cfg) if args.kind == "pingpong" else run_bw(cfg, burst=args.burst)
    if args.csv_path:
        print(f"wrote {len(rows)} rows to {args.csv_path}")
    else:
        sys.stdout.write(format_csv(rows))
    return 0


def _demo(args) -> int:
    backend = GinConfig.from_env(backend=args.backend).backend
    model = _model(args)
    spawn = args.transport == "socket" and not args.threads
    if args.name == "ring":
        res = run_ring(args.ranks, args.nbytes, args.rounds, backend=backend, transport=args.transport,
                       model=model, processes=spawn)
        print(f"ring: {args.ranks} ranks x {args.rounds} rounds of {args.nbytes} B verified "
              f"({res[0]['backend']}, {args.transport})")
        return 0
    cfg = MoeConfig(ranks=args.ranks, experts=args.experts, tokens=args.tokens, hidden=args.hidden,
                    topk=args.topk, channels=args.channels, slots=args.slots, messages=args.messages,
                    seed=model.seed, backend=backend, mode="ll" if args.name == "moe-ll" else "ht")
    if args.name == "moe-ll":
        res = run_moe_ll(cfg, transport=args.transport, model=model, processes=spawn)
        print(f"moe-ll: {cfg.ranks} ranks, {cfg.experts} experts, {sum(r['received'] for r in res)} dispatch "
              f"messages of {cfg.dispatch_bytes} B, combine {cfg.combine_bytes} B; "
              f"outputs match the sequential oracle ({res[0]['backend']}, {args.transport})")
    else:
        res = run_moe_ht(cfg, transport=args.transport, model=model, processes=spawn)
        delivered = sum(sum(r["delivered"]) for r in res)
        print(f"moe-ht: {cfg.ranks} ranks x {cfg.channels} channels over {res[0]['communicators']} "
              f"communicators, {cfg.slots}-slot buffers, {delivered} messages delivered in order, "
              f"no flow-control violations ({res[0]['backend']}, {args.transport})")
    return 0


def _child(args) -> int:
    from ..runtime.bootstrap import SocketBootstrap
    from .programs import build

    host, port = args.addr.rsplit(":", 1)
    bs = SocketBootstrap(args.rank, args.size, (host, int(port)), timeout_s=args.timeout)
    result = build(args.program, json.loads(args.params))(bs)
    bs.close()
    print(json.dumps(result))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench":
            return _bench(args)
        if args.command == "demo":
            return _demo(args)
        return _child(args)
    except UsageError as exc:
        print(f"ginsim: usage error: {exc}", file=sys.stderr)
        return 2
    except (GinError, ValueError) as exc:
        print(f"ginsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
