"""The acceptance suite: one test per criterion, each leaving a pass/fail line."""

import contextlib
import dataclasses
import random
import threading
import time

import numpy as np

from conftest import CRITERIA
from ginsim.core import NO_ACTION, CounterInc, SignalAdd, SignalOp
from ginsim.descriptor import (
    DESCRIPTOR_SIZE,
    INLINE,
    Descriptor,
    Opcode,
    decode_descriptor,
    encode_descriptor,
)
from ginsim.fabric import LatencyModel, SimFabric
from ginsim.harness import BenchConfig, MoeConfig, parse_sizes, run_moe_ht, run_moe_ll, run_pingpong, run_ring
from ginsim.harness.launch import run_inproc
from ginsim.proxy import DescriptorRing
from ginsim.runtime import GinConfig, LocalWorld, comm_init
from helpers import random_descriptor

N_CTX = 4


@contextlib.contextmanager
def criterion(n, title):
    """Record PASS or FAIL for criterion ``n``; ``note`` collects the numbers."""
    note = {}
    t0 = time.perf_counter()
    try:
        yield note
    except BaseException as exc:
        CRITERIA[n] = f"[FAIL] {n:2d}. {title}: {type(exc).__name__}: {str(exc).splitlines()[0][:120]}"
        raise
    else:
        extra = ", ".join(f"{k}={v}" for k, v in note.items())
        CRITERIA[n] = f"[PASS] {n:2d}. {title} ({extra}; {time.perf_counter() - t0:.1f} s)"
    finally:
        print(CRITERIA.get(n, ""))


def backend_for(seed):
    return "direct" if seed % 2 == 0 else "proxy"


def jittery(rng, seed, reorder=8):
    return LatencyModel(base_ns=rng.choice([0, 500, 2000]), jitter_ns=rng.choice([0, 1000, 8000]),
                        reorder_window=reorder, seed=seed)


# -- 1 -------------------------------------------------------------------------
def ordering_schedule(seed, n=4):
    """A random put/signal program; returns a list of ordering failures.

    The oracle numbers every operation on a (src, ctx, dst) channel from 1,
    standalone signals included, so a signal's watermark must equal its own
    position and every put at or below it must be in place when it applies.
    """
    rng = random.Random(seed)
    w = LocalWorld(n, SimFabric(jittery(rng, seed)), GinConfig(backend=backend_for(seed)))
    src = [bytearray(2048) for _ in range(n)]
    dst = [bytearray(2048) for _ in range(n)]
    ws, wd = w.register(src), w.register(dst)
    src_top, dst_top = [0] * n, [0] * n
    chans = {}
    covers = {}  # signal id -> (dst rank, watermark, puts it covers)
    pending = []
    failures = []

    def verify(d, sid, where):
        for off, data in covers[sid][2]:
            if dst[d][off:off + len(data)] != data:
                failures.append(f"seed {seed}: {where} for signal {sid} found byte range {off} unwritten")

    def observer(key, sid, op, wm, value):
        d, want, _ = covers[sid]
        if wm != want:
            failures.append(f"seed {seed}: signal {sid} carried watermark {wm}, oracle says {want}")
        verify(d, sid, "apply")

    for r in range(n):
        w[r].endpoint.signal_observers.append(observer)

    sid = 0
    for _ in range(rng.randint(4, 40)):
        s, d, ctx = rng.randrange(n), rng.randrange(n), rng.randrange(N_CTX)
        g = w[s].gin(ctx)
        ops = chans.setdefault((s, ctx, d), [])
        if rng.random() < 0.75:
            k = rng.randint(0, 24)
            data = rng.randbytes(k)
            so, do = src_top[s], dst_top[d]
            src_top[s] += k
            dst_top[d] += k
            src[s][so:so + k] = data
            ops.append((do, data))
            act = NO_ACTION
            if rng.random() < 0.3:
                v = rng.randint(1, 9)
                covers[sid] = (d, len(ops), [p for p in ops if p])
                act = SignalAdd(sid, v)
                pending.append((d, sid, v))
                sid += 1
            g.put(w[s].world, d, wd[s], do, ws[s], so, k, act)
        else:
            ops.append(None)
            covers[sid] = (d, len(ops), [p for p in ops if p])
            g.signal(w[s].world, d, sid, SignalOp.inc())
            pending.append((d, sid, 1))
            sid += 1
        if pending and rng.random() < 0.2:
            d, i, v = pending.pop(rng.randrange(len(pending)))
            w[d].gin(rng.randrange(N_CTX)).wait_signal(i, v)
            verify(d, i, "wait")
    rng.shuffle(pending)
    for d, i, v in pending:
        w[d].gin(rng.randrange(N_CTX)).wait_signal(i, v)
        verify(d, i, "wait")
    for c in w.comms:
        c.flush_all()
    return failures


def test_01_ordering():
    with criterion(1, "ordering: 10,000 random schedules, watermark-covered puts present") as note:
        t0 = time.perf_counter()
        failures = []
        for seed in range(10_000):
            failures += ordering_schedule(seed)
        took = time.perf_counter() - t0
        note.update(schedules=10_000, failures=len(failures))
        assert failures == [], failures[:5]
        assert took < 60, f"took {took:.1f} s"


# -- 2 -------------------------------------------------------------------------
def test_02_flush_is_local():
    with criterion(2, "flush locality: put, flush, overwrite source") as note:
        bad = 0
        for trial in range(1000):
            rng = random.Random(trial)
            w = LocalWorld(2, SimFabric(jittery(rng, trial)), GinConfig(backend=backend_for(trial)))
            k = rng.randint(1, 256)
            before, after = rng.randbytes(k), rng.randbytes(k)
            src, dst = [bytearray(before), bytearray(k)], [bytearray(k), bytearray(k)]
            ws, wd = w.register(src), w.register(dst)
            ctx = rng.randrange(N_CTX)
            g = w[0].gin(ctx)
            g.put(w[0].world, 1, wd[0], 0, ws[0], 0, k)
            g.flush()
            src[0][:] = after
            # a zero-byte release on the same channel makes the put observable
            g.signal(w[0].world, 1, 0)
            w[1].gin(ctx).wait_signal(0, 1)
            bad += dst[1] != before
        note.update(trials=1000, failures=bad)
        assert bad == 0


# -- 3 -------------------------------------------------------------------------
def counter_program(seed, n=3, counters=6):
    rng = random.Random(seed)
    w = LocalWorld(n, SimFabric(jittery(rng, seed)), GinConfig(backend=backend_for(seed)))
    bufs = [bytearray(64) for _ in range(n)]
    win = w.register(bufs)
    oracle = np.zeros((n, counters), dtype=np.int64)
    for _ in range(rng.randint(1, 60)):
        s, d, ctx = rng.randrange(n), rng.randrange(n), rng.randrange(N_CTX)
        g = w[s].gin(ctx)
        c = rng.randrange(counters) if rng.random() < 0.7 else None
        act = CounterInc(c) if c is not None else NO_ACTION
        if rng.random() < 0.8:
            g.put(w[s].world, d, win[s], rng.randrange(32), win[s], 0, rng.randint(0, 32), act)
        else:
            g.signal(w[s].world, d, rng.randrange(8), SignalOp.inc(), act)
        if c is not None:
            oracle[s, c] += 1
        if rng.random() < 0.1:
            # a counter can trail its ops but never run ahead of them
            r = rng.randrange(n)
            if any(w[r].gin(0).read_counter(i) > oracle[r, i] for i in range(counters)):
                return False
        if rng.random() < 0.05:
            r, i = rng.randrange(n), rng.randrange(counters)
            w[r].flush_all()
            if w[r].gin(0).read_counter(i) != oracle[r, i]:
                return False
            w[r].gin(0).reset_counter(i)
            oracle[r, i] = 0
    for c in w.comms:
        c.flush_all()
    got = np.array([[w[r].gin(0).read_counter(i) for i in range(counters)] for r in range(n)])
    return np.array_equal(got, oracle)


def test_03_counter_exactness():
    with criterion(3, "counter exactness against the oracle") as note:
        bad = [s for s in range(1000) if not counter_program(s)]
        note.update(trials=1000, failures=len(bad))
        assert bad == []


# -- 4 -------------------------------------------------------------------------
def test_04_descriptor_codec():
    with criterion(4, "descriptor codec: 10^5 random descriptors") as note:
        rng = random.Random(4)
        seen = {}
        for _ in range(100_000):
            d = random_descriptor(rng)
            b = encode_descriptor(d)
            assert len(b) == DESCRIPTOR_SIZE
            back = decode_descriptor(b)
            assert back == d
            assert encode_descriptor(back) == b
            # injective: equal bytes only ever come from equal descriptors
            assert seen.setdefault(b, d) == d
        note.update(descriptors=100_000, distinct=len(seen))


# -- 5 -------------------------------------------------------------------------
def test_05_ring_exchange():
    with criterion(5, "ring exchange: {2,4,8,16} ranks x 100 rounds x backends x transports") as note:
        t0 = time.perf_counter()
        runs = 0
        for transport in ("inproc", "socket"):
            for backend in ("direct", "proxy"):
                for ranks in (2, 4, 8, 16):
                    res = run_ring(ranks, 256, rounds=100, backend=backend, transport=transport,
                                   model=LatencyModel(seed=ranks, reorder_window=8))
                    assert [r["rounds"] for r in res] == [100] * ranks
                    assert {r["backend"] for r in res} == {backend}
                    runs += 1
        took = time.perf_counter() - t0
        note.update(runs=runs)
        assert took < 30, f"took {took:.1f} s"


# -- 6 -------------------------------------------------------------------------
def test_06_backend_equivalence():
    with criterion(6, "backend equivalence: ring and moe-ll final state, 20 seeds each") as note:
        for seed in range(20):
            model = LatencyModel(seed=seed, jitter_ns=4000, reorder_window=8)
            a = run_ring(4, 512, rounds=10, backend="direct", model=model)
            b = run_ring(4, 512, rounds=10, backend="proxy", model=model)
            assert [r["digest"] for r in a] == [r["digest"] for r in b], f"ring seed {seed}"
        for seed in range(20):
            cfg = MoeConfig(tokens=32, seed=seed)
            model = LatencyModel(seed=seed, reorder_window=8)
            a = run_moe_ll(dataclasses.replace(cfg, backend="direct"), model=model)
            b = run_moe_ll(dataclasses.replace(cfg, backend="proxy"), model=model)
            assert [r["digest"] for r in a] == [r["digest"] for r in b], f"moe-ll seed {seed}"
        note.update(ring_seeds=20, moe_seeds=20)


# -- 7 -------------------------------------------------------------------------
def test_07_moe_ll_oracle():
    with criterion(7, "MoE LL vs sequential oracle: 8 ranks, 64 experts, hidden 7168, 20 seeds") as note:
        t0 = time.perf_counter()
        cfg = MoeConfig()
        assert (cfg.dispatch_bytes, cfg.combine_bytes) == (14352, 14336)
        for seed in range(20):
            run_cfg = MoeConfig(seed=seed, backend=backend_for(seed))
            # each rank checks its combine output against the oracle and raises on any difference
            res = run_moe_ll(run_cfg, model=LatencyModel(seed=seed, reorder_window=8), digest=False)
            assert sum(r["received"] for r in res) == cfg.ranks * cfg.tokens * cfg.topk
        took = time.perf_counter() - t0
        note.update(seeds=20, failures=0)
        assert took < 60, f"took {took:.1f} s"


# -- 8 -------------------------------------------------------------------------
def test_08_moe_ht_flow_control():
    with criterion(8, "MoE HT flow control: 4 slots, 64 messages, 24 channels") as note:
        checks = 0
        for backend in ("direct", "proxy"):
            cfg = MoeConfig(mode="ht", slots=4, messages=64, channels=24, backend=backend)
            res = run_moe_ht(cfg, model=LatencyModel(seed=8, jitter_ns=3000, reorder_window=8))
            assert all(r["delivered"] == [64] * 24 and r["sent"] == [64] * 24 for r in res)
            # head <= tail is asserted per channel on every sweep
            assert all(r["checks"] >= 24 * r["sweeps"] > 0 for r in res)
            checks += sum(r["checks"] for r in res)
        note.update(backends="direct+proxy", violations=0, head_tail_checks=checks)


# -- 9 -------------------------------------------------------------------------
def barrier_violations(backend, n=8, rounds=100):
    entry = np.zeros((n, rounds), dtype=np.int64)
    exit_ = np.zeros((n, rounds), dtype=np.int64)

    def prog(bs):
        comm = comm_init(bs, GinConfig(backend=backend))
        rng = random.Random(bs.rank)
        sess = comm.gin(bs.rank % N_CTX).barrier_session()
        for k in range(rounds):
            comm.clock.sleep(rng.randrange(50_000))
            entry[bs.rank, k] = comm.clock.now()
            sess.sync()
            exit_[bs.rank, k] = comm.clock.now()
        comm.close()

    run_inproc(n, prog, model=LatencyModel(seed=9, jitter_ns=5000, reorder_window=8))
    return int((exit_.min(axis=0) < entry.max(axis=0)).sum())


def test_09_barrier_safety():
    with criterion(9, "barrier safety: 8 ranks, 100 rounds, random delays") as note:
        violations = barrier_violations("direct") + barrier_violations("proxy")
        note.update(backends="direct+proxy", violations=violations)
        assert violations == 0


# -- 10 ------------------------------------------------------------------------
def test_10_proxy_ring_stress():
    with criterion(10, "proxy ring: 8 producers x 10,000 descriptors, capacity 1024") as note:
        producers, per = 8, 10_000
        ring = DescriptorRing(1024)
        got = []
        tickets = [[] for _ in range(producers)]

        def wait(pred):
            while not pred():
                time.sleep(0)

        def produce(p):
            for i in range(per):
                d = Descriptor.build(Opcode.PUT_INLINE, team=0, peer=p, dst_window=0, dst_offset=i,
                                     src_window=INLINE, src_offset_or_value=0, nbytes=0)
                tickets[p].append(ring.push(encode_descriptor(d), wait))

        def consume():
            while len(got) < producers * per:
                item = ring.pop()
                if item is None:
                    time.sleep(0)
                else:
                    got.append(item)

        threads = [threading.Thread(target=consume)] + [
            threading.Thread(target=produce, args=(p,)) for p in range(producers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(120)
        total = producers * per
        assert len(got) == total == ring.issued
        assert [t for t, _ in got] == list(range(total))
        items = [decode_descriptor(b) for _, b in got]
        assert len({(d.peer, d.dst_offset) for d in items}) == total
        for p in range(producers):
            mine = [d.dst_offset for d in items if d.peer == p]
            # a producer's descriptors come out in the order it submitted them
            assert mine == list(range(per))
            assert tickets[p] == sorted(tickets[p])
        note.update(consumed=len(got), submitted=total, duplicates=0)


# -- 11 ------------------------------------------------------------------------
def test_11_benchmark_sanity():
    with criterion(11, "benchmark sanity: monotone medians, direct <= proxy at 4 B") as note:
        sizes = parse_sizes("4:4194304")
        for backend in ("direct", "proxy"):
            rows = run_pingpong(BenchConfig(backend=backend, sizes=sizes, iters=30, warmup=5,
                                            model=LatencyModel(seed=11)))
            medians = [r[2] for r in rows]
            assert medians == sorted(medians), f"{backend}: {medians}"
        zero = LatencyModel(base_ns=0, jitter_ns=0, reorder_window=0)
        d = run_pingpong(BenchConfig(backend="direct", sizes=[4], iters=30, warmup=5, model=zero))[0][2]
        p = run_pingpong(BenchConfig(backend="proxy", sizes=[4], iters=30, warmup=5, model=zero))[0][2]
        note.update(direct_4B_ns=d, proxy_4B_ns=p)
        assert d <= p
