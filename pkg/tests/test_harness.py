import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from ginsim.errors import ChildFailure, FlowControlViolation, UsageError
from ginsim.fabric import LatencyModel
from ginsim.harness import (
    BenchConfig,
    MoeConfig,
    parse_sizes,
    run_moe_ht,
    run_moe_ll,
    run_pingpong,
    run_ring,
    sequential_oracle,
)
from ginsim.harness.cli import main
from ginsim.harness.launch import run_socket_processes
from ginsim.harness.moe_ht import peers
from ginsim.harness.moe_ll import expert_fn, routing, slot_capacity, tokens_of
from ginsim.harness.pingpong import CSV_HEADER, format_csv
from ginsim.harness.ring import first_mismatch, pattern

SMALL_LL = dict(ranks=4, experts=8, tokens=6, hidden=32, topk=2)
SMALL_HT = dict(ranks=4, channels=6, slots=2, messages=8, hidden=16, mode="ht")


class TestRing:
    def test_verifies_every_round(self, backend):
        res = run_ring(4, 64, rounds=5, backend=backend, model=LatencyModel(seed=2, reorder_window=8))
        assert [r["rank"] for r in res] == [0, 1, 2, 3]
        assert {r["backend"] for r in res} == {backend}

    def test_needs_two_ranks(self):
        with pytest.raises(UsageError):
            run_ring(1)

    def test_pattern_depends_on_round(self):
        assert pattern(1, 0, 16) != pattern(1, 1, 16)
        assert first_mismatch(b"abcd", b"abXd") == 2
        assert first_mismatch(b"abcd", b"abcd") is None


class TestBenchConfig:
    def test_size_range_doubles(self):
        sizes = parse_sizes("4:4194304")
        assert sizes[0] == 4 and sizes[-1] == 4 << 20 and len(sizes) == 21

    def test_size_list(self):
        assert parse_sizes("512,8,64") == [8, 64, 512]

    @pytest.mark.parametrize("spec", ["8:4", "0:16", ""])
    def test_bad_sizes(self, spec):
        with pytest.raises(UsageError):
            parse_sizes(spec)

    def test_invariants(self):
        with pytest.raises(UsageError):
            BenchConfig(iters=10, warmup=10)
        with pytest.raises(UsageError):
            BenchConfig(ranks=3)
        with pytest.raises(UsageError):
            BenchConfig(sizes=[64, 8])


class TestPingPong:
    def test_csv_schema(self, tmp_path):
        path = tmp_path / "pp.csv"
        cfg = BenchConfig(sizes=[4, 4096], iters=12, warmup=2, model=LatencyModel(seed=3), csv_path=str(path))
        rows = run_pingpong(cfg)
        got = list(csv.reader(io.StringIO(path.read_text())))
        assert got[0] == CSV_HEADER
        assert [int(r[0]) for r in got[1:]] == [4, 4096]
        assert all(int(r[1]) == 10 and r[5] == "direct" and r[6] == "inproc" and r[7] == "3" for r in got[1:])
        assert path.read_text() == format_csv(rows)

    def test_same_seed_same_numbers(self):
        cfg = BenchConfig(sizes=[64, 1024], iters=20, warmup=2, model=LatencyModel(seed=9, jitter_ns=400))
        assert run_pingpong(cfg) == run_pingpong(cfg)

    def test_p99_not_below_p50(self):
        rows = run_pingpong(BenchConfig(sizes=[8], iters=40, warmup=5, model=LatencyModel(jitter_ns=2000)))
        assert rows[0][3] >= rows[0][2] > 0


class TestMoeLL:
    def test_oracle_matches_a_direct_sum(self):
        cfg = MoeConfig(**SMALL_LL)
        experts, weights = routing(cfg)
        r, t = 2, 3
        want = sum(int(weights[r, t, k]) * expert_fn(tokens_of(r, cfg)[t], int(experts[r, t, k])).astype(np.int64)
                   for k in range(cfg.topk))
        assert np.array_equal(sequential_oracle(cfg, [r])[r][t], want)

    def test_routing_is_distinct_topk(self):
        cfg = MoeConfig(**SMALL_LL)
        experts, _ = routing(cfg)
        assert all(len(set(row)) == cfg.topk for row in experts.reshape(-1, cfg.topk))
        assert slot_capacity(cfg, experts) <= cfg.tokens

    def test_expert_fn_wraps(self):
        assert expert_fn(np.array([0xFFFF], dtype=np.uint16), 1)[0] == (0xFFFF * 2 + 1) & 0xFFFF

    def test_run(self, backend):
        cfg = MoeConfig(**SMALL_LL, backend=backend, seed=4)
        res = run_moe_ll(cfg, model=LatencyModel(seed=4, reorder_window=8))
        assert sum(r["received"] for r in res) == cfg.ranks * cfg.tokens * cfg.topk

    def test_bad_configs(self):
        with pytest.raises(UsageError):
            MoeConfig(ranks=3, experts=8)
        with pytest.raises(UsageError):
            MoeConfig(topk=0)
        with pytest.raises(UsageError):
            MoeConfig(mode="xl")
        with pytest.raises(UsageError):
            run_moe_ll(MoeConfig(**SMALL_LL, mode="ht"))


class TestMoeHT:
    def test_peers_pair_up(self):
        for ch in range(7):
            for r in range(4):
                dst, _ = peers(r, 4, ch)
                assert peers(dst, 4, ch)[1] == r and dst != r

    def test_delivers_every_message(self, backend):
        cfg = MoeConfig(**SMALL_HT, backend=backend)
        res = run_moe_ht(cfg, model=LatencyModel(seed=1, jitter_ns=3000, reorder_window=8))
        assert all(r["delivered"] == [8] * 6 and r["checks"] > 0 for r in res)
        assert res[0]["communicators"] == 2

    def test_slow_consumer_keeps_the_sender_in_check(self):
        cfg = MoeConfig(**SMALL_HT)
        res = run_moe_ht(cfg, consume_ns=20_000)
        assert all(r["delivered"] == [8] * 6 for r in res)

    def test_ignoring_head_is_caught(self):
        cfg = MoeConfig(**SMALL_HT)
        with pytest.raises(FlowControlViolation):
            run_moe_ht(cfg, unsafe=True, consume_ns=20_000)

    def test_needs_two_ranks(self):
        with pytest.raises(UsageError):
            run_moe_ht(MoeConfig(**{**SMALL_HT, "ranks": 1, "experts": 8}))


class TestCli:
    def test_demo_ring(self, capsys):
        assert main(["demo", "ring", "--ranks", "3", "--rounds", "2", "--bytes", "16"]) == 0
        assert "3 ranks x 2 rounds" in capsys.readouterr().out

    def test_demo_moe_ll(self, capsys):
        assert main(["demo", "moe-ll", "--ranks", "2", "--experts", "4", "--tokens", "4", "--hidden", "8",
                     "--topk", "2", "--backend", "proxy"]) == 0
        assert "match the sequential oracle (proxy" in capsys.readouterr().out

    def test_demo_moe_ht_threads(self, capsys):
        assert main(["demo", "moe-ht", "--ranks", "3", "--channels", "5", "--messages", "6", "--hidden", "8",
                     "--transport", "socket", "--threads"]) == 0
        assert "no flow-control violations" in capsys.readouterr().out

    def test_bench_to_stdout(self, capsys):
        assert main(["bench", "pingpong", "--sizes", "4,64", "--iters", "5", "--warmup", "1", "--seed", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 3

    def test_usage_error_exit_code(self, capsys):
        assert main(["demo", "ring", "--ranks", "1"]) == 2
        assert "usage error" in capsys.readouterr().err

    def test_env_backend(self, monkeypatch, capsys):
        monkeypatch.setenv("GINSIM_BACKEND", "proxy")
        assert main(["demo", "ring", "--ranks", "2", "--rounds", "1"]) == 0
        assert "(proxy, inproc)" in capsys.readouterr().out


class TestProcesses:
    def test_bench_over_sockets(self, tmp_path):
        out = tmp_path / "pp.csv"
        r = subprocess.run([sys.executable, "-m", "ginsim", "bench", "pingpong", "--transport", "socket",
                            "--sizes", "4,1024", "--iters", "6", "--warmup", "1", "--csv", str(out)],
                           capture_output=True, text=True, timeout=120)
        assert r.returncode == 0, r.stderr
        rows = list(csv.DictReader(out.open()))
        assert [row["size_bytes"] for row in rows] == ["4", "1024"]
        assert all(row["transport"] == "socket" and int(row["p50_ns"]) > 0 for row in rows)

    def test_failing_child_is_reported(self):
        params = {**SMALL_LL, "ranks": 4}  # launched on 2 ranks, so every child rejects it
        with pytest.raises(ChildFailure):
            run_socket_processes(2, "moe-ll", params, timeout_s=10)
