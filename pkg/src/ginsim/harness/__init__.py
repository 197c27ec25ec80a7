"""Demos, benchmarks and the multi-rank launcher."""

from .launch import launch, run_inproc, run_socket_processes, run_socket_threads
from .moe_ht import moe_ht_rank, run_moe_ht
from .moe_ll import MoeConfig, moe_ll_rank, run_moe_ll, sequential_oracle
from .pingpong import BenchConfig, parse_sizes, run_bw, run_pingpong
from .programs import RankProgram
from .ring import ring_rank, run_ring

__all__ = [
    "BenchConfig", "MoeConfig", "RankProgram", "launch", "moe_ht_rank", "moe_ll_rank", "parse_sizes",
    "run_bw", "run_inproc", "run_moe_ht", "run_moe_ll", "run_pingpong", "run_ring", "run_socket_processes",
    "run_socket_threads", "sequential_oracle",
]
