"""Communicator configuration and environment overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Mapping, Optional

from ..core import DEFAULT_CONTEXTS, DEFAULT_COUNTERS, DEFAULT_SIGNALS
from ..fabric.model import LatencyModel

BACKENDS = ("auto", "direct", "proxy")


@dataclass(frozen=True)
class GinConfig:
    backend: str = "auto"
    n_contexts: int = DEFAULT_CONTEXTS
    n_signals: int = DEFAULT_SIGNALS
    n_counters: int = DEFAULT_COUNTERS
    queue_depth: int = 1024
    timeout_s: float = 30.0
    barrier_slots: int = 8

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.n_contexts < 1:
            raise ValueError("need at least one context")
        if self.queue_depth < 1 or self.queue_depth & (self.queue_depth - 1):
            raise ValueError("queue depth must be a power of two")

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None, **overrides) -> "GinConfig":
        """Defaults, then ``GINSIM_*`` variables, then explicit keyword overrides."""
        env = os.environ if env is None else env
        kw = {}
        if env.get("GINSIM_BACKEND"):
            kw["backend"] = env["GINSIM_BACKEND"].strip().lower()
        if env.get("GINSIM_QUEUE_DEPTH"):
            kw["queue_depth"] = int(env["GINSIM_QUEUE_DEPTH"])
        if env.get("GINSIM_TIMEOUT_MS"):
            kw["timeout_s"] = int(env["GINSIM_TIMEOUT_MS"]) / 1000
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def collective_view(self) -> dict:
        """Fields every rank must agree on."""
        d = dataclasses.asdict(self)
        d.pop("timeout_s")
        return d


def latency_from_env(env: Optional[Mapping[str, str]] = None, **overrides) -> LatencyModel:
    env = os.environ if env is None else env
    kw = {}
    for var, field in (("GINSIM_SEED", "seed"), ("GINSIM_LATENCY_NS", "base_ns"),
                       ("GINSIM_JITTER_NS", "jitter_ns"), ("GINSIM_REORDER", "reorder_window")):
        if env.get(var):
            kw[field] = int(env[var])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return LatencyModel(**kw)
