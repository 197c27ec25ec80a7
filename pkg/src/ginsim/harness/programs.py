"""Named per-rank programs, so a child process can rebuild one from JSON."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

from ..errors import UsageError


def build(name: str, params: dict):
    """Return ``program(bootstrap)`` for a registered name."""
    from ..runtime import GinConfig
    from .moe_ht import moe_ht_rank
    from .moe_ll import MoeConfig, moe_ll_rank
    from .pingpong import pingpong_rank
    from .ring import ring_rank

    p = dict(params)
    if name == "ring":
        return partial(ring_rank, nbytes=p["nbytes"], rounds=p["rounds"],
                       config=GinConfig.from_env(backend=p.get("backend")))
    if name == "pingpong":
        return partial(pingpong_rank, **p)
    if name == "moe-ll":
        digest = p.pop("digest", True)
        return partial(moe_ll_rank, cfg=MoeConfig(**p), digest=digest)
    if name == "moe-ht":
        unsafe = p.pop("unsafe", False)
        consume_ns = p.pop("consume_ns", 0)
        return partial(moe_ht_rank, cfg=MoeConfig(**p), unsafe=unsafe, consume_ns=consume_ns)
    raise UsageError(f"unknown program {name!r}")


@dataclass(frozen=True)
class RankProgram:
    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, bootstrap):
        return build(self.name, self.params)(bootstrap)
