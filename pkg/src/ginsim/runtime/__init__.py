"""User-facing runtime: communicators, windows, the Gin API and barriers."""

from .barrier import BarrierSession, barrier_sync
from .bootstrap import InprocBootstrap, InprocWorld, RendezvousServer, SocketBootstrap
from .comm import DevComm, LocalWorld, comm_init, pool_select, team_create, window_register
from .config import GinConfig, latency_from_env
from .gin import Gin

__all__ = [
    "BarrierSession", "DevComm", "Gin", "GinConfig", "InprocBootstrap", "InprocWorld", "LocalWorld",
    "RendezvousServer", "SocketBootstrap", "barrier_sync", "comm_init", "latency_from_env",
    "pool_select", "team_create", "window_register",
]
