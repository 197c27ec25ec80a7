"""Transports: the deterministic simulated network and the loopback socket transport."""

from .channel import Endpoint
from .model import Ack, ChannelKey, LatencyModel, Put, Signal
from .sim import SimEndpoint, SimFabric
from .sockets import SocketEndpoint, WallClock

__all__ = [
    "Ack", "ChannelKey", "Endpoint", "LatencyModel", "Put", "Signal",
    "SimEndpoint", "SimFabric", "SocketEndpoint", "WallClock",
]
