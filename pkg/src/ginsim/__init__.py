"""Host-side simulator of GPU-initiated one-sided networking.

Windows, contexts, put/signal/counter primitives and their ordering rules,
with a direct backend (the caller posts) and a proxy backend (a progress
agent drains 64-byte descriptors), over a virtual-time simulated fabric or
loopback TCP.
"""

from .core import (
    NO_ACTION,
    CompletionAction,
    CounterInc,
    SignalAdd,
    SignalInc,
    SignalKind,
    SignalOp,
    Team,
    Window,
    team_translate,
    window_resolve,
)
from .descriptor import Descriptor, Opcode, decode_descriptor, encode_descriptor
from .errors import GinError
from .fabric import LatencyModel, SimFabric
from .runtime import (
    BarrierSession,
    DevComm,
    Gin,
    GinConfig,
    LocalWorld,
    barrier_sync,
    comm_init,
    pool_select,
    team_create,
    window_register,
)

__version__ = "0.1.0"
