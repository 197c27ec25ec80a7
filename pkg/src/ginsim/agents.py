"""Agent identity for call logs.

An agent is whoever is logically executing: a rank's submitter thread or a
communicator's progress agent. In the simulator a progress agent's steps
may run on whichever thread advances the clock, so identity is tracked
explicitly instead of by thread.
"""

import contextlib
import threading

_local = threading.local()


def current_agent() -> str:
    return getattr(_local, "name", None) or threading.current_thread().name


@contextlib.contextmanager
def acting_as(name: str):
    prev = getattr(_local, "name", None)
    _local.name = name
    try:
        yield
    finally:
        _local.name = prev
