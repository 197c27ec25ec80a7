"""Shared generators for tests."""

import random

from ginsim.core import CompletionAction, SignalOp
from ginsim.descriptor import INLINE, MAX_INLINE_BYTES, NO_WINDOW, Descriptor, Opcode

U16, U32, U64 = 2**16 - 1, 2**32 - 1, 2**64 - 1


def random_action(rng: random.Random, *, signal=None) -> CompletionAction:
    sig = None
    want = rng.random() < 0.5 if signal is None else signal
    if want:
        op = SignalOp.inc() if rng.random() < 0.5 else SignalOp.add(rng.randint(0, U64))
        sig = (rng.randint(0, U32), op)
    counter = rng.randint(0, U32) if rng.random() < 0.5 else None
    return CompletionAction(signal=sig, counter=counter)


def random_descriptor(rng: random.Random) -> Descriptor:
    """A valid descriptor with every field drawn over its full range."""
    op = rng.choice(list(Opcode))
    common = dict(team=rng.randint(0, U16), peer=rng.randint(0, U32))
    if op == Opcode.PUT:
        return Descriptor.build(op, dst_window=rng.randint(0, U32), dst_offset=rng.randint(0, U64),
                                src_window=rng.randint(0, U32 - 1), src_offset_or_value=rng.randint(0, U64),
                                nbytes=rng.randint(0, U64), action=random_action(rng), **common)
    if op == Opcode.PUT_INLINE:
        n = rng.randint(0, MAX_INLINE_BYTES)
        return Descriptor.build(op, dst_window=rng.randint(0, U32), dst_offset=rng.randint(0, U64),
                                src_window=INLINE, src_offset_or_value=rng.getrandbits(8 * n) if n else 0,
                                nbytes=n, action=random_action(rng), **common)
    return Descriptor.build(op, dst_window=NO_WINDOW, action=random_action(rng, signal=True), **common)
