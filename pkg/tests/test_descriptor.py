import random
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ginsim.core import CounterInc, SignalAdd, SignalInc
from ginsim.descriptor import (
    DESCRIPTOR_SIZE,
    HAS_COUNTER,
    HAS_SIGNAL,
    INLINE,
    SIGNAL_IS_ADD,
    Descriptor,
    Opcode,
    decode_descriptor,
    encode_descriptor,
)
from ginsim.errors import InvalidDescriptor, MalformedDescriptor
from helpers import random_descriptor


def test_put_with_signal_add_layout():
    d = Descriptor.build(Opcode.PUT, team=0, peer=1, dst_window=2, dst_offset=0x40, src_window=3,
                         src_offset_or_value=0x80, nbytes=14352, action=SignalAdd(1, 7))
    b = encode_descriptor(d)
    assert len(b) == DESCRIPTOR_SIZE
    assert b[0] == 0x01
    assert b[1] == HAS_SIGNAL | SIGNAL_IS_ADD
    assert struct.unpack_from("<I", b, 4)[0] == 1
    assert struct.unpack_from("<II", b, 8) == (2, 3)
    assert struct.unpack_from("<QQQ", b, 16) == (0x40, 0x80, 14352)
    assert struct.unpack_from("<I", b, 40)[0] == 1
    assert struct.unpack_from("<Q", b, 48)[0] == 7
    assert struct.unpack_from("<Q", b, 56)[0] == 0


def test_signal_only_has_no_bytes():
    d = Descriptor.build(Opcode.SIGNAL_ONLY, team=0, peer=0, action=SignalInc(0))
    b = encode_descriptor(d)
    assert b[0] == 0x03 and b[1] == HAS_SIGNAL
    assert struct.unpack_from("<Q", b, 32)[0] == 0
    assert struct.unpack_from("<I", b, 12)[0] == INLINE


def test_inline_over_eight_bytes_rejected():
    d = Descriptor.build(Opcode.PUT_INLINE, team=0, peer=0, dst_window=0, nbytes=9)
    with pytest.raises(InvalidDescriptor):
        encode_descriptor(d)


@pytest.mark.parametrize("bad", [
    dict(opcode=Opcode.SIGNAL_ONLY, flags=0),                       # signal-only without a signal
    dict(opcode=Opcode.PUT, flags=HAS_SIGNAL, signal_operand=2),    # SignalInc with operand 2
    dict(opcode=Opcode.PUT, flags=0, counter_id=4),                 # counter id without the flag
    dict(opcode=Opcode.PUT, flags=0x80),                            # unknown flag bit
    dict(opcode=Opcode.PUT, flags=0, peer=2**32),                   # field overflow
])
def test_invalid_descriptors_rejected(bad):
    base = dict(opcode=Opcode.PUT, flags=0, team=0, peer=1, dst_window=0, src_window=1, dst_offset=0,
                src_offset_or_value=0, nbytes=8)
    base.update(bad)
    with pytest.raises(InvalidDescriptor):
        encode_descriptor(Descriptor(**base))


def test_all_zero_buffer_is_malformed():
    with pytest.raises(MalformedDescriptor):
        decode_descriptor(bytes(64))


def test_reserved_word_must_be_zero():
    d = Descriptor.build(Opcode.SIGNAL_ONLY, team=0, peer=0, action=SignalInc(0))
    b = bytearray(encode_descriptor(d))
    b[63] = 1
    with pytest.raises(MalformedDescriptor):
        decode_descriptor(bytes(b))


def test_wrong_length_is_malformed():
    with pytest.raises(MalformedDescriptor):
        decode_descriptor(bytes(63))


def test_decode_validates_invariants():
    d = Descriptor.build(Opcode.PUT, team=0, peer=0, dst_window=0, src_window=0, nbytes=1)
    b = bytearray(encode_descriptor(d))
    b[1] = HAS_COUNTER
    b[44] = 0  # counter id stays 0, which is fine
    decode_descriptor(bytes(b))
    b[0] = 0x03  # now a SIGNAL_ONLY with bytes and no signal
    with pytest.raises(MalformedDescriptor):
        decode_descriptor(bytes(b))


def test_action_survives_round_trip():
    a = SignalAdd(9, 123) | CounterInc(4)
    d = Descriptor.build(Opcode.PUT, team=0, peer=0, dst_window=0, src_window=0, nbytes=1, action=a)
    assert decode_descriptor(encode_descriptor(d)).action == a


def test_inline_bytes_little_endian():
    d = Descriptor.build(Opcode.PUT_INLINE, team=0, peer=0, dst_window=0, src_offset_or_value=0xDEADBEEF,
                         nbytes=4)
    assert d.inline_bytes() == bytes.fromhex("efbeadde")


@given(st.integers(0, 2**64 - 1))
def test_round_trip_randomized(seed):
    d = random_descriptor(random.Random(seed))
    b = encode_descriptor(d)
    assert len(b) == DESCRIPTOR_SIZE
    assert decode_descriptor(b) == d
    assert encode_descriptor(decode_descriptor(b)) == b


@given(st.binary(min_size=64, max_size=64))
def test_decode_never_accepts_what_it_cannot_reencode(b):
    try:
        d = decode_descriptor(b)
    except MalformedDescriptor:
        return
    assert encode_descriptor(d) == b
