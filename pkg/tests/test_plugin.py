import pytest

from ginsim.core import CounterInc, SignalOp, Window
from ginsim.errors import BackendMismatch, InvalidContext, OutOfBounds, UnknownHandle, UnknownWindow
from ginsim.fabric import LatencyModel, SimFabric
from ginsim.plugin import DIRECT, PROXY, MrHandle, NetPlugin


def pair(sizes=(64, 64), model=None):
    f = SimFabric(model or LatencyModel(base_ns=1000, jitter_ns=0))
    plugins, bufs = [], []
    for r in range(2):
        ep = f.endpoint_open(r, range(2))
        buf = bytearray(sizes[r])
        w = Window(0, r, tuple(sizes), memoryview(buf))
        ep.register_window(w)
        p = NetPlugin(ep, PROXY)
        plugins.append((p, p.reg_mr(w)))
        bufs.append(buf)
    return f, plugins, bufs


def test_reg_mr_is_idempotent():
    f, [(p, mr), _], _ = pair()
    w = p.endpoint.windows[0]
    assert p.reg_mr(w) == mr


def test_reg_mr_needs_a_registered_window():
    f, [(p, mr), _], _ = pair()
    stray = Window(9, 0, (8, 8), memoryview(bytearray(8)))
    with pytest.raises(UnknownWindow):
        p.reg_mr(stray)


def test_iput_delivers_bytes():
    f, [(p, mr), (q, mr1)], bufs = pair(sizes=(14336, 14336))
    bufs[0][:] = bytes(range(256)) * 56
    h = p.iput(mr, 0, mr1, 0, 14336, peer=1, ctx=0)
    assert not p.test(h)
    f.run_until_idle()
    assert p.test(h)
    assert bufs[1] == bufs[0]


def test_unregistered_source_region():
    f, [(p, mr), (q, mr1)], _ = pair()
    with pytest.raises(UnknownWindow):
        p.iput(MrHandle(5, 99), 0, mr1, 0, 4, peer=1, ctx=0)


def test_destination_bound_uses_the_peer_size():
    f, [(p, mr), (q, mr1)], _ = pair(sizes=(64, 16))
    p.iput(mr, 0, mr1, 8, 8, peer=1, ctx=0)
    with pytest.raises(OutOfBounds):
        p.iput(mr, 0, mr1, 12, 8, peer=1, ctx=0)


def test_zero_byte_put_consumes_a_sequence_number():
    f, [(p, mr), (q, mr1)], _ = pair()
    h1 = p.iput(None, 0, None, 0, 0, peer=1, ctx=0)
    h2 = p.iput(mr, 0, mr1, 0, 4, peer=1, ctx=0)
    assert (h1.seq, h2.seq) == (1, 2)


def test_zero_byte_signal_add():
    f, [(p, mr), (q, mr1)], _ = pair()
    p.signal(1, 0, 7, SignalOp.add(5))
    f.run_until_idle()
    assert q.endpoint.signals[7] == 5


def test_signal_waits_for_both_earlier_puts():
    f, [(p, mr), (q, mr1)], bufs = pair()
    bufs[0][:8] = b"abcdefgh"
    # the first put takes much longer than the signal
    f.delay_hook = lambda kind, key, n: 50_000 if (kind, n) == ("put", 1) else 0
    p.iput(mr, 0, mr1, 0, 4, peer=1, ctx=0)
    p.iput(mr, 4, mr1, 4, 4, peer=1, ctx=0)
    p.iput_signal(None, 0, None, 0, 0, 1, 0, 0, SignalOp.inc())
    seen = []
    q.endpoint.signal_observers.append(lambda *a: seen.append(bytes(bufs[1][:8])))
    f.run_until_idle()
    assert seen == [b"abcdefgh"]


def test_test_and_retire():
    f, [(p, mr), (q, mr1)], _ = pair()
    hs = [p.iput(mr, 0, mr1, 0, 8, peer=1, ctx=i % 4, action=CounterInc(0)) for i in range(1000)]
    f.run_until_idle()
    done = set()
    for h in p.completed():
        assert p.test(h)
        p.retire(h)
        done.add(h.id)
    assert done == {h.id for h in hs}
    assert p.outstanding == 0
    with pytest.raises(UnknownHandle):
        p.test(hs[0])


def test_retire_in_flight_rejected():
    f, [(p, mr), (q, mr1)], _ = pair()
    h = p.iput(mr, 0, mr1, 0, 8, peer=1, ctx=0)
    with pytest.raises(UnknownHandle):
        p.retire(h)


def test_create_context():
    f = SimFabric()
    ep = f.endpoint_open(0, [])
    direct = NetPlugin(ep, DIRECT)
    ctxs = [direct.create_context(None, c) for c in range(4)]
    assert len({id(c) for c in ctxs}) == 4
    with pytest.raises(InvalidContext):
        direct.create_context(None, 4)
    with pytest.raises(BackendMismatch):
        NetPlugin(f.endpoint_open(0, [], comm=1), PROXY).create_context(None, 0)


def test_direct_plugin_refuses_proxy_calls():
    f = SimFabric()
    p = NetPlugin(f.endpoint_open(0, []), DIRECT)
    with pytest.raises(BackendMismatch):
        p.iput(None, 0, None, 0, 0, peer=0, ctx=0)
