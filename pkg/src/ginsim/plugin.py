"""Network plugin boundary.

Two semantics share one object:

* proxy semantics: host-side data path (``reg_mr``, ``iput``,
  ``iput_signal``, ``test``) driven by the proxy progress agent;
* direct semantics: ``create_context`` hands out posting objects the
  submitting agents call inline.

The plugin's ``signal`` is an ``iput_signal`` of zero bytes.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from .agents import current_agent
from .core import NO_ACTION, CompletionAction, SignalOp, Window, window_resolve
from .descriptor import NO_WINDOW
from .errors import BackendMismatch, InvalidContext, OutOfBounds, UnknownHandle, UnknownWindow
from .fabric.model import ChannelKey

PROXY = "proxy"
DIRECT = "direct"


@dataclass(frozen=True)
class MrHandle:
    window_id: int
    token: int


@dataclass(eq=False)
class RequestHandle:
    id: int
    key: ChannelKey
    seq: int
    action: CompletionAction
    done: bool = False
    retired: bool = False


class NetPlugin:
    def __init__(self, endpoint, semantics: str = PROXY,
                 on_complete: Optional[Callable[[RequestHandle], None]] = None):
        if semantics not in (PROXY, DIRECT):
            raise ValueError(f"unknown plugin semantics {semantics!r}")
        self.endpoint = endpoint
        self.semantics = semantics
        self.on_complete = on_complete
        self.calls: List[tuple] = []
        self.trace_calls = False
        self._mrs: Dict[int, tuple] = {}
        self._tokens = itertools.count(1)
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._by_seq: Dict[tuple, RequestHandle] = {}
        self._early: set = set()
        self._handles: Dict[int, RequestHandle] = {}
        self._completed: List[RequestHandle] = []
        self.contexts: Dict[int, object] = {}
        if semantics == PROXY:
            endpoint.add_ack_hook(self._on_ack)

    # -- registration ------------------------------------------------------
    def reg_mr(self, window: Window) -> MrHandle:
        if window is None or self.endpoint.windows.get(window.id) is not window:
            raise UnknownWindow("window must be registered with the communicator first")
        with self._lock:
            entry = self._mrs.get(window.id)
            if entry is None:
                entry = self._mrs[window.id] = (window, MrHandle(window.id, next(self._tokens)))
            return entry[1]

    def _window(self, mr: MrHandle) -> Window:
        entry = self._mrs.get(mr.window_id) if mr is not None else None
        if entry is None or entry[1] != mr:
            raise UnknownWindow(f"memory region {mr} is not registered")
        return entry[0]

    # -- proxy-semantics data path -----------------------------------------
    def iput(self, mr_src: Optional[MrHandle], src_offset: int, mr_dst: Optional[MrHandle], dst_offset: int,
             nbytes: int, peer: int, ctx: int, action: CompletionAction = NO_ACTION,
             *, inline: Optional[bytes] = None) -> RequestHandle:
        return self._post(mr_src, src_offset, mr_dst, dst_offset, nbytes, peer, ctx, action, inline, None)

    def iput_signal(self, mr_src: Optional[MrHandle], src_offset: int, mr_dst: Optional[MrHandle],
                    dst_offset: int, nbytes: int, peer: int, ctx: int, signal_id: int, op: SignalOp,
                    action: CompletionAction = NO_ACTION, *, inline: Optional[bytes] = None) -> RequestHandle:
        return self._post(mr_src, src_offset, mr_dst, dst_offset, nbytes, peer, ctx, action, inline,
                          (signal_id, op))

    def signal(self, peer: int, ctx: int, signal_id: int, op: SignalOp,
               action: CompletionAction = NO_ACTION) -> RequestHandle:
        return self.iput_signal(None, 0, None, 0, 0, peer, ctx, signal_id, op, action)

    def _post(self, mr_src, src_offset, mr_dst, dst_offset, nbytes, peer, ctx, action, inline, signal):
        if self.semantics != PROXY:
            raise BackendMismatch("iput is a proxy-semantics operation")
        ep = self.endpoint
        key = ep.channel(ctx, peer)
        if nbytes < 0:
            raise OutOfBounds("negative byte count")
        if mr_dst is None:
            if nbytes:
                raise UnknownWindow("a non-empty put needs a destination region")
            dst_id = NO_WINDOW
        else:
            dst = self._window(mr_dst)
            window_resolve(dst, peer, dst_offset, nbytes)
            dst_id = dst.id
        if inline is not None:
            if len(inline) != nbytes:
                raise ValueError("inline payload length mismatch")
            payload = bytes(inline)
        elif nbytes:
            src = self._window(mr_src)
            payload = bytes(src.local[window_resolve(src, ep.rank, src_offset, nbytes)])
        else:
            payload = b""
        seq = ep.tx_put(key, dst_id, dst_offset, payload)
        if signal is not None:
            ep.tx_signal(key, signal[0], signal[1])
        if self.trace_calls:
            self.calls.append((current_agent(), "iput_signal" if signal else "iput", key, seq))
        h = RequestHandle(next(self._ids), key, seq, action)
        with self._lock:
            self._handles[h.id] = h
            if (key, seq) in self._early:
                self._early.discard((key, seq))
                self._complete_locked(h)
            else:
                self._by_seq[key, seq] = h
        return h

    def _on_ack(self, key: ChannelKey, seq: int) -> None:
        with self._lock:
            h = self._by_seq.pop((key, seq), None)
            if h is None:
                self._early.add((key, seq))
                return
            self._complete_locked(h)

    def _complete_locked(self, h: RequestHandle) -> None:
        h.done = True
        self._completed.append(h)
        if self.on_complete is not None:
            self.on_complete(h)

    def completed(self) -> List[RequestHandle]:
        """Handles that turned complete since the last call (a polling hint)."""
        with self._lock:
            out, self._completed = self._completed, []
        return out

    def test(self, handle: RequestHandle) -> bool:
        h = self._handles.get(handle.id)
        if h is None or h is not handle:
            raise UnknownHandle(f"request {handle.id} is unknown or already retired")
        return h.done

    def retire(self, handle: RequestHandle) -> None:
        if not self.test(handle):
            raise UnknownHandle(f"request {handle.id} is still in flight")
        with self._lock:
            del self._handles[handle.id]
            handle.retired = True

    @property
    def outstanding(self) -> int:
        return len(self._handles)

    # -- direct semantics --------------------------------------------------
    def create_context(self, comm, ctx_index: int):
        if self.semantics != DIRECT:
            raise BackendMismatch("create_context requires direct semantics")
        if not 0 <= ctx_index < self.endpoint.n_contexts:
            raise InvalidContext(f"context {ctx_index} outside [0, {self.endpoint.n_contexts})")
        from .direct import DirectContext

        dctx = self.contexts.get(ctx_index)
        if dctx is None:
            dctx = self.contexts[ctx_index] = DirectContext(comm, self.endpoint, ctx_index)
        return dctx
