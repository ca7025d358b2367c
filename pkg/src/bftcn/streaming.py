"""Frame-by-frame inference with a fixed output delay.

The network is flattened into a chain of temporal nodes. A node with past
reach ``p`` and future reach ``f`` keeps the last ``p + f + 1`` input columns
and computes output column ``t`` as soon as input column ``t + f`` arrives.
Only the (D)DRLs have ``f > 0``; pointwise convolutions and softmax are
per-column. The chain's total future reach is the network's future window, so
frame ``t`` leaves the last node during the push of frame ``t + FW``.

At close each node computes its remaining columns reading zeros past the end,
which is exactly the offline zero padding.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import seqcore as sc
from .model import LayerSpec, ModelParameters, stage_layout
from .window import future_window


class StreamClosed(RuntimeError):
    pass


@dataclass
class StreamOutput:
    t: int
    probs: np.ndarray
    label: int
    emitted_at_frame: int  # index of the last ingested frame when emitted

    @property
    def delay_frames(self) -> int:
        return self.emitted_at_frame - self.t

    def to_dict(self) -> dict:
        return {"t": self.t, "label": self.label, "probs": [float(p) for p in self.probs],
                "emitted_at_frame": self.emitted_at_frame, "delay_frames": self.delay_frames}


class _Node:
    """Windowed column map: y[t] = fn(x[t-past .. t+future]) with zero fill."""

    def __init__(self, past: int, future: int, fn: Callable[[list], np.ndarray], n_in: int):
        self.past = past
        self.future = future
        self.fn = fn
        self.n_in = n_in
        self.buf: deque = deque(maxlen=past + future + 1)
        self.received = 0
        self.produced = 0
        self.peak = 0
        self._zero = np.zeros(n_in)

    def _column(self, i: int, limit: int) -> np.ndarray:
        if i < 0 or i >= limit:
            return self._zero
        # buf holds columns received-len(buf) .. received-1
        return self.buf[i - (self.received - len(self.buf))]

    def _emit(self, t: int, limit: int) -> np.ndarray:
        window = [self._column(t + k, limit) for k in range(-self.past, self.future + 1)]
        self.produced += 1
        return self.fn(window)

    def push(self, col: np.ndarray) -> list[np.ndarray]:
        self.buf.append(col)
        self.received += 1
        self.peak = max(self.peak, len(self.buf))
        out = []
        while self.produced + self.future < self.received:
            out.append(self._emit(self.produced, limit=self.received))
        return out

    def flush(self) -> list[np.ndarray]:
        out = []
        while self.produced < self.received:
            out.append(self._emit(self.produced, limit=self.received))
        return out


def _pointwise_node(w: np.ndarray, b: np.ndarray) -> _Node:
    return _Node(0, 0, lambda win: w @ win[0] + b, w.shape[1])


def _softmax_node(n: int) -> _Node:
    def fn(win):
        z = win[0]
        e = np.exp(z - z.max())
        return e / e.sum()
    return _Node(0, 0, fn, n)


def _residual_node(model: ModelParameters, layer: LayerSpec) -> _Node:
    P = model.params
    past = layer.past_reach
    convs = []
    for c in layer.convs:
        w = P[f"{c.name}.w"]
        # window index of each tap: centre is at position `past`
        taps = [past + off for off in (c.future_pad - 2 * c.dilation, c.future_pad - c.dilation, c.future_pad)]
        convs.append((w, P[f"{c.name}.b"], taps))
    merge = (P[f"{layer.prefix}.merge.w"], P[f"{layer.prefix}.merge.b"]) if layer.dual else None
    w_out, b_out = P[f"{layer.prefix}.out.w"], P[f"{layer.prefix}.out.b"]

    def fn(win):
        branches = []
        for w, b, taps in convs:
            h = b.copy()
            for k, idx in enumerate(taps):
                h += w[:, :, k] @ win[idx]
            branches.append(h)
        if merge is not None:
            h = merge[0] @ np.concatenate(branches) + merge[1]
        else:
            h = branches[0]
        return win[past] + w_out @ np.maximum(h, 0.0) + b_out

    return _Node(past, layer.future_reach, fn, model.config.n_feature_maps)


def build_chain(model: ModelParameters) -> list[_Node]:
    cfg = model.config
    P = model.params
    chain = []
    for stage in stage_layout(cfg, model.n_input):
        chain.append(_pointwise_node(P[f"{stage.prefix}.in.w"], P[f"{stage.prefix}.in.b"]))
        chain.extend(_residual_node(model, layer) for layer in stage.layers)
        chain.append(_pointwise_node(P[f"{stage.prefix}.head.w"], P[f"{stage.prefix}.head.b"]))
        chain.append(_softmax_node(cfg.n_classes))
    return chain


class StreamState:
    """Online inference session over one immutable model (eval mode, no dropout)."""

    def __init__(self, model: ModelParameters):
        self.model = model
        self.delay = future_window(model.config)
        self.nodes = build_chain(model)
        self.ingested = 0
        self.emitted = 0
        self.closed = False

    def _cascade(self, cols: list, start: int, flush: bool = False) -> list[np.ndarray]:
        for node in self.nodes[start:]:
            nxt = []
            for c in cols:
                nxt.extend(node.push(c))
            if flush:
                nxt.extend(node.flush())
            cols = nxt
        return cols

    def _wrap(self, cols) -> list[StreamOutput]:
        out = []
        for p in cols:
            out.append(StreamOutput(self.emitted, p, int(np.argmax(p)), self.ingested - 1))
            self.emitted += 1
        return out

    def push(self, feature_vector) -> list[StreamOutput]:
        if self.closed:
            raise StreamClosed("push after close")
        x = np.asarray(feature_vector, dtype=sc.DTYPE)
        if x.shape != (self.model.n_input,):
            raise sc.ShapeError(f"expected a {self.model.n_input}-dim frame, got shape {x.shape}")
        self.ingested += 1
        return self._wrap(self._cascade([x], 0))

    def close(self) -> list[StreamOutput]:
        if self.closed:
            raise StreamClosed("stream already closed")
        self.closed = True
        return self._wrap(self._cascade([], 0, flush=True))

    def buffered_columns(self) -> list[int]:
        return [len(n.buf) for n in self.nodes]

    def peak_buffered_columns(self) -> list[int]:
        return [n.peak for n in self.nodes]

    def node_capacities(self) -> list[int]:
        return [n.buf.maxlen for n in self.nodes]


def open_stream(model: ModelParameters) -> StreamState:
    return StreamState(model)


def push_frame(state: StreamState, feature_vector) -> list[StreamOutput]:
    return state.push(feature_vector)


def close_stream(state: StreamState) -> list[StreamOutput]:
    return state.close()


def run_stream(model: ModelParameters, features) -> list[StreamOutput]:
    """Stream a whole (T, n_input) sequence through a fresh session."""
    state = open_stream(model)
    out = []
    for row in np.asarray(features, dtype=sc.DTYPE):
        out.extend(state.push(row))
    out.extend(state.close())
    return out
