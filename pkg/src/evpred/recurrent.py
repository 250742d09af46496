"""LSTM/GRU cells, directional layers, and the bidirectional encoder.

Cell equations (gate blocks fused into one weight matrix per direction):
  LSTM  [i, f, g, o]: i,f,o = sigmoid(x Wx + h Wh + b), g = tanh(...),
                      c' = f*c + i*g,  h' = o*tanh(c')
  GRU   [z, r, hcand]: z,r = sigmoid(...), hcand = tanh(x Wxh + (r*h) Whh + bh),
                      h' = (1-z)*h + z*hcand

Public step/layer functions here are the pure (inference/test) path; training
uses the taped layer op in numerics, which calls the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import ParameterSet, Var
from .rng import stream_rng


@dataclass
class CellParams:
    """Fused gate parameters of one directional cell."""

    kind: str           # "lstm" | "gru"
    input_dim: int
    hidden_dim: int
    Wx: Var             # (input_dim, gates*H)
    Wh: Var             # (H, gates*H)
    b: Var              # (gates*H,)


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None   # LSTM only


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_cell_params(kind: str, input_dim: int, hidden_dim: int,
                     params: ParameterSet, prefix: str, seed: int) -> CellParams:
    """Glorot-uniform weights, zero biases; LSTM forget-gate bias starts at +1."""
    if kind not in ("lstm", "gru"):
        raise ValueError(f"unknown cell kind {kind!r}")
    gates = 4 if kind == "lstm" else 3
    width = gates * hidden_dim
    rng_x = stream_rng(seed, "init", prefix + "_Wx")
    rng_h = stream_rng(seed, "init", prefix + "_Wh")
    b = np.zeros(width)
    if kind == "lstm":
        b[hidden_dim:2 * hidden_dim] = 1.0
    return CellParams(
        kind=kind,
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        Wx=params.add(prefix + "_Wx", _glorot(rng_x, input_dim, width, (input_dim, width))),
        Wh=params.add(prefix + "_Wh", _glorot(rng_h, hidden_dim, width, (hidden_dim, width))),
        b=params.add(prefix + "_b", b),
    )


def _promote(x, dim, what):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"{what} must be 1-D or 2-D, got shape {x.shape}")


def lstm_step(x, state: CellState, p: CellParams) -> CellState:
    """One LSTM step; x is (input_dim,) or (B, input_dim)."""
    if p.kind != "lstm":
        raise ValueError("lstm_step requires LSTM params")
    xb, squeeze = _promote(x, p.input_dim, "x")
    if xb.shape[1] != p.input_dim:
        raise ValueError(f"input width {xb.shape[1]} != {p.input_dim}")
    hb, _ = _promote(state.h, p.hidden_dim, "h")
    cb, _ = _promote(state.c if state.c is not None else np.zeros_like(state.h),
                     p.hidden_dim, "c")
    if hb.shape[1] != p.hidden_dim:
        raise ValueError(f"state width {hb.shape[1]} != {p.hidden_dim}")
    Hs, Cs, _ = kernels.lstm_layer_forward(
        xb[None], hb, cb, p.Wx.value, p.Wh.value, p.b.value)
    h, c = Hs[0], Cs[0]
    if squeeze:
        return CellState(h=h[0], c=c[0])
    return CellState(h=h, c=c)


def gru_step(x, state: CellState, p: CellParams) -> CellState:
    """One GRU step; x is (input_dim,) or (B, input_dim)."""
    if p.kind != "gru":
        raise ValueError("gru_step requires GRU params")
    xb, squeeze = _promote(x, p.input_dim, "x")
    if xb.shape[1] != p.input_dim:
        raise ValueError(f"input width {xb.shape[1]} != {p.input_dim}")
    hb, _ = _promote(state.h, p.hidden_dim, "h")
    if hb.shape[1] != p.hidden_dim:
        raise ValueError(f"state width {hb.shape[1]} != {p.hidden_dim}")
    Hs, _ = kernels.gru_layer_forward(xb[None], hb, p.Wx.value, p.Wh.value, p.b.value)
    h = Hs[0]
    if squeeze:
        return CellState(h=h[0])
    return CellState(h=h)


def cell_step(x, state: CellState, p: CellParams) -> CellState:
    return lstm_step(x, state, p) if p.kind == "lstm" else gru_step(x, state, p)


def run_layer(inputs, p: CellParams, direction: str = "fwd") -> np.ndarray:
    """Run one direction over a full sequence from a zero initial state.

    inputs is (T, input_dim) or (T, B, input_dim); the backward direction
    consumes the reversed sequence and returns outputs re-reversed to source
    order.
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError(f"unknown direction {direction!r}")
    X = np.ascontiguousarray(inputs, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"inputs must be (T, I) or (T, B, I), got {X.shape}")
    T, B, I = X.shape
    if T == 0:
        raise ValueError("empty input sequence")
    if I != p.input_dim:
        raise ValueError(f"input width {I} != cell input_dim {p.input_dim}")
    if direction == "bwd":
        X = np.ascontiguousarray(X[::-1])
    h0 = np.zeros((B, p.hidden_dim))
    if p.kind == "lstm":
        Hs, _, _ = kernels.lstm_layer_forward(
            X, h0, np.zeros_like(h0), p.Wx.value, p.Wh.value, p.b.value)
    else:
        Hs, _ = kernels.gru_layer_forward(X, h0, p.Wx.value, p.Wh.value, p.b.value)
    if direction == "bwd":
        Hs = Hs[::-1]
    return Hs[:, 0, :] if single else Hs


@dataclass
class EncoderStates:
    """Per-position encoder vectors plus per-layer summary vectors.

    states is (m, width) with width = 2H for bidirectional layers, H
    otherwise; summaries[l] is the concatenation of layer l's forward-final
    and backward-first states (or just forward-final when unidirectional).
    """

    states: np.ndarray
    summaries: list[np.ndarray]

    @property
    def summary(self) -> np.ndarray:
        return self.summaries[-1]

    def __len__(self):
        return self.states.shape[0]


def encode_bidirectional(ids, layers, embeddings: np.ndarray) -> EncoderStates:
    """Encode one id sequence through stacked (fwd, bwd) layer pairs.

    ``layers`` is a list of (CellParams, CellParams | None) pairs; a None
    backward half makes that layer unidirectional. Layer 1 consumes embedded
    tokens, deeper layers the previous layer's full concatenated outputs.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("empty id sequence")
    x = embeddings[np.asarray(ids, dtype=np.int64)]
    summaries = []
    for fwd, bwd in layers:
        fw = run_layer(x, fwd, "fwd")
        if bwd is not None:
            bw = run_layer(x, bwd, "bwd")
            x = np.concatenate([fw, bw], axis=-1)
            summaries.append(np.concatenate([fw[-1], bw[0]]))
        else:
            x = fw
            summaries.append(fw[-1].copy())
    return EncoderStates(states=x, summaries=summaries)
