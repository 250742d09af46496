"""Deterministic tensor/optimization core.

A minimal reverse-mode tape over float64 numpy arrays: each op computes its
value eagerly and records a closure that scatters gradients back into its
inputs. The graph is rebuilt per batch, so the tape is just a list replayed
in reverse. Heavy recurrent loops live in :mod:`evpred.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import TrainingDivergedError
from .rng import stream_rng


class Var:
    """A float64 array with a gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class Tape:
    """Backward closures in forward order; replayed reversed."""

    def __init__(self):
        self._records = []

    def record(self, fn):
        self._records.append(fn)

    def backward(self):
        for fn in reversed(self._records):
            fn()


class ParameterSet:
    """Named, ordered collection of trainable Vars."""

    def __init__(self):
        self._vars: dict[str, Var] = {}

    def add(self, name: str, value) -> Var:
        if name in self._vars:
            raise ValueError(f"duplicate parameter name {name!r}")
        v = Var(value)
        self._vars[name] = v
        return v

    def __getitem__(self, name) -> Var:
        return self._vars[name]

    def __contains__(self, name):
        return name in self._vars

    def __len__(self):
        return len(self._vars)

    def names(self):
        return list(self._vars)

    def items(self):
        return self._vars.items()

    def zero_grads(self):
        for v in self._vars.values():
            v.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._vars.items()}

    def load(self, values: dict[str, np.ndarray]):
        if set(values) != set(self._vars):
            raise ValueError("parameter-name mismatch")
        for k, v in self._vars.items():
            if values[k].shape != v.value.shape:
                raise ValueError(f"shape mismatch for {k!r}")
            v.value[...] = values[k]


# ---------------------------------------------------------------------------
# taped ops

def affine(x: Var, W: Var, b: Var | None, tape: Tape | None = None) -> Var:
    """y = x @ W + b over the last axis; x may have any number of leading axes."""
    if x.value.shape[-1] != W.value.shape[0]:
        raise ValueError(
            f"affine shape mismatch: x {x.value.shape} vs W {W.value.shape}"
        )
    y = x.value @ W.value
    if b is not None:
        if b.value.shape != (W.value.shape[1],):
            raise ValueError(f"bias shape {b.value.shape} does not match W")
        y = y + b.value
    out = Var(y)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g2 = out.grad.reshape(-1, out.grad.shape[-1])
            x2 = x.value.reshape(-1, x.value.shape[-1])
            W.add_grad(x2.T @ g2)
            if b is not None:
                b.add_grad(g2.sum(axis=0))
            x.add_grad((g2 @ W.value.T).reshape(x.value.shape))
        tape.record(backward)
    return out


def tanh(x: Var, tape: Tape | None = None) -> Var:
    out = Var(np.tanh(x.value))
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            x.add_grad(out.grad * (1.0 - out.value * out.value))
        tape.record(backward)
    return out


def concat(xs: list[Var], tape: Tape | None = None) -> Var:
    """Concatenate along the last axis."""
    out = Var(np.concatenate([x.value for x in xs], axis=-1))
    if tape is not None:
        widths = [x.value.shape[-1] for x in xs]
        def backward():
            if out.grad is None:
                return
            off = 0
            for x, w in zip(xs, widths):
                x.add_grad(out.grad[..., off:off + w])
                off += w
        tape.record(backward)
    return out


def embedding_rows(E: Var, ids: np.ndarray, tape: Tape | None = None) -> Var:
    """Gather embedding rows; ids has any shape, output appends the row width."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= E.value.shape[0]):
        raise ValueError("embedding id out of range")
    out = Var(E.value[ids])
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            if E.grad is None:
                E.grad = np.zeros_like(E.value)
            np.add.at(E.grad, ids, out.grad)
        tape.record(backward)
    return out


def gather_time(x: Var, t_idx: np.ndarray, tape: Tape | None = None) -> Var:
    """Pick x[t_idx[b], b] for each batch column b; x is (T, B, H)."""
    t_idx = np.asarray(t_idx, dtype=np.int64)
    B = x.value.shape[1]
    cols = np.arange(B)
    out = Var(x.value[t_idx, cols])
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            np.add.at(x.grad, (t_idx, cols), out.grad)
        tape.record(backward)
    return out


def time_reverse(x: Var, lengths: np.ndarray, tape: Tape | None = None) -> Var:
    """Reverse each column's valid prefix along the time axis.

    Positions at or beyond the column's length stay in place, so padding
    never migrates into the valid region. The map is an involution, and its
    gradient is the same gather.
    """
    T, B = x.value.shape[0], x.value.shape[1]
    lengths = np.asarray(lengths, dtype=np.int64)
    t = np.arange(T)[:, None]
    idx = np.where(t < lengths[None, :], lengths[None, :] - 1 - t, t)
    cols = np.arange(B)[None, :]
    out = Var(x.value[idx, cols])
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            np.add.at(x.grad, (idx, cols), out.grad)
        tape.record(backward)
    return out


def dropout_mask(shape, p: float, seed: int) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, survivors 1/(1-p)."""
    rng = stream_rng(seed, "dropout")
    return (rng.random(shape) >= p) / (1.0 - p)


def dropout(x, p: float, mode: str = "train", seed: int = 0):
    """Inverted dropout on a plain array; identity when mode == 'infer'."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if mode == "infer" or p == 0.0:
        return x
    return x * dropout_mask(x.shape, p, seed)


def dropout_op(x: Var, p: float, seed: int, train: bool, tape: Tape | None = None) -> Var:
    """Taped inverted dropout; no-op Var passthrough when inactive."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not train or p == 0.0:
        return x
    mask = dropout_mask(x.value.shape, p, seed)
    out = Var(x.value * mask)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            x.add_grad(out.grad * mask)
        tape.record(backward)
    return out


def rnn_layer(x: Var, cell, tape: Tape | None = None,
              h0: Var | None = None, c0: Var | None = None) -> Var:
    """Run a whole recurrent layer (T, B, I) -> (T, B, H) through the kernels.

    ``cell`` is a recurrent.CellParams. h0/c0 default to zeros; when given as
    Vars they receive gradients (used for bridge-initialized decoder layers).
    """
    T, B, I = x.value.shape
    H = cell.hidden_dim
    if I != cell.input_dim:
        raise ValueError(f"layer input width {I} != cell input_dim {cell.input_dim}")
    h0v = h0.value if h0 is not None else np.zeros((B, H))
    if cell.kind == "lstm":
        c0v = c0.value if c0 is not None else np.zeros((B, H))
        Hs, Cs, G = kernels.lstm_layer_forward(
            x.value, h0v, c0v, cell.Wx.value, cell.Wh.value, cell.b.value)
        out = Var(Hs)
        if tape is not None:
            def backward():
                if out.grad is None:
                    return
                dX, dh0, dc0, dWx, dWh, db = kernels.lstm_layer_backward(
                    x.value, h0v, c0v, Hs, Cs, G,
                    cell.Wx.value, cell.Wh.value, out.grad)
                x.add_grad(dX)
                cell.Wx.add_grad(dWx)
                cell.Wh.add_grad(dWh)
                cell.b.add_grad(db)
                if h0 is not None:
                    h0.add_grad(dh0)
                if c0 is not None:
                    c0.add_grad(dc0)
            tape.record(backward)
    elif cell.kind == "gru":
        Hs, G = kernels.gru_layer_forward(
            x.value, h0v, cell.Wx.value, cell.Wh.value, cell.b.value)
        out = Var(Hs)
        if tape is not None:
            def backward():
                if out.grad is None:
                    return
                dX, dh0, dWx, dWh, db = kernels.gru_layer_backward(
                    x.value, h0v, Hs, G, cell.Wx.value, cell.Wh.value, out.grad)
                x.add_grad(dX)
                cell.Wx.add_grad(dWx)
                cell.Wh.add_grad(dWh)
                cell.b.add_grad(db)
                if h0 is not None:
                    h0.add_grad(dh0)
            tape.record(backward)
    else:
        raise ValueError(f"unknown cell kind {cell.kind!r}")
    return out


# ---------------------------------------------------------------------------
# losses

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, target_id: int):
    """Loss and gradient of -log softmax(logits)[target] for a single vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError("logits must be 1-D")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if not 0 <= target_id < logits.shape[0]:
        raise ValueError(f"target id {target_id} out of range [0, {logits.shape[0]})")
    z = logits - logits.max()
    logZ = np.log(np.exp(z).sum())
    loss = max(float(logZ - z[target_id]), 0.0)
    grad = softmax(logits)
    grad[target_id] -= 1.0
    return loss, grad


def masked_cross_entropy(logits: Var, targets: np.ndarray, weights: np.ndarray,
                         tape: Tape | None = None):
    """Weighted token-level cross-entropy over (T, B, V) logits.

    ``weights`` carries both the padding mask and the averaging, so the
    returned scalar is the exact training loss and the recorded backward
    seeds logits.grad directly (this op is the loss root).
    Returns (total, per-position nll (T, B)).
    """
    z = logits.value
    targets = np.asarray(targets, dtype=np.int64)
    if targets.min() < 0 or targets.max() >= z.shape[-1]:
        raise ValueError("target id out of range")
    shifted = z - z.max(axis=-1, keepdims=True)
    logZ = np.log(np.exp(shifted).sum(axis=-1))
    t_idx = np.indices(targets.shape)
    nll = logZ - shifted[(*t_idx, targets)]
    total = float((nll * weights).sum())
    if tape is not None:
        def backward():
            probs = softmax(z)
            probs[(*t_idx, targets)] -= 1.0
            logits.add_grad(probs * weights[..., None])
        tape.record(backward)
    return total, nll


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """Adam moments and hyperparameters; one (m, v) pair per parameter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for name, var in params.items():
            state.m[name] = np.zeros_like(var.value)
            state.v[name] = np.zeros_like(var.value)
        return state


def adam_step(params: ParameterSet, state: AdamState, grad_clip: float = 0.0):
    """One bias-corrected Adam update; clears gradients afterwards.

    Missing gradients count as zero. Non-finite gradients raise
    TrainingDivergedError before any parameter is touched.
    """
    grads = {}
    for name, var in params.items():
        g = var.grad if var.grad is not None else np.zeros_like(var.value)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in {name!r}")
        grads[name] = g
    if grad_clip > 0.0:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > grad_clip:
            scale = grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, var in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        var.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(var.value)):
            raise TrainingDivergedError(f"non-finite parameter {name!r} after update")
    params.zero_grads()


# ---------------------------------------------------------------------------
# verification

def gradient_check(loss_fn, params: ParameterSet, h: float = 1e-5,
                   samples_per_tensor: int = 8, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn()`` must zero grads, run the forward pass, backpropagate into
    ``params`` and return the scalar loss, deterministically (dropout off).
    A random sample of coordinates per tensor is perturbed by +-h.
    """
    base = loss_fn()
    if not np.isfinite(base):
        raise ValueError("loss is not finite")
    analytic = {}
    for name, var in params.items():
        if var.grad is not None and not np.all(np.isfinite(var.grad)):
            raise ValueError(f"non-finite analytic gradient in {name!r}")
        analytic[name] = (var.grad.copy() if var.grad is not None
                          else np.zeros_like(var.value))
    worst = 0.0
    rng = stream_rng(seed, "gradcheck")
    for name, var in params.items():
        flat = var.value.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        k = min(samples_per_tensor, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn()
            flat[idx] = orig - h
            lm = loss_fn()
            flat[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            an = an_flat[idx]
            rel = abs(an - fd) / (abs(an) + abs(fd) + 1e-6)
            worst = max(worst, rel)
    params.zero_grads()
    return worst
