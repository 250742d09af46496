"""Pure-numpy recurrent layer kernels (reference path).

Shapes are time-major: X is (T, B, I), hidden states are (B, H).
LSTM gate blocks are ordered [i, f, g, o] along the last axis of the
fused weight matrices; GRU blocks are [z, r, hcand].

Both backends implement the same cache layout so the backward kernels are
interchangeable:
  LSTM forward returns (Hs, Cs, G) with G holding activated gates (T, B, 4H).
  GRU forward returns (Hs, G) with G holding (z, r, hcand) as (T, B, 3H).
"""

import numpy as np

NAME = "numpy"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_layer_forward(X, h0, c0, Wx, Wh, b):
    T, B, _ = X.shape
    H = h0.shape[1]
    XW = X @ Wx + b
    Hs = np.empty((T, B, H))
    Cs = np.empty((T, B, H))
    G = np.empty((T, B, 4 * H))
    h, c = h0, c0
    for t in range(T):
        pre = XW[t] + h @ Wh
        i = _sigmoid(pre[:, :H])
        f = _sigmoid(pre[:, H:2 * H])
        g = np.tanh(pre[:, 2 * H:3 * H])
        o = _sigmoid(pre[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        G[t, :, :H] = i
        G[t, :, H:2 * H] = f
        G[t, :, 2 * H:3 * H] = g
        G[t, :, 3 * H:] = o
        Cs[t] = c
        Hs[t] = h
    return Hs, Cs, G


def lstm_layer_backward(X, h0, c0, Hs, Cs, G, Wx, Wh, dHs):
    T, B, I = X.shape
    H = h0.shape[1]
    DP = np.empty((T, B, 4 * H))
    WhT = Wh.T
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = G[t, :, :H]
        f = G[t, :, H:2 * H]
        g = G[t, :, 2 * H:3 * H]
        o = G[t, :, 3 * H:]
        c_prev = Cs[t - 1] if t > 0 else c0
        th = np.tanh(Cs[t])
        dht = dHs[t] + dh
        do = dht * th
        dct = dc + dht * o * (1.0 - th * th)
        DP[t, :, :H] = dct * g * i * (1.0 - i)
        DP[t, :, H:2 * H] = dct * c_prev * f * (1.0 - f)
        DP[t, :, 2 * H:3 * H] = dct * i * (1.0 - g * g)
        DP[t, :, 3 * H:] = do * o * (1.0 - o)
        dc = dct * f
        dh = DP[t] @ WhT
    Hprev = np.concatenate([h0[None], Hs[:-1]], axis=0)
    DP2 = DP.reshape(T * B, 4 * H)
    dWx = X.reshape(T * B, I).T @ DP2
    dWh = Hprev.reshape(T * B, H).T @ DP2
    db = DP2.sum(axis=0)
    dX = (DP2 @ Wx.T).reshape(T, B, I)
    return dX, dh, dc, dWx, dWh, db


def gru_layer_forward(X, h0, Wx, Wh, b):
    T, B, _ = X.shape
    H = h0.shape[1]
    XW = X @ Wx + b
    Hs = np.empty((T, B, H))
    G = np.empty((T, B, 3 * H))
    Whzr = Wh[:, :2 * H]
    Whh = Wh[:, 2 * H:]
    h = h0
    for t in range(T):
        pre_zr = XW[t, :, :2 * H] + h @ Whzr
        z = _sigmoid(pre_zr[:, :H])
        r = _sigmoid(pre_zr[:, H:])
        hc = np.tanh(XW[t, :, 2 * H:] + (r * h) @ Whh)
        h = (1.0 - z) * h + z * hc
        G[t, :, :H] = z
        G[t, :, H:2 * H] = r
        G[t, :, 2 * H:] = hc
        Hs[t] = h
    return Hs, G


def gru_layer_backward(X, h0, Hs, G, Wx, Wh, dHs):
    T, B, I = X.shape
    H = h0.shape[1]
    DP = np.empty((T, B, 3 * H))
    WhzrT = Wh[:, :2 * H].T
    WhhT = Wh[:, 2 * H:].T
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        z = G[t, :, :H]
        r = G[t, :, H:2 * H]
        hc = G[t, :, 2 * H:]
        h_prev = Hs[t - 1] if t > 0 else h0
        dht = dHs[t] + dh
        dz = dht * (hc - h_prev)
        dp_hc = dht * z * (1.0 - hc * hc)
        drh = dp_hc @ WhhT
        dr = drh * h_prev
        DP[t, :, :H] = dz * z * (1.0 - z)
        DP[t, :, H:2 * H] = dr * r * (1.0 - r)
        DP[t, :, 2 * H:] = dp_hc
        dh = dht * (1.0 - z) + drh * r + DP[t, :, :2 * H] @ WhzrT
    Hprev = np.concatenate([h0[None], Hs[:-1]], axis=0)
    RH = G[:, :, H:2 * H] * Hprev
    DP2 = DP.reshape(T * B, 3 * H)
    dWx = X.reshape(T * B, I).T @ DP2
    dWh = np.empty_like(Wh)
    dWh[:, :2 * H] = Hprev.reshape(T * B, H).T @ DP2[:, :2 * H]
    dWh[:, 2 * H:] = RH.reshape(T * B, H).T @ DP2[:, 2 * H:]
    db = DP2.sum(axis=0)
    dX = (DP2 @ Wx.T).reshape(T, B, I)
    return dX, dh, dWx, dWh, db
