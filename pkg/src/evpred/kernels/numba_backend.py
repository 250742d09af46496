"""Numba-jitted recurrent layer kernels.

Same contracts and cache layout as numpy_backend; the win is fusing the
per-timestep gate arithmetic into compiled loops instead of allocating
numpy temporaries per gate per step. Matrix products still go through
BLAS via np.dot. All kernels are cached to disk, so compilation cost is
paid once per machine.
"""

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def lstm_layer_forward(X, h0, c0, Wx, Wh, b):
    T, B, I = X.shape
    H = h0.shape[1]
    XW = np.dot(X.reshape(T * B, I), Wx).reshape(T, B, 4 * H)
    Hs = np.empty((T, B, H))
    Cs = np.empty((T, B, H))
    G = np.empty((T, B, 4 * H))
    for t in range(T):
        h_prev = Hs[t - 1] if t > 0 else h0
        c_prev = Cs[t - 1] if t > 0 else c0
        pre = np.dot(h_prev, Wh)
        for bb in range(B):
            for j in range(H):
                pi = XW[t, bb, j] + pre[bb, j] + b[j]
                pf = XW[t, bb, H + j] + pre[bb, H + j] + b[H + j]
                pg = XW[t, bb, 2 * H + j] + pre[bb, 2 * H + j] + b[2 * H + j]
                po = XW[t, bb, 3 * H + j] + pre[bb, 3 * H + j] + b[3 * H + j]
                i = 1.0 / (1.0 + math.exp(-pi))
                f = 1.0 / (1.0 + math.exp(-pf))
                g = math.tanh(pg)
                o = 1.0 / (1.0 + math.exp(-po))
                c = f * c_prev[bb, j] + i * g
                G[t, bb, j] = i
                G[t, bb, H + j] = f
                G[t, bb, 2 * H + j] = g
                G[t, bb, 3 * H + j] = o
                Cs[t, bb, j] = c
                Hs[t, bb, j] = o * math.tanh(c)
    return Hs, Cs, G


@njit(cache=True)
def lstm_layer_backward(X, h0, c0, Hs, Cs, G, Wx, Wh, dHs):
    T, B, I = X.shape
    H = h0.shape[1]
    DP = np.empty((T, B, 4 * H))
    WhT = np.ascontiguousarray(Wh.T)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        c_prev = Cs[t - 1] if t > 0 else c0
        for bb in range(B):
            for j in range(H):
                i = G[t, bb, j]
                f = G[t, bb, H + j]
                g = G[t, bb, 2 * H + j]
                o = G[t, bb, 3 * H + j]
                th = math.tanh(Cs[t, bb, j])
                dht = dHs[t, bb, j] + dh[bb, j]
                dct = dc[bb, j] + dht * o * (1.0 - th * th)
                DP[t, bb, j] = dct * g * i * (1.0 - i)
                DP[t, bb, H + j] = dct * c_prev[bb, j] * f * (1.0 - f)
                DP[t, bb, 2 * H + j] = dct * i * (1.0 - g * g)
                DP[t, bb, 3 * H + j] = dht * th * o * (1.0 - o)
                dc[bb, j] = dct * f
        dh = np.dot(DP[t], WhT)
    Hprev = np.empty((T, B, H))
    Hprev[0] = h0
    for t in range(1, T):
        Hprev[t] = Hs[t - 1]
    DP2 = DP.reshape(T * B, 4 * H)
    dWx = np.dot(X.reshape(T * B, I).T, DP2)
    dWh = np.dot(Hprev.reshape(T * B, H).T, DP2)
    db = np.zeros(4 * H)
    for n in range(T * B):
        for k in range(4 * H):
            db[k] += DP2[n, k]
    dX = np.dot(DP2, Wx.T).reshape(T, B, I)
    return dX, dh, dc, dWx, dWh, db


@njit(cache=True)
def gru_layer_forward(X, h0, Wx, Wh, b):
    T, B, I = X.shape
    H = h0.shape[1]
    XW = np.dot(X.reshape(T * B, I), Wx).reshape(T, B, 3 * H)
    Hs = np.empty((T, B, H))
    G = np.empty((T, B, 3 * H))
    Whzr = np.ascontiguousarray(Wh[:, :2 * H])
    Whh = np.ascontiguousarray(Wh[:, 2 * H:])
    rh = np.empty((B, H))
    for t in range(T):
        h_prev = Hs[t - 1] if t > 0 else h0
        pre_zr = np.dot(h_prev, Whzr)
        for bb in range(B):
            for j in range(H):
                z = 1.0 / (1.0 + math.exp(-(XW[t, bb, j] + pre_zr[bb, j] + b[j])))
                r = 1.0 / (1.0 + math.exp(-(XW[t, bb, H + j] + pre_zr[bb, H + j] + b[H + j])))
                G[t, bb, j] = z
                G[t, bb, H + j] = r
                rh[bb, j] = r * h_prev[bb, j]
        pre_hc = np.dot(rh, Whh)
        for bb in range(B):
            for j in range(H):
                hc = math.tanh(XW[t, bb, 2 * H + j] + pre_hc[bb, j] + b[2 * H + j])
                z = G[t, bb, j]
                G[t, bb, 2 * H + j] = hc
                Hs[t, bb, j] = (1.0 - z) * h_prev[bb, j] + z * hc
    return Hs, G


@njit(cache=True)
def gru_layer_backward(X, h0, Hs, G, Wx, Wh, dHs):
    T, B, I = X.shape
    H = h0.shape[1]
    DP = np.empty((T, B, 3 * H))
    WhzrT = np.ascontiguousarray(Wh[:, :2 * H].T)
    WhhT = np.ascontiguousarray(Wh[:, 2 * H:].T)
    dh = np.zeros((B, H))
    dp_hc = np.empty((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = Hs[t - 1] if t > 0 else h0
        for bb in range(B):
            for j in range(H):
                z = G[t, bb, j]
                hc = G[t, bb, 2 * H + j]
                dht = dHs[t, bb, j] + dh[bb, j]
                dp_hc[bb, j] = dht * z * (1.0 - hc * hc)
                DP[t, bb, j] = dht * (hc - h_prev[bb, j]) * z * (1.0 - z)
                DP[t, bb, 2 * H + j] = dp_hc[bb, j]
                dh[bb, j] = dht * (1.0 - z)
        drh = np.dot(dp_hc, WhhT)
        for bb in range(B):
            for j in range(H):
                r = G[t, bb, H + j]
                DP[t, bb, H + j] = drh[bb, j] * h_prev[bb, j] * r * (1.0 - r)
                dh[bb, j] += drh[bb, j] * r
        dh += np.dot(np.ascontiguousarray(DP[t, :, :2 * H]), WhzrT)
    Hprev = np.empty((T, B, H))
    Hprev[0] = h0
    for t in range(1, T):
        Hprev[t] = Hs[t - 1]
    RH = np.empty((T, B, H))
    for t in range(T):
        for bb in range(B):
            for j in range(H):
                RH[t, bb, j] = G[t, bb, H + j] * Hprev[t, bb, j]
    DP2 = DP.reshape(T * B, 3 * H)
    dWx = np.dot(X.reshape(T * B, I).T, DP2)
    dWh = np.empty((H, 3 * H))
    dWh[:, :2 * H] = np.dot(
        Hprev.reshape(T * B, H).T, np.ascontiguousarray(DP2[:, :2 * H])
    )
    dWh[:, 2 * H:] = np.dot(
        RH.reshape(T * B, H).T, np.ascontiguousarray(DP2[:, 2 * H:])
    )
    db = np.zeros(3 * H)
    for n in range(T * B):
        for k in range(3 * H):
            db[k] += DP2[n, k]
    dX = np.dot(DP2, Wx.T).reshape(T, B, I)
    return dX, dh, dWx, dWh, db
