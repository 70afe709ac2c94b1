"""Pure-numpy LSTM recurrence kernels (fallback for the compiled extension)."""
import numpy as np


def _gates(z, H):
    a = 0.5 * (1.0 + np.tanh(0.5 * z))
    a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    return a


def recurrence_forward(xw, U):
    B, T, G = xw.shape
    H = G // 4
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    acts = np.empty((B, T, G))
    tcs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = _gates(xw[:, t] + h @ U, H)
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H :] * tc
        hs[:, t] = h
        cs[:, t] = c
        acts[:, t] = a
        tcs[:, t] = tc
    return hs, (cs, acts, tcs)


def recurrence_backward(dhs, U, hs, cache):
    cs, acts, tcs = cache
    B, T, H = hs.shape
    dxw = np.empty((B, T, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = acts[:, t]
        i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = tcs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else zeros
        h_prev = hs[:, t - 1] if t > 0 else zeros
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dxw[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        if t > 0:
            dU += h_prev.T @ dz
        dh_next = dz @ U.T
        dc_next = dc * f
    return dxw, dU
