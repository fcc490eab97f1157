"""Pure numpy recurrences; the reference the compiled kernels must match.

Layout conventions shared with ``_recurrent.pyx``: all arrays are time-major
and C-contiguous float64. ``Zx`` holds the input projection plus bias for
every step. LSTM pre-activations are stacked as [forget, input, output,
candidate] along the last axis, so ``Zx`` is (T, B, 4H) and the recurrent
weight ``Wh`` is (4H, H).
"""

import numpy as np
from scipy.special import expit


def lstm_forward(Zx, Wh):
    T, B, H4 = Zx.shape
    H = H4 // 4
    G = np.empty_like(Zx)
    C = np.empty((T, B, H))
    TC = np.empty((T, B, H))
    Hs = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = Zx[t] + h @ Wh.T
        g = G[t]
        g[:, : 3 * H] = expit(z[:, : 3 * H])
        g[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c = g[:, :H] * c + g[:, H : 2 * H] * g[:, 3 * H :]
        C[t] = c
        TC[t] = np.tanh(c)
        h = g[:, 2 * H : 3 * H] * TC[t]
        Hs[t] = h
    return G, C, TC, Hs


def lstm_backward(dHs, G, C, TC, Wh):
    """Pre-activation gradients dZ (T, B, 4H) given dL/dh_t from the outputs."""
    T, B, H = dHs.shape
    dZ = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        f, i, o, g = (G[t][:, k * H : (k + 1) * H] for k in range(4))
        dh = dHs[t] + dh_next
        tc = TC[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        c_prev = C[t - 1] if t > 0 else np.zeros((B, H))
        dz = dZ[t]
        dz[:, :H] = dc * c_prev * f * (1.0 - f)
        dz[:, H : 2 * H] = dc * g * i * (1.0 - i)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ Wh
    return dZ


def rnn_forward(Zx, Wh):
    T, B, H = Zx.shape
    Hs = np.empty((T, B, H))
    h = np.zeros((B, H))
    for t in range(T):
        h = np.tanh(Zx[t] + h @ Wh.T)
        Hs[t] = h
    return Hs


def rnn_backward(dHs, Hs, Wh):
    T, B, H = dHs.shape
    dZ = np.empty((T, B, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h = Hs[t]
        dZ[t] = (dHs[t] + dh_next) * (1.0 - h * h)
        dh_next = dZ[t] @ Wh
    return dZ
