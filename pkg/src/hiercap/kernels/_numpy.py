"""Pure-numpy lane of the fused LSTM cell kernel.

Reference semantics for the compiled lane: both must produce bit-comparable
results (same order of floating operations is not guaranteed, but both are
validated against finite differences).
"""

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_forward(x, h, c, wx, wh, b):
    """One LSTM cell step.

    x: (I,) input, h/c: (H,) previous hidden/cell, wx: (I, 4H), wh: (H, 4H),
    b: (4H,).  Returns (h_new, c_new, cache); cache feeds the backward pass.
    """
    hidden = h.shape[0]
    gates = x @ wx + h @ wh + b
    i = _sigmoid(gates[:hidden])
    f = _sigmoid(gates[hidden : 2 * hidden])
    o = _sigmoid(gates[2 * hidden : 3 * hidden])
    g = np.tanh(gates[3 * hidden :])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return h_new, c_new, (i, f, o, g, tanh_c)


def lstm_cell_backward(dh, dc, cache, x, h, c, wx, wh):
    """Backward of lstm_cell_forward.

    dh/dc: gradients w.r.t. h_new and c_new.  Returns
    (dx, dh_prev, dc_prev, dwx, dwh, db).
    """
    i, f, o, g, tanh_c = cache
    do = dh * tanh_c
    dct = dc + dh * o * (1.0 - tanh_c * tanh_c)
    di = dct * g
    df = dct * c
    dg = dct * i
    dc_prev = dct * f
    dgates = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ]
    )
    dx = wx @ dgates
    dh_prev = wh @ dgates
    dwx = np.outer(x, dgates)
    dwh = np.outer(h, dgates)
    return dx, dh_prev, dc_prev, dwx, dwh, dgates


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """Bias-corrected Adam update of one parameter array, in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
