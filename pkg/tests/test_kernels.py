import numpy as np
import pytest

from hiercap.kernels import _numpy as pure

compiled = pytest.importorskip("hiercap.kernels._core")


def _random_cell(rng, in_dim=7, hidden=5):
    x = rng.standard_normal(in_dim)
    h = rng.standard_normal(hidden)
    c = rng.standard_normal(hidden)
    wx = rng.standard_normal((in_dim, 4 * hidden))
    wh = rng.standard_normal((hidden, 4 * hidden))
    b = rng.standard_normal(4 * hidden)
    return x, h, c, wx, wh, b


def test_lstm_forward_lanes_agree():
    rng = np.random.default_rng(0)
    for _ in range(20):
        args = _random_cell(rng)
        h_a, c_a, cache_a = pure.lstm_cell_forward(*args)
        h_b, c_b, cache_b = compiled.lstm_cell_forward(*args)
        np.testing.assert_allclose(h_a, h_b, atol=1e-12)
        np.testing.assert_allclose(c_a, c_b, atol=1e-12)
        for u, v in zip(cache_a, cache_b):
            np.testing.assert_allclose(u, v, atol=1e-12)


def test_lstm_backward_lanes_agree():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, h, c, wx, wh, b = _random_cell(rng)
        dh = rng.standard_normal(h.shape[0])
        dc = rng.standard_normal(h.shape[0])
        _, _, cache = pure.lstm_cell_forward(x, h, c, wx, wh, b)
        outs_a = pure.lstm_cell_backward(dh, dc, cache, x, h, c, wx, wh)
        outs_b = compiled.lstm_cell_backward(dh, dc, cache, x, h, c, wx, wh)
        for u, v in zip(outs_a, outs_b):
            np.testing.assert_allclose(u, v, atol=1e-12)


def test_adam_update_lanes_agree():
    rng = np.random.default_rng(2)
    shapes = [(13,), (4, 9), (3, 5)]
    state_a = [(np.zeros(s), np.zeros(s)) for s in shapes]
    state_b = [(np.zeros(s), np.zeros(s)) for s in shapes]
    params_a = [rng.standard_normal(s) for s in shapes]
    params_b = [p.copy() for p in params_a]
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 1e-3
    for t in range(1, 6):
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        grads = [rng.standard_normal(s) for s in shapes]
        for i, g in enumerate(grads):
            pure.adam_update(params_a[i], g, *state_a[i], lr, b1, b2, eps, bc1, bc2)
            compiled.adam_update(params_b[i], g, *state_b[i], lr, b1, b2, eps, bc1, bc2)
    for a, b in zip(params_a, params_b):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backend_reports_a_lane():
    from hiercap import kernels

    assert kernels.BACKEND in ("compiled", "python")
