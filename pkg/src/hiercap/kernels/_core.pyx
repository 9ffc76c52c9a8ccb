# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled lane of the hot kernels.

Matrix-vector products go through BLAS (numpy); the win over the pure
lane is fusing the elementwise gate math and the optimizer update into
single passes, which dominates at batch size 1.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def lstm_cell_forward(x, h, c, wx, wh, b):
    cdef Py_ssize_t nh = h.shape[0]
    gates_arr = x @ wx
    gates_arr += h @ wh
    gates_arr += b
    cdef double[::1] gates = gates_arr
    cdef double[::1] cv = c

    i_arr = np.empty(nh, dtype=np.float64)
    f_arr = np.empty(nh, dtype=np.float64)
    o_arr = np.empty(nh, dtype=np.float64)
    g_arr = np.empty(nh, dtype=np.float64)
    c_new_arr = np.empty(nh, dtype=np.float64)
    tanh_c_arr = np.empty(nh, dtype=np.float64)
    h_new_arr = np.empty(nh, dtype=np.float64)
    cdef double[::1] iv = i_arr
    cdef double[::1] fv = f_arr
    cdef double[::1] ov = o_arr
    cdef double[::1] gv = g_arr
    cdef double[::1] cn = c_new_arr
    cdef double[::1] tc = tanh_c_arr
    cdef double[::1] hn = h_new_arr
    cdef Py_ssize_t j

    for j in range(nh):
        iv[j] = _sigmoid(gates[j])
        fv[j] = _sigmoid(gates[nh + j])
        ov[j] = _sigmoid(gates[2 * nh + j])
        gv[j] = tanh(gates[3 * nh + j])
        cn[j] = fv[j] * cv[j] + iv[j] * gv[j]
        tc[j] = tanh(cn[j])
        hn[j] = ov[j] * tc[j]

    return h_new_arr, c_new_arr, (i_arr, f_arr, o_arr, g_arr, tanh_c_arr)


def lstm_cell_backward(dh, dc, cache, x, h, c, wx, wh):
    cdef double[::1] iv = cache[0]
    cdef double[::1] fv = cache[1]
    cdef double[::1] ov = cache[2]
    cdef double[::1] gv = cache[3]
    cdef double[::1] tc = cache[4]
    cdef double[::1] dhv = dh
    cdef double[::1] dcv = dc
    cdef double[::1] cv = c
    cdef Py_ssize_t nh = h.shape[0]
    cdef Py_ssize_t j
    cdef double dct, do

    dgates_arr = np.empty(4 * nh, dtype=np.float64)
    cdef double[::1] dgates = dgates_arr
    dc_prev_arr = np.empty(nh, dtype=np.float64)
    cdef double[::1] dcp = dc_prev_arr

    for j in range(nh):
        do = dhv[j] * tc[j]
        dct = dcv[j] + dhv[j] * ov[j] * (1.0 - tc[j] * tc[j])
        dgates[j] = dct * gv[j] * iv[j] * (1.0 - iv[j])
        dgates[nh + j] = dct * cv[j] * fv[j] * (1.0 - fv[j])
        dgates[2 * nh + j] = do * ov[j] * (1.0 - ov[j])
        dgates[3 * nh + j] = dct * iv[j] * (1.0 - gv[j] * gv[j])
        dcp[j] = dct * fv[j]

    dx = wx @ dgates_arr
    dh_prev = wh @ dgates_arr
    dwx = np.outer(x, dgates_arr)
    dwh = np.outer(h, dgates_arr)
    return dx, dh_prev, dc_prev_arr, dwx, dwh, dgates_arr


def adam_update(param, grad, m, v, double lr, double beta1, double beta2,
                double eps, double bc1, double bc2):
    """Single fused pass of the bias-corrected update over flat views."""
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = grad.reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi

    for i in range(n):
        gi = g[i]
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gi
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)
