# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (hot path of model training).

Same-padded 2D cross-correlation and its backward pass. Loops are arranged
so the innermost axis (W) is contiguous in both input and output, with the
valid index ranges hoisted out of the inner loops; the input gradient reuses
the forward kernel on the flipped, transposed weights. Semantics mirror
pyconv exactly; argument validation happens in the dispatching wrapper.
"""

import numpy as np


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, const double[::1] b):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t ph = KH // 2, pw = KW // 2
    y_arr = np.empty((B, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t bi, o, c, kh, kw, h, v, dh, dw, h0, h1, w0, w1
    cdef double wv, bv
    with nogil:
        for bi in range(B):
            for o in range(O):
                bv = b[o]
                for h in range(H):
                    for v in range(W):
                        y[bi, o, h, v] = bv
                for c in range(C):
                    for kh in range(KH):
                        dh = kh - ph
                        h0 = -dh if dh < 0 else 0
                        h1 = H - dh if dh > 0 else H
                        for kw in range(KW):
                            dw = kw - pw
                            w0 = -dw if dw < 0 else 0
                            w1 = W - dw if dw > 0 else W
                            wv = w[o, c, kh, kw]
                            if wv == 0.0:
                                continue
                            for h in range(h0, h1):
                                for v in range(w0, w1):
                                    y[bi, o, h, v] += wv * x[bi, c, h + dh, v + dw]
    return y_arr


def conv2d_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[:, :, :, ::1] dy):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t ph = KH // 2, pw = KW // 2
    dw_arr = np.zeros((O, C, KH, KW), dtype=np.float64)
    db_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, :, :, ::1] dwv = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t bi, o, c, kh, kw, h, v, dh, dwo, h0, h1, w0, w1
    cdef double acc
    with nogil:
        for o in range(O):
            acc = 0.0
            for bi in range(B):
                for h in range(H):
                    for v in range(W):
                        acc += dy[bi, o, h, v]
            db[o] = acc
        for o in range(O):
            for c in range(C):
                for kh in range(KH):
                    dh = kh - ph
                    h0 = -dh if dh < 0 else 0
                    h1 = H - dh if dh > 0 else H
                    for kw in range(KW):
                        dwo = kw - pw
                        w0 = -dwo if dwo < 0 else 0
                        w1 = W - dwo if dwo > 0 else W
                        acc = 0.0
                        for bi in range(B):
                            for h in range(h0, h1):
                                for v in range(w0, w1):
                                    acc += dy[bi, o, h, v] * x[bi, c, h + dh, v + dwo]
                        dwv[o, c, kh, kw] = acc
    wf = np.ascontiguousarray(np.asarray(w)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx_arr = conv2d_forward(dy, wf, np.zeros(C, dtype=np.float64))
    return dx_arr, dw_arr, db_arr
