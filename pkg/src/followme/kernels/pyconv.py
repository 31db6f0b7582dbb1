"""Pure-numpy convolution kernels (fallback backend).

Same-padded 2D cross-correlation plus its backward pass. The forward pass
builds an im2col buffer once and issues a single GEMM; the input gradient
reuses the forward kernel on the flipped, transposed weights. Shapes follow
the torch convention: input [B, Cin, H, W], weights [Cout, Cin, KH, KW] with
odd KH/KW, bias [Cout].
"""

import numpy as np

from ..exceptions import ShapeError

BACKEND = "python"


def _check_conv_args(x, w, b):
    if x.ndim != 4 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"conv2d expects x[B,C,H,W], w[O,C,KH,KW], b[O]; got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: x has {x.shape[1]}, w expects {w.shape[1]}")
    if w.shape[0] != b.shape[0]:
        raise ShapeError(f"bias length {b.shape[0]} != output channels {w.shape[0]}")
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeError(f"kernel sizes must be odd for same padding, got {w.shape[2:]}")


def _im2col(x, kh, kw):
    """All same-padded patches, flattened: [B*H*W, KH*KW*C]."""
    b, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    xt = xp.transpose(0, 2, 3, 1)
    cols = np.empty((b, h, w, kh, kw, c))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xt[:, i:i + h, j:j + w, :]
    return cols.reshape(b * h * w, kh * kw * c)


def _wmat(w):
    """[O, C, KH, KW] -> [KH*KW*C, O] matching the im2col layout."""
    o, c, kh, kw = w.shape
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(kh * kw * c, o)


def conv2d_forward(x, w, b):
    """Same-padded cross-correlation: [B,Cin,H,W] -> [B,Cout,H,W]."""
    _check_conv_args(x, w, b)
    bsz, _, h, ww = x.shape
    o, _, kh, kw = w.shape
    y = _im2col(x, kh, kw) @ _wmat(w)
    y += b
    return np.ascontiguousarray(y.reshape(bsz, h, ww, o).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, dy):
    """Gradients of conv2d_forward: returns (dx, dw, db)."""
    o, c, kh, kw = w.shape
    db = dy.sum(axis=(0, 2, 3))
    dy2d = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(-1, o)
    dwmat = _im2col(x, kh, kw).T @ dy2d
    dw = np.ascontiguousarray(
        dwmat.reshape(kh, kw, c, o).transpose(3, 2, 0, 1))
    # dx is the same-padded correlation of dy with the flipped, transposed kernel
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = conv2d_forward(dy, wf, np.zeros(c))
    return dx, dw, db
