"""Forward/backward kernels on NHWC float64 arrays."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, k):
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    # (N, Ho, Wo, C, k, k) -> rows ordered like w.reshape(F, C*k*k)
    return sliding_window_view(x, (k, k), axis=(1, 2)).reshape(n * ho * wo, c * k * k)


def conv2d_forward(x, w, b):
    """Valid, stride-1 convolution. x: (N, H, W, C), w: (F, C, k, k)."""
    f, c, k, _ = w.shape
    n, h, wd, _ = x.shape
    cols = _im2col(x, k)
    out = cols @ w.reshape(f, -1).T
    out += b
    return out.reshape(n, h - k + 1, wd - k + 1, f), cols


def conv2d_backward(dout, cols, w, need_dx=True):
    """Gradients of a valid convolution; dx is the full correlation with flipped kernels."""
    f, c, k, _ = w.shape
    dflat = dout.reshape(-1, f)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    n, ho, wo, _ = dout.shape
    padded = np.pad(dout, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
    flipped = w[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(f * k * k, c)
    dx = _im2col(padded, k) @ flipped
    return dx.reshape(n, ho + k - 1, wo + k - 1, c), dw, db


def _pool_views(x, size, stride):
    _, h, w, _ = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    return [x[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
            for i in range(size) for j in range(size)]


def maxpool_forward(x, size=2, stride=1):
    """Max pooling; ties go to the first window cell in row-major order."""
    views = _pool_views(x, size, stride)
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    arg = np.full(out.shape, len(views) - 1, dtype=np.int8)
    for idx in range(len(views) - 2, -1, -1):
        arg[views[idx] == out] = idx
    return out, arg


def maxpool_backward(dout, arg, x_shape, size=2, stride=1):
    dx = np.zeros(x_shape)
    for idx, view in enumerate(_pool_views(dx, size, stride)):
        view += np.where(arg == idx, dout, 0.0)
    return dx


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
