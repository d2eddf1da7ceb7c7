"""Numba-jitted kernels, bit-identical to the numpy lane.

Parity contract: no fastmath, same accumulation order, and all scalar
operands pre-cast to the array dtype so float32 math stays float32. The
parity tests assert exact equality against numpy_impl.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from rgbx.kernels.numpy_impl import _B5, conv_out_size


@njit(cache=True)
def _im2col_jit(xp, cols, k, stride, oh, ow):
    b, c = xp.shape[0], xp.shape[1]
    for bi in range(b):
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    for oy in range(oh):
                        iy = ky + stride * oy
                        for ox in range(ow):
                            cols[bi, ci, ky, kx, oy, ox] = xp[bi, ci, iy, kx + stride * ox]


@njit(cache=True)
def _col2im_jit(cols, xp, k, stride, oh, ow):
    b, c = xp.shape[0], xp.shape[1]
    # ky/kx stay the outer loops: the numpy lane accumulates in this order
    for ky in range(k):
        for kx in range(k):
            for bi in range(b):
                for ci in range(c):
                    for oy in range(oh):
                        iy = ky + stride * oy
                        for ox in range(ow):
                            xp[bi, ci, iy, kx + stride * ox] += cols[bi, ci, ky, kx, oy, ox]


@njit(cache=True)
def _blur5_rows_jit(x, out, c0, c1, c2, c3, c4):
    n, h, w = x.shape
    for i in range(n):
        for y in range(h):
            ym2 = max(y - 2, 0)
            ym1 = max(y - 1, 0)
            yp1 = min(y + 1, h - 1)
            yp2 = min(y + 2, h - 1)
            for xx in range(w):
                t = c0 * x[i, ym2, xx]
                t = t + c1 * x[i, ym1, xx]
                t = t + c2 * x[i, y, xx]
                t = t + c3 * x[i, yp1, xx]
                t = t + c4 * x[i, yp2, xx]
                out[i, y, xx] = t


@njit(cache=True)
def _blur5_cols_jit(x, out, c0, c1, c2, c3, c4):
    n, h, w = x.shape
    for i in range(n):
        for y in range(h):
            for xx in range(w):
                xm2 = max(xx - 2, 0)
                xm1 = max(xx - 1, 0)
                xp1 = min(xx + 1, w - 1)
                xp2 = min(xx + 2, w - 1)
                t = c0 * x[i, y, xm2]
                t = t + c1 * x[i, y, xm1]
                t = t + c2 * x[i, y, xx]
                t = t + c3 * x[i, y, xp1]
                t = t + c4 * x[i, y, xp2]
                out[i, y, xx] = t


@njit(cache=True)
def _adam_jit(p, g, m, v, lr, b1, b2, eps, c1, c2, one):
    for i in range(p.size):
        mi = b1 * m[i]
        mi = mi + (one - b1) * g[i]
        vi = b2 * v[i]
        vi = vi + (one - b2) * (g[i] * g[i])
        m[i] = mi
        v[i] = vi
        mhat = mi / c1
        vhat = vi / c2
        p[i] = p[i] - lr * (mhat / (np.sqrt(vhat) + eps))


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    if pad > 0:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = np.ascontiguousarray(x)
    cols = np.empty((b, c, k, k, oh, ow), dtype=x.dtype)
    _im2col_jit(xp, cols, k, stride, oh, ow)
    return cols.reshape(b, c * k * k, oh * ow)


def col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x_shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    cols6 = np.ascontiguousarray(cols).reshape(b, c, k, k, oh, ow)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    _col2im_jit(cols6, xp, k, stride, oh, ow)
    if pad > 0:
        return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])
    return xp


def blur5(x: np.ndarray) -> np.ndarray:
    dt = x.dtype.type
    c = [dt(v) for v in _B5]
    shape = x.shape
    x3 = np.ascontiguousarray(x).reshape(-1, shape[-2], shape[-1])
    tmp = np.empty_like(x3)
    _blur5_rows_jit(x3, tmp, c[0], c[1], c[2], c[3], c[4])
    out = np.empty_like(x3)
    _blur5_cols_jit(tmp, out, c[0], c[1], c[2], c[3], c[4])
    return out.reshape(shape)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2) -> None:
    one = p.dtype.type(1.0)
    _adam_jit(
        p.reshape(-1), np.ascontiguousarray(g).reshape(-1), m.reshape(-1), v.reshape(-1),
        lr, beta1, beta2, eps, c1, c2, one,
    )
