"""Pure-numpy reference kernels.

These are the fallback lane; the numba lane must match them bit for bit.
Accumulation order is part of the contract: col2im and blur5 add their
partial terms in a fixed sequence so both lanes agree exactly.
"""

from __future__ import annotations

import numpy as np

# 5-tap binomial filter used by the pyramid, normalized to sum 1.
_B5 = (0.0625, 0.25, 0.375, 0.25, 0.0625)


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (B, C, H, W) into (B, C*k*k, OH*OW) patch columns."""
    b, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    if pad > 0:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    cols = np.empty((b, c, k, k, oh, ow), dtype=x.dtype)
    for ky in range(k):
        ye = ky + stride * oh
        for kx in range(k):
            xe = kx + stride * ow
            cols[:, :, ky, kx] = xp[:, :, ky:ye:stride, kx:xe:stride]
    return cols.reshape(b, c * k * k, oh * ow)


def col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    """Fold patch columns back onto the input grid (adjoint of im2col)."""
    b, c, h, w = x_shape
    oh = conv_out_size(h, k, stride, pad)
    ow = conv_out_size(w, k, stride, pad)
    cols6 = cols.reshape(b, c, k, k, oh, ow)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        ye = ky + stride * oh
        for kx in range(k):
            xe = kx + stride * ow
            xp[:, :, ky:ye:stride, kx:xe:stride] += cols6[:, :, ky, kx]
    if pad > 0:
        return xp[:, :, pad : pad + h, pad : pad + w]
    return xp


def _clamp_idx(n: int) -> np.ndarray:
    # index map for edge-replicate padding of width 2
    idx = np.arange(-2, n + 2)
    return np.clip(idx, 0, n - 1)


def blur5(x: np.ndarray) -> np.ndarray:
    """Separable 5-tap binomial blur with edge-replicate padding.

    Works on (..., H, W); valid for any H, W >= 1.
    """
    dt = x.dtype.type
    c0, c1, c2, c3, c4 = (dt(c) for c in _B5)
    h, w = x.shape[-2], x.shape[-1]
    xr = x[..., _clamp_idx(h), :]
    t = c0 * xr[..., 0:h, :]
    t = t + c1 * xr[..., 1 : h + 1, :]
    t = t + c2 * xr[..., 2 : h + 2, :]
    t = t + c3 * xr[..., 3 : h + 3, :]
    t = t + c4 * xr[..., 4 : h + 4, :]
    tr = t[..., :, _clamp_idx(w)]
    out = c0 * tr[..., :, 0:w]
    out = out + c1 * tr[..., :, 1 : w + 1]
    out = out + c2 * tr[..., :, 2 : w + 2]
    out = out + c3 * tr[..., :, 3 : w + 3]
    out = out + c4 * tr[..., :, 4 : w + 4]
    return out.astype(x.dtype, copy=False)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2) -> None:
    """One in-place Adam step; scalar args arrive pre-cast to p.dtype.

    c1 and c2 are the bias corrections 1 - beta^t, computed by the caller so
    both kernel lanes see identical scalar values.
    """
    one = p.dtype.type(1.0)
    m *= beta1
    m += (one - beta1) * g
    v *= beta2
    v += (one - beta2) * (g * g)
    mhat = m / c1
    vhat = v / c2
    p -= lr * (mhat / (np.sqrt(vhat) + eps))
