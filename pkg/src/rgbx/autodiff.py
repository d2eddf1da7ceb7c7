"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and, when gradients are enabled, remembers the
closure that maps its output gradient onto its parents. The op set is just
large enough for the models in this package: elementwise arithmetic,
matmul, shape ops, reductions, conv2d, nearest upsampling, and embedding
lookup. Everything higher level (normalization, attention, losses) is
composed from these so its gradients come for free.

Float tensors must share a dtype within an expression; python scalars are
cast to the tensor dtype so float32 graphs stay float32.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from rgbx import kernels
from rgbx.errors import ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce grad down to the pre-broadcast shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            # always copy: backward closures may hand the same array to two
            # parents, and grad is mutated in place on later contributions
            self.grad = np.array(g)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and not node.requires_grad:
                node.grad = None  # interior node: free after use

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_const_like(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, e):
        return power(self, e)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _coerce(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = _const_like(a, b)
    if not isinstance(b, Tensor):
        b = _const_like(b, a)
    return a, b


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- arithmetic --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    data = a.data - b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * data / b.data, b.data.shape))

    return _node(data, (a, b), backward)


def power(a: Tensor, e: float) -> Tensor:
    data = a.data**e

    def backward(g):
        a._accumulate(g * (e * a.data ** (e - 1)))

    return _node(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return _node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _node(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * (0.5 / data))

    return _node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - data * data))

    return _node(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _node(data, (a,), backward)


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * s

    def backward(g):
        a._accumulate(g * (s * (1.0 + a.data * (1.0 - s))))

    return _node(data, (a,), backward)


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        a._accumulate(_unbroadcast(ga, a.data.shape))
        b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


# -- shape ops ---------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _node(data, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [t for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def backward(g):
        start = 0
        for t, s in zip(ts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + s)
            t._accumulate(g[tuple(idx)])
            start += s

    return _node(data, tuple(ts), backward)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _node(data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    # shift by a detached max: value-invariant and gradient-exact
    shift = sub(a, Tensor(a.data.max(axis=axis, keepdims=True)))
    e = exp(shift)
    return div(e, tsum(e, axis=axis, keepdims=True))


# -- structured ops ----------------------------------------------------


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    data = weight.data[ids]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[1]))
        weight._accumulate(gw)

    return _node(data, (weight,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution; x (B,Cin,H,W), w (Cout,Cin,K,K), optional bias (Cout,)."""
    bsz, cin, h, wd = x.data.shape
    cout, cin_w, k, _ = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin} vs weight {cin_w}")
    pointwise = k == 1 and stride == 1 and pad == 0
    oh = kernels._impl.conv_out_size(h, k, stride, pad)
    ow = kernels._impl.conv_out_size(wd, k, stride, pad)
    if pointwise:
        cols = x.data.reshape(bsz, cin, h * wd)  # 1x1 conv: plain matmul, no unfold
    else:
        cols = kernels.im2col(x.data, k, stride, pad)  # (B, Cin*K*K, OH*OW)
    wmat = w.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)  # (B, Cout, OH*OW)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(bsz, cout, oh, ow)

    def backward(g):
        g2 = g.reshape(bsz, cout, -1)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
        w._accumulate(gw)
        if b is not None:
            b._accumulate(g2.sum(axis=(0, 2)))
        gcols = np.matmul(wmat.T, g2)
        if pointwise:
            x._accumulate(gcols.reshape(x.data.shape))
        else:
            x._accumulate(kernels.col2im(gcols, x.data.shape, k, stride, pad))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward)


def _norm_core(xg: np.ndarray, eps: float):
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _norm_backward(g_hat: np.ndarray, xhat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    # d/dx of (x - mean)/sqrt(var + eps), with mean/var over the last axis
    m1 = g_hat.mean(axis=-1, keepdims=True)
    m2 = (g_hat * xhat).mean(axis=-1, keepdims=True)
    return inv * (g_hat - m1 - xhat * m2)


def group_norm(x: Tensor, weight: Tensor, bias: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Fused GroupNorm over (B, C, H, W) with per-channel affine."""
    bsz, c, h, w = x.data.shape
    xg = x.data.reshape(bsz, groups, (c // groups) * h * w)
    xhat, inv = _norm_core(xg, eps)
    xhat4 = xhat.reshape(bsz, c, h, w)
    out = xhat4 * weight.data[None, :, None, None] + bias.data[None, :, None, None]

    def backward(g):
        weight._accumulate((g * xhat4).sum(axis=(0, 2, 3)))
        bias._accumulate(g.sum(axis=(0, 2, 3)))
        g_hat = (g * weight.data[None, :, None, None]).reshape(xg.shape)
        x._accumulate(_norm_backward(g_hat, xhat, inv).reshape(x.data.shape))

    return _node(out, (x, weight, bias), backward)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Fused LayerNorm over the last axis with elementwise affine."""
    xhat, inv = _norm_core(x.data, eps)
    out = xhat * weight.data + bias.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        weight._accumulate((g * xhat).sum(axis=red))
        bias._accumulate(g.sum(axis=red))
        x._accumulate(_norm_backward(g * weight.data, xhat, inv))

    return _node(out, (x, weight, bias), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsample of (B, C, H, W)."""
    data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        bsz, c, h2, w2 = g.shape
        x._accumulate(g.reshape(bsz, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _node(data, (x,), backward)


# -- convenience -------------------------------------------------------


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return tmean(mul(d, d))


def gradcheck_dtype(t: Tensor) -> bool:
    return t.data.dtype == np.float64


def num_params(tensors: Iterable[Tensor]) -> int:
    return int(sum(t.data.size for t in tensors))


def default_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def spawn_rng(rng_or_seed, n: int) -> list[np.random.Generator]:
    """Derive n independent deterministic child generators."""
    if isinstance(rng_or_seed, np.random.Generator):
        seeds = rng_or_seed.integers(0, 2**63 - 1, size=n)
        return [np.random.default_rng(int(s)) for s in seeds]
    ss = np.random.SeedSequence(rng_or_seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


PI = math.pi
