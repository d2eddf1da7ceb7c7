"""Model building blocks composed from autodiff primitives.

Modules hold parameters as Tensors with requires_grad=True and discover
children by walking instance attributes in insertion order, which keeps
state-dict key order deterministic. Constructors take an explicit
np.random.Generator so weight init is reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from rgbx import autodiff as ad
from rgbx.autodiff import Tensor
from rgbx.errors import ShapeError


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(dtype)


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)
            elif isinstance(value, ModuleList):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{full}.{i}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if strict and (missing or unexpected):
            raise KeyError(f"state dict mismatch: missing={missing[:4]} unexpected={unexpected[:4]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class ModuleList(list):
    pass


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng, dtype=np.float32, bias: bool = True,
                 std: float | None = None):
        if std is None:
            std = 1.0 / math.sqrt(d_in)
        self.weight = param(normal(rng, (d_in, d_out), std, dtype))
        self.bias = param(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1, pad: int | None = None,
                 dtype=np.float32, bias: bool = True, std: float | None = None):
        if pad is None:
            pad = k // 2
        if std is None:
            std = 1.0 / math.sqrt(c_in * k * k)
        self.stride = stride
        self.pad = pad
        self.weight = param(normal(rng, (c_out, c_in, k, k), std, dtype))
        self.bias = param(np.zeros(c_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng, dtype=np.float32, std: float = 0.02):
        self.weight = param(normal(rng, (n, d), std, dtype))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ad.embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.eps = eps
        self.weight = param(np.ones(d, dtype=dtype))
        self.bias = param(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.weight, self.bias, self.eps)


class GroupNorm(Module):
    def __init__(self, channels: int, dtype=np.float32, groups: int | None = None, eps: float = 1e-5):
        if groups is None:
            groups = channels if channels < 8 else 8
        if channels % groups != 0:
            raise ShapeError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.eps = eps
        self.weight = param(np.ones(channels, dtype=dtype))
        self.bias = param(np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.group_norm(x, self.weight, self.bias, self.groups, self.eps)


class FeedForward(Module):
    """MLP with middle-dimensional expansion (default 4x) and SiLU."""

    def __init__(self, d: int, rng, dtype=np.float32, mult: int = 4):
        self.fc1 = Linear(d, mult * d, rng, dtype)
        self.fc2 = Linear(mult * d, d, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.silu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Multi-head attention; q from x, k/v from cond (or x when cond is None).

    Projections carry no bias so an all-zero conditioning sequence
    contributes an exactly-zero value aggregate.
    """

    def __init__(self, d_model: int, n_heads: int, rng, d_cond: int | None = None,
                 dtype=np.float32):
        if d_model % n_heads != 0:
            raise ShapeError(f"d_model {d_model} not divisible by heads {n_heads}")
        d_cond = d_model if d_cond is None else d_cond
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng, dtype, bias=False)
        self.wk = Linear(d_cond, d_model, rng, dtype, bias=False)
        self.wv = Linear(d_cond, d_model, rng, dtype, bias=False)
        self.wo = Linear(d_model, d_model, rng, dtype, bias=False)

    def _split(self, t: Tensor, b: int, n: int) -> Tensor:
        t = ad.reshape(t, (b, n, self.n_heads, self.d_head))
        return ad.transpose(t, (0, 2, 1, 3))

    def __call__(self, x: Tensor, cond: Tensor | None = None,
                 key_bias: np.ndarray | None = None) -> Tensor:
        b, n, _ = x.shape
        src = x if cond is None else cond
        m = src.shape[1]
        q = self._split(self.wq(x), b, n)
        k = self._split(self.wk(src), b, m)
        v = self._split(self.wv(src), b, m)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.d_head))
        if key_bias is not None:
            scores = ad.add(scores, Tensor(key_bias.astype(scores.dtype, copy=False)))
        attn = ad.softmax(scores, axis=-1)
        out = ad.matmul(attn, v)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, n, self.n_heads * self.d_head))
        return self.wo(out)


def key_padding_bias(valid: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(B, m) validity mask -> (B, 1, 1, m) additive attention bias."""
    bias = np.where(valid, 0.0, -1e9).astype(dtype)
    return bias[:, None, None, :]


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0,
                       dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps; t (B,) -> (B, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2 == 1:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(dtype)
