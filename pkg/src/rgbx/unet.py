"""Noise-prediction UNet over the shared latent.

Residual stages with spatial-transformer blocks; each block runs
self-attention over the visual tokens, a gated self-attention adapter over
[visual || projected grounding] tokens that keeps only the visual rows, a
cross-attention over the caption embedding, and a feed-forward. Adapter
residuals are scaled by mu * tanh(delta) with deltas starting at zero, so
the network begins as its gate-free skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rgbx import autodiff as ad
from rgbx import nn
from rgbx.autodiff import Tensor
from rgbx.conditioning import CaptionEmbedding, GroundingFeature
from rgbx.errors import ShapeError


@dataclass
class UnetConfig:
    z_channels: int = 4
    widths: tuple = (128, 256, 256)
    n_heads: int = 4
    d_ground: int = 256
    d_text: int = 256
    mu: float = 1.0
    include_adapters: bool = True
    dtype: type = np.float32


class GatedSelfAttentionAdapter(nn.Module):
    """Gated self-attention over [visual || grounding] plus a gated FF.

    Token selection keeps only the first n_vis rows of the attention
    output. With both gate scalars at zero the adapter is the identity.
    """

    def __init__(self, d_model: int, d_ground: int, n_heads: int, rng, mu: float = 1.0,
                 dtype=np.float32):
        self.mu = mu
        self.proj = nn.Linear(d_ground, d_model, rng, dtype)
        self.attn = nn.MultiHeadAttention(d_model, n_heads, rng, dtype=dtype)
        self.ff = nn.FeedForward(d_model, rng, dtype)
        self.delta1 = nn.param(np.zeros((), dtype=dtype))
        self.delta2 = nn.param(np.zeros((), dtype=dtype))

    def __call__(self, x: Tensor, grounding: GroundingFeature | None) -> Tensor:
        n_vis = x.shape[1]
        if grounding is not None and grounding.tokens.shape[-2] > 0:
            g = grounding.tokens
            if g.ndim == 2:
                g = ad.reshape(g, (1,) + tuple(g.shape))
            cat = ad.concat([x, self.proj(g)], axis=1)
            key_bias = None
            if grounding.mask is not None:
                valid = np.concatenate(
                    [
                        np.ones((x.shape[0], n_vis), bool),
                        np.atleast_2d(grounding.mask),
                    ],
                    axis=1,
                )
                key_bias = nn.key_padding_bias(valid, x.dtype)
        else:
            cat = x
            key_bias = None
        sa = self.attn(cat, key_bias=key_bias)
        sel = ad.getitem(sa, (slice(None), slice(0, n_vis)))  # token selection
        x = ad.add(x, ad.mul(sel, ad.mul(ad.tanh(self.delta1), self.mu)))
        x = ad.add(x, ad.mul(self.ff(x), ad.mul(ad.tanh(self.delta2), self.mu)))
        return x


def gated_self_attention(x: Tensor, grounding: GroundingFeature | None,
                         adapter: GatedSelfAttentionAdapter) -> Tensor:
    """Functional form of the adapter layer."""
    return adapter(x, grounding)


class SpatialTransformer(nn.Module):
    """Attention block over flattened latent positions."""

    def __init__(self, channels: int, n_heads: int, d_ground: int, d_text: int, rng,
                 mu: float = 1.0, include_adapter: bool = True, dtype=np.float32):
        self.norm = nn.GroupNorm(channels, dtype)
        self.proj_in = nn.Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.ln1 = nn.LayerNorm(channels, dtype)
        self.attn1 = nn.MultiHeadAttention(channels, n_heads, rng, dtype=dtype)
        if include_adapter:
            self.adapter = GatedSelfAttentionAdapter(channels, d_ground, n_heads, rng, mu, dtype)
        self.ln2 = nn.LayerNorm(channels, dtype)
        self.attn2 = nn.MultiHeadAttention(channels, n_heads, rng, d_cond=d_text, dtype=dtype)
        self.ln3 = nn.LayerNorm(channels, dtype)
        self.ff = nn.FeedForward(channels, rng, dtype)
        self.proj_out = nn.Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.proj_out.weight.data[:] = 0.0  # residual branch starts silent

    def __call__(self, x: Tensor, caption: CaptionEmbedding | None,
                 grounding: GroundingFeature | None) -> Tensor:
        b, c, h, w = x.shape
        hid = self.proj_in(self.norm(x))
        hid = ad.transpose(ad.reshape(hid, (b, c, h * w)), (0, 2, 1))  # (B, n_vis, c)
        hid = ad.add(hid, self.attn1(self.ln1(hid)))
        if hasattr(self, "adapter"):
            hid = self.adapter(hid, grounding)
        if caption is not None:
            ctok = caption.tokens
            if ctok.ndim == 2:
                ctok = ad.reshape(ctok, (1,) + tuple(ctok.shape))
            key_bias = None
            if caption.mask is not None:
                key_bias = nn.key_padding_bias(np.atleast_2d(caption.mask), x.dtype)
            hid = ad.add(hid, self.attn2(self.ln2(hid), cond=ctok, key_bias=key_bias))
        hid = ad.add(hid, self.ff(self.ln3(hid)))
        hid = ad.reshape(ad.transpose(hid, (0, 2, 1)), (b, c, h, w))
        return ad.add(x, self.proj_out(hid))


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, d_temb: int, rng, dtype=np.float32):
        self.gn1 = nn.GroupNorm(c_in, dtype)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng, dtype=dtype)
        self.temb_proj = nn.Linear(d_temb, c_out, rng, dtype)
        self.gn2 = nn.GroupNorm(c_out, dtype)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.skip = nn.Conv2d(c_in, c_out, 1, rng, dtype=dtype) if c_in != c_out else None

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(ad.silu(self.gn1(x)))
        t = self.temb_proj(ad.silu(temb))
        h = ad.add(h, ad.reshape(t, (t.shape[0], t.shape[1], 1, 1)))
        h = self.conv2(ad.silu(self.gn2(h)))
        return ad.add(h, x if self.skip is None else self.skip(x))


class DenoiserUNet(nn.Module):
    """Predicts the forward noise from (z_t, t, caption, grounding)."""

    def __init__(self, cfg: UnetConfig, rng):
        self.cfg = cfg
        dtype = cfg.dtype
        widths = list(cfg.widths)
        w0 = widths[0]
        d_temb = 4 * w0
        self.d_temb_in = w0
        self.time_fc1 = nn.Linear(w0, d_temb, rng, dtype)
        self.time_fc2 = nn.Linear(d_temb, d_temb, rng, dtype)
        self.conv_in = nn.Conv2d(cfg.z_channels, w0, 3, rng, dtype=dtype)

        def st(ch):
            return SpatialTransformer(
                ch, cfg.n_heads, cfg.d_ground, cfg.d_text, rng, cfg.mu,
                include_adapter=cfg.include_adapters, dtype=dtype,
            )

        self.down_res = nn.ModuleList()
        self.down_st = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        prev = w0
        for i, w in enumerate(widths):
            self.down_res.append(ResBlock(prev, w, d_temb, rng, dtype))
            self.down_st.append(st(w))
            if i < len(widths) - 1:
                self.downsamplers.append(nn.Conv2d(w, w, 3, rng, stride=2, dtype=dtype))
            prev = w

        self.mid_res1 = ResBlock(prev, prev, d_temb, rng, dtype)
        self.mid_st = st(prev)
        self.mid_res2 = ResBlock(prev, prev, d_temb, rng, dtype)

        self.up_res = nn.ModuleList()
        self.up_st = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for i in reversed(range(len(widths))):
            self.up_res.append(ResBlock(prev + widths[i], widths[i], d_temb, rng, dtype))
            self.up_st.append(st(widths[i]))
            if i > 0:
                self.upsamplers.append(nn.Conv2d(widths[i], widths[i], 3, rng, dtype=dtype))
            prev = widths[i]

        self.norm_out = nn.GroupNorm(prev, dtype)
        self.conv_out = nn.Conv2d(prev, cfg.z_channels, 3, rng, dtype=dtype)
        self.conv_out.weight.data[:] = 0.0
        if self.conv_out.bias is not None:
            self.conv_out.bias.data[:] = 0.0

    def __call__(self, z_t: Tensor | np.ndarray, t: np.ndarray | int,
                 caption: CaptionEmbedding | None = None,
                 grounding: GroundingFeature | None = None) -> Tensor:
        x = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=self.cfg.dtype))
        squeeze = x.ndim == 3
        if squeeze:
            x = ad.reshape(x, (1,) + tuple(x.shape))
        if x.shape[1] != self.cfg.z_channels:
            raise ShapeError(f"latent channels {x.shape[1]} != {self.cfg.z_channels}")
        t_arr = np.full(x.shape[0], t, dtype=np.int64) if np.isscalar(t) else np.asarray(t)
        if t_arr.shape[0] != x.shape[0]:
            raise ShapeError("timestep batch does not match latent batch")
        temb = Tensor(nn.timestep_embedding(t_arr, self.d_temb_in, dtype=self.cfg.dtype))
        temb = self.time_fc2(ad.silu(self.time_fc1(temb)))

        h = self.conv_in(x)
        skips = []
        for i in range(len(self.down_res)):
            h = self.down_res[i](h, temb)
            h = self.down_st[i](h, caption, grounding)
            skips.append(h)
            if i < len(self.downsamplers):
                h = self.downsamplers[i](h)

        h = self.mid_res1(h, temb)
        h = self.mid_st(h, caption, grounding)
        h = self.mid_res2(h, temb)

        for j in range(len(self.up_res)):
            h = ad.concat([h, skips.pop()], axis=1)
            h = self.up_res[j](h, temb)
            h = self.up_st[j](h, caption, grounding)
            if j < len(self.upsamplers):
                h = ad.upsample2(h)
                h = self.upsamplers[j](h)

        out = self.conv_out(ad.silu(self.norm_out(h)))
        return ad.getitem(out, 0) if squeeze else out

    predict_noise = __call__

    def gate_params(self):
        """(name, tensor) pairs for every tanh-gate scalar."""
        return [(n, p) for n, p in self.named_parameters()
                if n.endswith("delta1") or n.endswith("delta2")]
