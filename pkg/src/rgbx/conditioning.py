"""Joint-modality conditioning: layout tokens, caption embedding, gated fusion.

The embedder turns a layout condition (labeled boxes or a dense map) into
grounding tokens, a caption into a token-sequence embedding, and fuses the
two with a gated cross-attention + feed-forward pair whose learnable gate
scalars start at zero, so fusion begins as the identity on the layout
tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rgbx import autodiff as ad
from rgbx import nn
from rgbx.autodiff import Tensor
from rgbx.errors import CaptionError, LayoutError, ShapeError

LAYOUT_VARIANTS = ("boxes", "semantic_mask", "salient_map", "edge_map")

MAX_CAPTION_TOKENS = 248

PAD_ID = 0
UNK_ID = 1

# Synthetic-caption vocabulary. Real captions need a user-supplied tokenizer;
# unknown words map to <unk>.
DEFAULT_VOCAB = (
    ["<pad>", "<unk>", ",", ".", ":"]
    + ["a", "an", "the", "scene", "with", "objects", "object", "at", "and", "empty"]
    + ["daytime", "nighttime"]
    + [str(i) for i in range(0, 31)]
    + ["small", "medium", "large"]
    + ["red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange", "gray"]
    + ["circle", "rectangle", "triangle"]
    + ["top", "bottom", "left", "right", "center"]
)


@dataclass
class LayoutCondition:
    """Tagged layout: labeled boxes, a semantic class map, or a real-valued map."""

    variant: str
    boxes: np.ndarray | None = None   # (n, 4) floats in [0, 1], x0 y0 x1 y1
    labels: list[str] = field(default_factory=list)
    mask: np.ndarray | None = None    # (H, W) int classes, or float map in [-1, 1]

    def validate(self, n_max: int = 30, n_classes: int | None = None):
        if self.variant not in LAYOUT_VARIANTS:
            raise LayoutError(f"unknown layout variant {self.variant!r}")
        if self.variant == "boxes":
            if self.boxes is None or len(self.boxes) != len(self.labels):
                raise LayoutError("boxes layout needs boxes and matching labels")
            if len(self.boxes) > n_max:
                raise LayoutError(f"{len(self.boxes)} boxes exceeds limit {n_max}")
            b = np.asarray(self.boxes, dtype=np.float64)
            if b.size and (b.min() < 0.0 or b.max() > 1.0):
                raise LayoutError("box coordinates must lie in [0, 1]")
            if b.size and (np.any(b[:, 0] >= b[:, 2]) or np.any(b[:, 1] >= b[:, 3])):
                raise LayoutError("boxes must satisfy x0 < x1 and y0 < y1")
        else:
            if self.mask is None:
                raise LayoutError(f"{self.variant} layout needs a mask array")
            if self.variant == "semantic_mask" and n_classes is not None:
                if self.mask.max(initial=0) >= n_classes:
                    raise LayoutError(f"mask class id >= configured class count {n_classes}")
        return self


@dataclass
class GroundingFeature:
    """Layout token sequence consumed by the gated attention adapters."""

    tokens: Tensor                   # (n, d) or (B, n, d)
    mask: np.ndarray | None = None   # validity over tokens, (n,) or (B, n)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-2]


@dataclass
class CaptionEmbedding:
    """Caption token embeddings; dropped captions are exactly all-zero."""

    tokens: Tensor                   # (L, d) or (B, L, d)
    is_dropped: bool | np.ndarray = False
    mask: np.ndarray | None = None   # validity over tokens, (L,) or (B, L)

    def zeros_like(self) -> "CaptionEmbedding":
        return CaptionEmbedding(
            tokens=Tensor(np.zeros_like(self.tokens.data)),
            is_dropped=True,
            mask=self.mask,
        )


class Tokenizer:
    """Lowercase whitespace tokenizer over a fixed word vocabulary."""

    def __init__(self, vocab: list[str] | None = None, max_tokens: int = MAX_CAPTION_TOKENS):
        self.vocab = list(vocab) if vocab is not None else list(DEFAULT_VOCAB)
        self.max_tokens = max_tokens
        self.index = {w: i for i, w in enumerate(self.vocab)}

    def __len__(self) -> int:
        return len(self.vocab)

    def encode(self, text: str, truncate: bool = False) -> np.ndarray:
        words = []
        for raw in text.lower().split():
            core = raw
            trail = []
            while core and core[-1] in ",.:;":
                trail.append(core[-1])
                core = core[:-1]
            if core:
                words.append(core)
            words.extend(reversed(trail))
        ids = [self.index.get(w, UNK_ID) for w in words]
        if not ids:
            ids = [PAD_ID]
        if len(ids) > self.max_tokens:
            if not truncate:
                raise CaptionError(
                    f"caption has {len(ids)} tokens, budget is {self.max_tokens}"
                )
            ids = ids[: self.max_tokens]
        return np.asarray(ids, dtype=np.int64)


class TextEncoder(nn.Module):
    """Small trainable transformer mapping token ids to (L, d_text)."""

    def __init__(self, vocab_size: int, d_text: int, rng, n_layers: int = 2,
                 n_heads: int = 4, max_tokens: int = MAX_CAPTION_TOKENS, dtype=np.float32):
        self.max_tokens = max_tokens
        self.tok = nn.Embedding(vocab_size, d_text, rng, dtype)
        self.pos = nn.param(nn.normal(rng, (max_tokens, d_text), 0.02, dtype))
        self.blocks = nn.ModuleList()
        for _ in range(n_layers):
            blk = nn.Module()
            blk.ln1 = nn.LayerNorm(d_text, dtype)
            blk.attn = nn.MultiHeadAttention(d_text, n_heads, rng, dtype=dtype)
            blk.ln2 = nn.LayerNorm(d_text, dtype)
            blk.ff = nn.FeedForward(d_text, rng, dtype)
            self.blocks.append(blk)
        self.ln_out = nn.LayerNorm(d_text, dtype)

    def __call__(self, ids: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
        ids = np.asarray(ids)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None, :]
        if ids.shape[1] > self.max_tokens:
            raise CaptionError(f"{ids.shape[1]} tokens exceeds budget {self.max_tokens}")
        x = ad.add(self.tok(ids), ad.getitem(self.pos, slice(0, ids.shape[1])))
        bias = None if valid is None else nn.key_padding_bias(valid, x.dtype)
        for blk in self.blocks:
            x = ad.add(x, blk.attn(blk.ln1(x), key_bias=bias))
            x = ad.add(x, blk.ff(blk.ln2(x)))
        x = self.ln_out(x)
        return ad.getitem(x, 0) if squeeze else x


def fourier_embed(box: np.ndarray, n_freqs: int) -> np.ndarray:
    """Fourier features of a 4-vector: sin/cos of 2^k * pi * coord.

    Layout is coordinate-major: for each of the 4 coordinates, n_freqs
    (sin, cos) pairs, giving 8 * n_freqs values.
    """
    b = np.asarray(box, dtype=np.float64).reshape(-1)
    if b.shape != (4,):
        raise ShapeError(f"expected a 4-vector box, got shape {b.shape}")
    if b.min() < 0.0 or b.max() > 1.0:
        raise LayoutError("box coordinates must lie in [0, 1]")
    k = np.arange(n_freqs, dtype=np.float64)
    args = (2.0**k)[None, :] * math.pi * b[:, None]  # (4, F)
    feats = np.stack([np.sin(args), np.cos(args)], axis=-1)  # (4, F, 2)
    return feats.reshape(-1)


class BoxEmbedder(nn.Module):
    """Per-box grounding tokens from Fourier codes and label embeddings."""

    def __init__(self, label_vocab: list[str], d_ground: int, rng, n_freqs: int = 8,
                 d_label: int = 64, dtype=np.float32):
        self.label_index = {w: i for i, w in enumerate(label_vocab)}
        self.n_freqs = n_freqs
        self.dtype = dtype
        self.label_emb = nn.Embedding(len(label_vocab), d_label, rng, dtype)
        self.fc1 = nn.Linear(8 * n_freqs + d_label, d_ground, rng, dtype)
        self.fc2 = nn.Linear(d_ground, d_ground, rng, dtype)

    def __call__(self, boxes: np.ndarray, labels: list[str]) -> GroundingFeature:
        boxes = np.asarray(boxes, dtype=np.float64)
        if boxes.ndim != 2 or boxes.shape[1] != 4 or boxes.shape[0] < 1:
            raise LayoutError(f"expected (n, 4) boxes with n >= 1, got {boxes.shape}")
        if len(labels) != boxes.shape[0]:
            raise LayoutError("label count must match box count")
        unknown = [l for l in labels if l not in self.label_index]
        if unknown:
            raise LayoutError(f"unknown labels {unknown!r}")
        codes = np.stack([fourier_embed(b, self.n_freqs) for b in boxes]).astype(self.dtype)
        ids = np.asarray([self.label_index[l] for l in labels])
        h = ad.concat([Tensor(codes), self.label_emb(ids)], axis=-1)
        tokens = self.fc2(ad.silu(self.fc1(h)))
        return GroundingFeature(tokens=tokens)


def one_hot_mask(mask: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    """(H, W) integer class map -> (n_classes, H, W) one-hot planes."""
    mask = np.asarray(mask)
    if mask.min(initial=0) < 0 or mask.max(initial=0) >= n_classes:
        raise LayoutError(f"mask class ids outside [0, {n_classes})")
    planes = np.zeros((n_classes,) + mask.shape, dtype=dtype)
    for c in range(n_classes):
        planes[c] = mask == c
    return planes


class MaskEmbedder(nn.Module):
    """Dense-map grounding tokens via a small strided conv encoder.

    Three stride-2 stages turn an (C, H, W) map into (H/8 * W/8) patch
    tokens; a learned positional embedding is added before the output MLP.
    """

    def __init__(self, c_in: int, resolution: int, d_ground: int, rng,
                 widths: tuple = (32, 64, 128), dtype=np.float32):
        if resolution % 8 != 0:
            raise ShapeError(f"mask resolution {resolution} must be divisible by 8")
        self.c_in = c_in
        self.resolution = resolution
        self.dtype = dtype
        self.convs = nn.ModuleList()
        prev = c_in
        for w in widths:
            self.convs.append(nn.Conv2d(prev, w, 3, rng, stride=2, dtype=dtype))
            prev = w
        n_patches = (resolution // 8) ** 2
        self.pos = nn.param(nn.normal(rng, (n_patches, prev), 0.02, dtype))
        self.fc1 = nn.Linear(prev, d_ground, rng, dtype)
        self.fc2 = nn.Linear(d_ground, d_ground, rng, dtype)

    def forward_planes(self, planes: np.ndarray | Tensor) -> GroundingFeature:
        x = planes if isinstance(planes, Tensor) else Tensor(np.asarray(planes, dtype=self.dtype))
        squeeze = x.ndim == 3
        if squeeze:
            x = ad.reshape(x, (1,) + tuple(x.shape))
        if x.shape[1] != self.c_in or x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise LayoutError(
                f"mask planes {tuple(x.shape[1:])} do not match configured "
                f"({self.c_in}, {self.resolution}, {self.resolution})"
            )
        for conv in self.convs:
            x = ad.silu(conv(x))
        b, c, h, w = x.shape
        tokens = ad.transpose(ad.reshape(x, (b, c, h * w)), (0, 2, 1))  # (B, n, c)
        tokens = ad.add(tokens, self.pos)
        tokens = self.fc2(ad.silu(self.fc1(tokens)))
        if squeeze:
            tokens = ad.getitem(tokens, 0)
        return GroundingFeature(tokens=tokens)

    def __call__(self, mask: np.ndarray, n_classes: int | None = None) -> GroundingFeature:
        mask = np.asarray(mask)
        if np.issubdtype(mask.dtype, np.integer):
            if n_classes is None:
                n_classes = self.c_in
            planes = one_hot_mask(mask, n_classes, self.dtype)
        else:
            planes = mask.astype(self.dtype)[None, :, :] if mask.ndim == 2 else mask
        return self.forward_planes(planes)


def drop_caption(caption: CaptionEmbedding, p: float, rng: np.random.Generator) -> CaptionEmbedding:
    """With probability p, replace the caption by the all-zero embedding."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop probability {p} outside [0, 1]")
    data = caption.tokens.data
    if data.ndim == 2:
        if rng.random() < p:
            return caption.zeros_like()
        return caption
    b = data.shape[0]
    dropped = rng.random(b) < p
    if not dropped.any():
        return CaptionEmbedding(caption.tokens, is_dropped=dropped, mask=caption.mask)
    keep = np.where(dropped[:, None, None], 0.0, 1.0).astype(data.dtype)
    return CaptionEmbedding(
        tokens=ad.mul(caption.tokens, Tensor(keep)),
        is_dropped=dropped,
        mask=caption.mask,
    )


class GatedFuser(nn.Module):
    """Gated cross-attention + feed-forward producing text-aware layout tokens.

    Query comes from the layout tokens, key/value from the caption; both
    residual updates are scaled by lambda * tanh(gate) with gates starting
    at zero, so the module is initially the identity on the layout tokens.
    """

    def __init__(self, d_ground: int, d_text: int, rng, lambda_scale: float = 1.0,
                 dtype=np.float32):
        self.lambda_scale = lambda_scale
        self.d_attn = d_ground
        self.wq = nn.Linear(d_ground, d_ground, rng, dtype, bias=False)
        self.wk = nn.Linear(d_text, d_ground, rng, dtype, bias=False)
        self.wv = nn.Linear(d_text, d_ground, rng, dtype, bias=False)
        self.gamma1 = nn.param(np.zeros((), dtype=dtype))
        self.gamma2 = nn.param(np.zeros((), dtype=dtype))
        self.ff = nn.FeedForward(d_ground, rng, dtype)

    def cross_attention(self, h: Tensor, c: Tensor, key_bias: np.ndarray | None = None) -> Tensor:
        q = self.wq(h)
        k = self.wk(c)
        v = self.wv(c)
        scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(self.d_attn))
        if key_bias is not None:
            scores = ad.add(scores, Tensor(key_bias.astype(scores.dtype, copy=False)))
        return ad.matmul(ad.softmax(scores, axis=-1), v)

    def __call__(self, grounding: GroundingFeature, caption: CaptionEmbedding) -> GroundingFeature:
        h = grounding.tokens
        c = caption.tokens
        key_bias = None
        if caption.mask is not None:
            valid = np.atleast_2d(caption.mask)
            bias = np.where(valid, 0.0, -1e9).astype(h.dtype)
            key_bias = bias[:, None, :] if h.ndim == 3 else bias[0]
        ca = self.cross_attention(h, c, key_bias)
        h1 = ad.add(h, ad.mul(ca, ad.mul(ad.tanh(self.gamma1), self.lambda_scale)))
        h2 = ad.add(h1, ad.mul(self.ff(h1), ad.mul(ad.tanh(self.gamma2), self.lambda_scale)))
        return GroundingFeature(tokens=h2, mask=grounding.mask)


def fuse(grounding: GroundingFeature, caption: CaptionEmbedding,
         fuser: GatedFuser) -> GroundingFeature:
    """Functional form of the gated fusion layer."""
    return fuser(grounding, caption)


class JointModalityEmbedder(nn.Module):
    """Bundles layout encoders, the text encoder, and the gated fuser.

    Produces the text-aware layout tokens and the caption embedding the
    denoiser consumes. The caption embedding passes through unchanged; only
    the layout tokens are updated by fusion.
    """

    def __init__(self, rng, layout: str = "boxes", d_ground: int = 256, d_text: int = 256,
                 resolution: int = 64, n_classes: int = 4, label_vocab: list[str] | None = None,
                 n_freqs: int = 8, lambda_scale: float = 1.0, text_layers: int = 2,
                 text_heads: int = 4, mask_widths: tuple = (32, 64, 128),
                 tokenizer: Tokenizer | None = None, n_max_boxes: int = 30, dtype=np.float32):
        if layout not in LAYOUT_VARIANTS:
            raise LayoutError(f"unknown layout variant {layout!r}")
        self.layout = layout
        self.n_classes = n_classes
        self.n_max_boxes = n_max_boxes
        self.tokenizer = tokenizer if tokenizer is not None else Tokenizer()
        r_text, r_box, r_mask, r_fuse = ad.spawn_rng(rng, 4)
        self.text_encoder = TextEncoder(
            len(self.tokenizer), d_text, r_text, n_layers=text_layers, n_heads=text_heads,
            dtype=dtype,
        )
        if layout == "boxes":
            vocab = label_vocab if label_vocab is not None else ["circle", "rectangle", "triangle"]
            self.box_embedder = BoxEmbedder(vocab, d_ground, r_box, n_freqs=n_freqs, dtype=dtype)
        else:
            c_in = n_classes if layout == "semantic_mask" else 1
            self.mask_embedder = MaskEmbedder(
                c_in, resolution, d_ground, r_mask, widths=mask_widths, dtype=dtype
            )
        self.fuser = GatedFuser(d_ground, d_text, r_fuse, lambda_scale=lambda_scale, dtype=dtype)

    def embed_layout(self, layout: LayoutCondition) -> GroundingFeature:
        layout.validate(n_max=self.n_max_boxes, n_classes=self.n_classes)
        if layout.variant != self.layout:
            raise LayoutError(f"embedder configured for {self.layout!r}, got {layout.variant!r}")
        if layout.variant == "boxes":
            return self.box_embedder(layout.boxes, layout.labels)
        if layout.variant == "semantic_mask":
            return self.mask_embedder(layout.mask, self.n_classes)
        return self.mask_embedder(layout.mask)

    def embed_caption(self, caption: str, truncate: bool = False) -> CaptionEmbedding:
        ids = self.tokenizer.encode(caption, truncate=truncate)
        return CaptionEmbedding(tokens=self.text_encoder(ids), mask=np.ones(len(ids), bool))

    def __call__(self, layout: LayoutCondition, caption: str) -> tuple[GroundingFeature, CaptionEmbedding]:
        c = self.embed_caption(caption)
        h = self.embed_layout(layout)
        return self.fuser(h, c), c
