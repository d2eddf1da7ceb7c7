"""Fixed random-weight convolutional feature extractor.

One extractor serves two roles: the feature-matching term of the VAE loss
and the Frechet-style set distance in evaluation. Weights are drawn once
from a seed keyed by input channel count and never trained; gradients flow
through to the inputs only.
"""

from __future__ import annotations

import numpy as np

from rgbx import autodiff as ad
from rgbx.autodiff import Tensor

FEATURE_WIDTHS = (32, 64, 128)
_BASE_SEED = 0x5EED_FEA7


class RandomConvFeatures:
    """Three stride-2 tanh conv stages; returns one activation map per stage."""

    def __init__(self, c_in: int, widths: tuple = FEATURE_WIDTHS, seed: int | None = None,
                 dtype=np.float32):
        if seed is None:
            seed = _BASE_SEED + c_in
        rng = np.random.default_rng(seed)
        self.c_in = c_in
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        prev = c_in
        for w in widths:
            std = 1.0 / np.sqrt(prev * 9)
            self.weights.append(Tensor((rng.standard_normal((w, prev, 3, 3)) * std).astype(dtype)))
            self.biases.append(Tensor(np.zeros(w, dtype=dtype)))
            prev = w

    def __call__(self, x: Tensor | np.ndarray) -> list[Tensor]:
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        if h.ndim == 3:
            h = ad.reshape(h, (1,) + tuple(h.shape))
        feats = []
        for w, b in zip(self.weights, self.biases):
            if h.dtype != w.data.dtype:
                w = Tensor(w.data.astype(h.dtype))
                b = Tensor(b.data.astype(h.dtype))
            h = ad.tanh(ad.conv2d(h, w, b, stride=2, pad=1))
            feats.append(h)
        return feats

    def pooled(self, x: np.ndarray) -> np.ndarray:
        """Spatially averaged features of one image, concatenated across stages."""
        with ad.no_grad():
            feats = self(x)
        return np.concatenate([f.data.mean(axis=(2, 3)).reshape(-1) for f in feats])


def feature_match(a: Tensor | np.ndarray, b: Tensor | np.ndarray,
                  extractor: RandomConvFeatures) -> Tensor:
    """Sum over stages of the mean squared activation difference."""
    fa = extractor(a)
    fb = extractor(b)
    total = None
    for x, y in zip(fa, fb):
        d = ad.sub(x, y)
        term = ad.tmean(ad.mul(d, d))
        total = term if total is None else ad.add(total, term)
    return total
