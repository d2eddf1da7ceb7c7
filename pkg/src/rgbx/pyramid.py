"""Laplacian pyramid decomposition with exact reconstruction.

Band-pass levels carry the high-frequency detail that the shared encoder
ingests at matching spatial scales; the low-pass residual closes the
telescoping sum so reconstruction is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rgbx import kernels
from rgbx.errors import ShapeError


@dataclass
class LaplacianPyramid:
    levels: list[np.ndarray]  # band-pass L_0 .. L_{K-1}, finest first
    lowpass: np.ndarray       # final low-pass residual G_K

    @property
    def k(self) -> int:
        return len(self.levels)


def downsample(img: np.ndarray) -> np.ndarray:
    """Blur then decimate by 2 along both spatial axes."""
    return kernels.blur5(img)[..., ::2, ::2]


def upsample(img: np.ndarray) -> np.ndarray:
    """Duplicate pixels to 2x size, then blur; constants map to constants."""
    return kernels.blur5(img.repeat(2, axis=-2).repeat(2, axis=-1))


def laplacian_pyramid(image: np.ndarray, k: int) -> LaplacianPyramid:
    """Decompose (..., H, W) into k band-pass levels plus a low-pass residual."""
    if k < 1:
        raise ShapeError(f"pyramid needs k >= 1, got {k}")
    h, w = image.shape[-2], image.shape[-1]
    if h % (1 << k) or w % (1 << k):
        raise ShapeError(f"spatial dims ({h}, {w}) not divisible by 2^{k}")
    levels = []
    g = image
    for _ in range(k):
        g_next = downsample(g)
        levels.append(g - upsample(g_next))
        g = g_next
    return LaplacianPyramid(levels=levels, lowpass=g)


def reconstruct(pyr: LaplacianPyramid) -> np.ndarray:
    g = pyr.lowpass
    for band in reversed(pyr.levels):
        g = band + upsample(g)
    return g
