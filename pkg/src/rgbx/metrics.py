"""Evaluation metrics: PSNR, SSIM, a Frechet-style set distance, layout alignment.

The set distance pools activations of the same fixed random-weight
extractor that backs the VAE perceptual term; its numbers are a proxy and
are not comparable to pretrained-network scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from rgbx.conditioning import LayoutCondition
from rgbx.errors import LayoutError, ShapeError
from rgbx.features import RandomConvFeatures
from rgbx.vae import ModalBundle

REPORT_VERSION = 1

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    """10 log10(max^2 / MSE); returns math.inf when the images match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError(f"max_val must be positive, got {max_val}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering over the last two axes."""
    k = len(kern)
    h, w = img.shape[-2], img.shape[-1]
    out = np.zeros(img.shape[:-2] + (h - k + 1, w), dtype=np.float64)
    for i in range(k):
        out += kern[i] * img[..., i : i + h - k + 1, :]
    out2 = np.zeros(out.shape[:-1] + (w - k + 1,), dtype=np.float64)
    for i in range(k):
        out2 += kern[i] * out[..., :, i : i + w - k + 1]
    return out2


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 2.0) -> float:
    """Windowed SSIM (11x11 Gaussian, standard stabilizers), channel-averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects (C, H, W) or (H, W), got {a.shape}")
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape} smaller than the {SSIM_WINDOW}px window")
    kern = _gaussian_kernel()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, kern)
    mu_b = _filter_valid(b, kern)
    var_a = _filter_valid(a * a, kern) - mu_a**2
    var_b = _filter_valid(b * b, kern) - mu_b**2
    cov = _filter_valid(a * b, kern) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class FrechetResult:
    value: float
    diagonal_loaded: bool = False

    def __float__(self):
        return float(self.value)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_gaussian(mu1, cov1, mu2, cov2) -> FrechetResult:
    """Frechet distance between two Gaussians, with diagonal loading when

    a covariance is near singular (smallest eigenvalue < 1e-10).
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    loaded = False
    eye = np.eye(cov1.shape[0])
    if np.linalg.eigvalsh(cov1).min() < 1e-10 or np.linalg.eigvalsh(cov2).min() < 1e-10:
        cov1 = cov1 + 1e-6 * eye
        cov2 = cov2 + 1e-6 * eye
        loaded = True
    s1 = _psd_sqrt(cov1)
    cross = _psd_sqrt(s1 @ cov2 @ s1)
    diff = mu1 - mu2
    val = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return FrechetResult(value=max(val, 0.0), diagonal_loaded=loaded)


def pooled_features(samples, extractor: RandomConvFeatures) -> np.ndarray:
    return np.stack([extractor.pooled(np.asarray(s)) for s in samples])


def feature_distance(samples_a, samples_b, extractor: RandomConvFeatures) -> FrechetResult:
    """Frechet distance between Gaussian fits of pooled random-conv features."""
    fa = pooled_features(samples_a, extractor)
    fb = pooled_features(samples_b, extractor)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ValueError("feature_distance needs at least 2 samples per set")
    return frechet_gaussian(
        fa.mean(axis=0), np.cov(fa, rowvar=False), fb.mean(axis=0), np.cov(fb, rowvar=False)
    )


def feature_l2(a: np.ndarray, b: np.ndarray, extractor: RandomConvFeatures) -> float:
    """Squared distance between pooled features of two single images."""
    d = extractor.pooled(np.asarray(a)) - extractor.pooled(np.asarray(b))
    return float(d @ d)


def _foreground(layout: LayoutCondition, hw: tuple[int, int]) -> np.ndarray:
    h, w = hw
    if layout.variant == "boxes":
        fg = np.zeros((h, w), dtype=bool)
        for x0, y0, x1, y1 in layout.boxes:
            fg[int(y0 * h) : max(int(np.ceil(y1 * h)), int(y0 * h) + 1),
               int(x0 * w) : max(int(np.ceil(x1 * w)), int(x0 * w) + 1)] = True
        return fg
    mask = layout.mask
    if mask.shape != (h, w):
        raise ShapeError(f"layout mask {mask.shape} does not match image {hw}")
    return mask > 0


def _contrast_score(gray: np.ndarray, fg: np.ndarray) -> float:
    lo, hi = float(gray.min()), float(gray.max())
    if hi - lo == 0.0:
        return 0.5
    norm = (gray - lo) / (hi - lo)
    inside = float(norm[fg].mean())
    outside = float(norm[~fg].mean()) if np.any(~fg) else inside
    return 0.5 + 0.5 * abs(inside - outside)


def layout_alignment(generated: ModalBundle | np.ndarray, layout: LayoutCondition) -> float:
    """Inside/outside contrast against the layout foreground, in [0, 1].

    0.5 means no alignment signal (e.g. a constant image); 1.0 means the
    foreground and background are fully separated after per-image
    min/max normalization. Bundles average the score over modalities.
    For box layouts the score averages per-box contrast against the
    region outside every box.
    """
    if isinstance(generated, ModalBundle):
        images = [img for _, img in generated.images]
    else:
        images = [np.asarray(generated)]
    hw = images[0].shape[-2:]
    fg = _foreground(layout, hw)
    if not fg.any():
        raise LayoutError("layout has an empty foreground")
    scores = []
    for img in images:
        gray = img.mean(axis=0) if img.ndim == 3 else img
        if layout.variant == "boxes":
            h, w = hw
            per_box = []
            outside = ~fg
            lo, hi = float(gray.min()), float(gray.max())
            if hi - lo == 0.0:
                scores.append(0.5)
                continue
            norm = (gray - lo) / (hi - lo)
            out_mean = float(norm[outside].mean()) if outside.any() else 0.0
            for x0, y0, x1, y1 in layout.boxes:
                box = np.zeros((h, w), dtype=bool)
                box[int(y0 * h) : max(int(np.ceil(y1 * h)), int(y0 * h) + 1),
                    int(x0 * w) : max(int(np.ceil(x1 * w)), int(x0 * w) + 1)] = True
                per_box.append(0.5 + 0.5 * abs(float(norm[box].mean()) - out_mean))
            scores.append(float(np.mean(per_box)))
        else:
            scores.append(_contrast_score(gray, fg))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    """Evaluation summary; ssim_x compares generated X against ground-truth X

    at the matching layout (stated here because the comparand is an
    assumption, not a given).
    """

    sample_count: int
    psnr_db: dict = field(default_factory=dict)        # per modality
    ssim_val: dict = field(default_factory=dict)       # per modality
    ssim_x: float = 0.0
    feature_dist: float = 0.0
    feature_dist_loaded: bool = False
    alignment: float = 0.0
    notes: str = "ssim_x: generated X vs ground-truth X at matching layout"

    def to_json(self) -> str:
        payload = {
            "report_version": REPORT_VERSION,
            "sample_count": self.sample_count,
            "psnr_db": {k: ("inf" if math.isinf(v) else v) for k, v in self.psnr_db.items()},
            "ssim": self.ssim_val,
            "ssim_x": self.ssim_x,
            "feature_distance": self.feature_dist,
            "feature_distance_diagonal_loaded": self.feature_dist_loaded,
            "layout_alignment": self.alignment,
            "notes": self.notes,
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        if d.get("report_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('report_version')}")
        return cls(
            sample_count=d["sample_count"],
            psnr_db={k: (math.inf if v == "inf" else v) for k, v in d["psnr_db"].items()},
            ssim_val=d["ssim"],
            ssim_x=d["ssim_x"],
            feature_dist=d["feature_distance"],
            feature_dist_loaded=d["feature_distance_diagonal_loaded"],
            alignment=d["layout_alignment"],
            notes=d["notes"],
        )

    def table(self) -> str:
        lines = [f"{'metric':<28}{'value':>12}", "-" * 40]
        for tag in sorted(self.psnr_db):
            val = self.psnr_db[tag]
            shown = "inf" if math.isinf(val) else f"{val:.3f}"
            lines.append(f"{'psnr_db.' + tag:<28}{shown:>12}")
        for tag in sorted(self.ssim_val):
            lines.append(f"{'ssim.' + tag:<28}{self.ssim_val[tag]:>12.4f}")
        lines.append(f"{'ssim_x':<28}{self.ssim_x:>12.4f}")
        fd_mark = " (loaded)" if self.feature_dist_loaded else ""
        lines.append(f"{'feature_distance':<28}{self.feature_dist:>12.4f}" + fd_mark)
        lines.append(f"{'layout_alignment':<28}{self.alignment:>12.4f}")
        lines.append(f"{'sample_count':<28}{self.sample_count:>12d}")
        return "\n".join(lines)
