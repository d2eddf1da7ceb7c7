"""Noise schedules, forward noising, the denoising objective, and sampling.

Timesteps run 1..T; index 0 means clean data. Schedule arrays are stored
for t = 1..T, and alpha_bar(0) is defined as 1. Sampling is ancestral
DDPM over the full schedule or an evenly respaced subsequence, with
classifier-free guidance mixing an unconditional branch that uses the
all-zero caption embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rgbx import autodiff as ad
from rgbx.autodiff import Tensor
from rgbx.conditioning import CaptionEmbedding, GroundingFeature
from rgbx.errors import ScheduleError, ShapeError


@dataclass
class NoiseSchedule:
    T: int
    betas: np.ndarray        # (T,), beta_t for t = 1..T
    alphas: np.ndarray       # 1 - beta_t
    alpha_bars: np.ndarray   # running product of alphas

    def alpha_bar(self, t) -> np.ndarray:
        """alpha_bar at timestep t (scalar or array); t = 0 gives 1."""
        t = np.asarray(t)
        ext = np.concatenate([[1.0], self.alpha_bars])
        return ext[t]

    def validate(self) -> "NoiseSchedule":
        if self.T < 1 or len(self.betas) != self.T:
            raise ScheduleError(f"schedule length {len(self.betas)} != T={self.T}")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ScheduleError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ScheduleError("alpha_bars must be strictly decreasing")
        if self.alpha_bars[0] >= 1.0 or self.alpha_bars[-1] <= 0.0:
            raise ScheduleError("alpha_bars must lie in (0, 1)")
        return self


@dataclass
class LatentState:
    z: np.ndarray
    t: int = 0


@dataclass
class ConditioningBundle:
    """Everything the noise predictor consumes, plus the guidance scale.

    The unconditional branch of guidance uses caption_uncond (defaults to
    the all-zero caption) and grounding_uncond (defaults to grounding; the
    training pipeline passes the layout fused against the zero caption so
    sampling matches the caption-dropped training mode).
    """

    caption: CaptionEmbedding | None = None
    grounding: GroundingFeature | None = None
    guidance_scale: float = 1.0
    caption_uncond: CaptionEmbedding | None = None
    grounding_uncond: GroundingFeature | None = None

    def uncond_pair(self):
        cap = self.caption_uncond
        if cap is None and self.caption is not None:
            cap = self.caption.zeros_like()
        gnd = self.grounding_uncond if self.grounding_uncond is not None else self.grounding
        return cap, gnd


def make_schedule(T: int, beta_start: float, beta_end: float, kind: str = "linear") -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end inclusive."""
    if kind != "linear":
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars).validate()


def _check_t(t: int, sched: NoiseSchedule):
    if not 1 <= int(t) <= sched.T:
        raise ScheduleError(f"timestep {t} outside [1, {sched.T}]")


def forward_noise_array(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal: sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise ShapeError(f"noise shape {eps.shape} != latent shape {z0.shape}")
    ts = np.asarray(t)
    for tv in np.atleast_1d(ts):
        _check_t(tv, sched)
    ab = sched.alpha_bar(ts).astype(z0.dtype)
    if ts.ndim > 0:
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def forward_noise(z0: LatentState, t: int, eps: np.ndarray, sched: NoiseSchedule) -> LatentState:
    return LatentState(z=forward_noise_array(z0.z, t, eps, sched), t=int(t))


def training_loss(denoiser, z0, cond: ConditioningBundle, sched: NoiseSchedule,
                  rng: np.random.Generator) -> Tensor:
    """Denoising objective: E ||eps - denoiser(z_t, t, c, H)||^2.

    z0 may be (C, h, w) or a batch (B, C, h, w); t is drawn per element.
    Returns a scalar Tensor (call .item() for the float value).
    """
    z0 = z0.z if isinstance(z0, LatentState) else np.asarray(z0)
    squeeze = z0.ndim == 3
    zb = z0[None] if squeeze else z0
    b = zb.shape[0]
    t = rng.integers(1, sched.T + 1, size=b)
    eps = rng.standard_normal(zb.shape).astype(zb.dtype)
    z_t = forward_noise_array(zb, t, eps, sched)
    pred = denoiser(z_t if not squeeze else z_t[0], t if not squeeze else int(t[0]),
                    cond.caption, cond.grounding)
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=zb.dtype))
    target = eps[0] if squeeze else eps
    if tuple(pred.shape) != target.shape:
        raise ShapeError(f"denoiser output {tuple(pred.shape)} != noise shape {target.shape}")
    d = ad.sub(pred, Tensor(target))
    return ad.tmean(ad.mul(d, d))


def sample_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced descending timestep subsequence ending at 1."""
    if steps > T:
        raise ScheduleError(f"steps {steps} exceeds schedule length T={T}")
    if steps < 1:
        raise ScheduleError(f"steps must be >= 1, got {steps}")
    ts = np.round(np.linspace(T, 1, steps)).astype(np.int64)
    return np.unique(ts)[::-1]


def sample(denoiser, shape, cond: ConditioningBundle, sched: NoiseSchedule, steps: int,
           rng: np.random.Generator, dtype=np.float32) -> LatentState:
    """Ancestral sampling from pure noise down the (possibly respaced) chain.

    Guidance: scale 1 runs only the conditional branch, scale 0 only the
    unconditional branch; anything else mixes
    eps_uncond + s * (eps_cond - eps_uncond).
    """
    scale = float(cond.guidance_scale)
    if scale < 0.0:
        raise ScheduleError(f"guidance scale must be >= 0, got {scale}")
    ts = sample_timesteps(sched.T, steps)
    z = rng.standard_normal(shape).astype(dtype)
    cap_u, gnd_u = cond.uncond_pair()

    def predict(zb, tb):
        if scale == 1.0:
            out = denoiser(zb, tb, cond.caption, cond.grounding)
        elif scale == 0.0:
            out = denoiser(zb, tb, cap_u, gnd_u)
        else:
            e_c = denoiser(zb, tb, cond.caption, cond.grounding)
            e_u = denoiser(zb, tb, cap_u, gnd_u)
            e_c = e_c.data if isinstance(e_c, Tensor) else e_c
            e_u = e_u.data if isinstance(e_u, Tensor) else e_u
            return e_u + scale * (e_c - e_u)
        return out.data if isinstance(out, Tensor) else np.asarray(out)

    with ad.no_grad():
        for i, t in enumerate(ts):
            t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
            ab_t = float(sched.alpha_bar(int(t)))
            ab_prev = float(sched.alpha_bar(t_prev))
            alpha_eff = ab_t / ab_prev
            beta_eff = 1.0 - alpha_eff
            eps_hat = predict(z, int(t))
            z = (z - (beta_eff / np.sqrt(1.0 - ab_t)) * eps_hat) / np.sqrt(alpha_eff)
            if t_prev > 0:
                sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta_eff)
                z = z + sigma * rng.standard_normal(z.shape).astype(dtype)
            z = z.astype(dtype, copy=False)
    return LatentState(z=z, t=0)
