"""Dual-path VAE: per-modality stems into one shared encoder, N decoders.

Every modality is mapped by its own stem convolution to a common width and
the stem outputs are summed, so the encoder sees a single fused map.
Band-pass pyramid levels of all modalities are projected and added at the
encoder scale whose spatial size matches. One decoder per modality
reconstructs its image from the shared latent; outputs are tanh-bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rgbx import autodiff as ad
from rgbx import nn
from rgbx import pyramid
from rgbx.autodiff import Tensor
from rgbx.errors import ShapeError
from rgbx.features import RandomConvFeatures, feature_match

MODALITY_CHANNELS = {"rgb": 3, "thermal": 1, "depth": 1, "edge": 1, "salient": 1}


@dataclass
class ModalBundle:
    """Joint modality: ordered (tag, image) pairs sharing spatial size."""

    images: list[tuple[str, np.ndarray]]

    def validate(self, strict: bool = True) -> "ModalBundle":
        tags = [t for t, _ in self.images]
        if strict and len(tags) < 2:
            raise ShapeError("a modal bundle needs at least two modalities")
        if tags.count("rgb") != 1:
            raise ShapeError("a modal bundle needs exactly one rgb entry")
        sizes = set()
        for tag, img in self.images:
            if tag not in MODALITY_CHANNELS:
                raise ShapeError(f"unknown modality {tag!r}")
            if img.ndim != 3 or img.shape[0] != MODALITY_CHANNELS[tag]:
                raise ShapeError(
                    f"{tag} image must be ({MODALITY_CHANNELS[tag]}, H, W), got {img.shape}"
                )
            sizes.add(img.shape[1:])
        if len(sizes) != 1:
            raise ShapeError(f"modalities disagree on spatial size: {sorted(sizes)}")
        return self

    @property
    def tags(self) -> list[str]:
        return [t for t, _ in self.images]

    def get(self, tag: str) -> np.ndarray:
        for t, img in self.images:
            if t == tag:
                return img
        raise KeyError(tag)

    @property
    def spatial(self) -> tuple[int, int]:
        return self.images[0][1].shape[1:]


@dataclass
class LatentDistribution:
    mu: Tensor
    logvar: Tensor

    def sample(self, rng: np.random.Generator) -> Tensor:
        eps = rng.standard_normal(self.mu.shape).astype(self.mu.dtype)
        return ad.add(self.mu, ad.mul(ad.exp(ad.mul(self.logvar, 0.5)), Tensor(eps)))

    def kl(self) -> Tensor:
        """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims.

        Batched inputs average over the leading batch axis.
        """
        mu2 = ad.mul(self.mu, self.mu)
        var = ad.exp(self.logvar)
        per_elem = ad.mul(ad.sub(ad.sub(ad.add(mu2, var), 1.0), self.logvar), 0.5)
        if per_elem.ndim == 4:
            return ad.tmean(ad.tsum(per_elem, axis=(1, 2, 3)))
        return ad.tsum(per_elem)


@dataclass
class VaeConfig:
    modalities: tuple = ("rgb", "depth")
    image_size: int = 64
    stem_width: int = 64
    widths: tuple = (64, 96, 128)
    z_channels: int = 4
    lp_levels: int = 3
    w_mse: float = 1.0
    w_feat: float = 0.1
    w_kl: float = 1e-6
    dtype: type = np.float32

    @property
    def downsample(self) -> int:
        return 1 << len(self.widths)

    @property
    def latent_hw(self) -> int:
        return self.image_size // self.downsample

    @property
    def latent_shape(self) -> tuple:
        return (self.z_channels, self.latent_hw, self.latent_hw)

    def validate(self) -> "VaeConfig":
        for m in self.modalities:
            if m not in MODALITY_CHANNELS:
                raise ShapeError(f"unknown modality {m!r} in config")
        if self.image_size % self.downsample:
            raise ShapeError(
                f"image size {self.image_size} not divisible by downsample {self.downsample}"
            )
        if not 0 <= self.lp_levels <= len(self.widths):
            raise ShapeError(
                f"lp_levels {self.lp_levels} must lie in [0, {len(self.widths)}]"
            )
        return self


class ResBlockV(nn.Module):
    """Residual conv block without timestep conditioning."""

    def __init__(self, channels: int, rng, dtype=np.float32):
        self.gn1 = nn.GroupNorm(channels, dtype)
        self.conv1 = nn.Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.gn2 = nn.GroupNorm(channels, dtype)
        self.conv2 = nn.Conv2d(channels, channels, 3, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(ad.silu(self.gn1(x)))
        h = self.conv2(ad.silu(self.gn2(h)))
        return ad.add(x, h)


class Decoder(nn.Module):
    def __init__(self, cfg: VaeConfig, c_out: int, rng):
        dtype = cfg.dtype
        widths = list(cfg.widths)
        self.conv_in = nn.Conv2d(cfg.z_channels, widths[-1], 3, rng, dtype=dtype)
        self.blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        chain = list(reversed(widths)) + [cfg.stem_width]
        for i in range(len(widths)):
            self.blocks.append(ResBlockV(chain[i], rng, dtype))
            self.ups.append(nn.Conv2d(chain[i], chain[i + 1], 3, rng, dtype=dtype))
        self.gn_out = nn.GroupNorm(cfg.stem_width, dtype)
        self.conv_out = nn.Conv2d(cfg.stem_width, c_out, 3, rng, dtype=dtype)

    def __call__(self, z: Tensor) -> Tensor:
        h = self.conv_in(z)
        for block, up in zip(self.blocks, self.ups):
            h = block(h)
            h = up(ad.upsample2(h))
        return ad.tanh(self.conv_out(ad.silu(self.gn_out(h))))


class DPVAE(nn.Module):
    """Shared encoder with pyramid injection and one decoder per modality."""

    def __init__(self, cfg: VaeConfig, rng):
        cfg.validate()
        self.cfg = cfg
        dtype = cfg.dtype
        widths = list(cfg.widths)

        self.stems = nn.ModuleList()
        self._stem_tags = list(cfg.modalities)
        total_c = 0
        for tag in cfg.modalities:
            c = MODALITY_CHANNELS[tag]
            total_c += c
            self.stems.append(_Stem(c, cfg.stem_width, rng, dtype))

        # one 3x3 projection per band-pass level, at the matching encoder scale
        self.lp_projs = nn.ModuleList()
        scale_widths = [cfg.stem_width] + widths[:-1]
        for k in range(cfg.lp_levels):
            self.lp_projs.append(_Stem(total_c, scale_widths[k], rng, dtype))

        self.downs = nn.ModuleList()
        self.enc_blocks = nn.ModuleList()
        prev = cfg.stem_width
        for w in widths:
            self.downs.append(nn.Conv2d(prev, w, 3, rng, stride=2, dtype=dtype))
            self.enc_blocks.append(ResBlockV(w, rng, dtype))
            prev = w
        self.gn_enc = nn.GroupNorm(prev, dtype)
        self.conv_mu_logvar = nn.Conv2d(prev, 2 * cfg.z_channels, 3, rng, dtype=dtype)

        self.decoders = nn.ModuleList()
        for tag in cfg.modalities:
            self.decoders.append(Decoder(cfg, MODALITY_CHANNELS[tag], rng))

    # -- encoding ------------------------------------------------------

    def _check_bundle(self, bundle: ModalBundle):
        tags = bundle.tags
        if tags != self._stem_tags:
            raise ShapeError(f"bundle modalities {tags} do not match model {self._stem_tags}")
        h, w = bundle.spatial
        if (h, w) != (self.cfg.image_size, self.cfg.image_size):
            raise ShapeError(
                f"bundle spatial size {(h, w)} does not match configured "
                f"{self.cfg.image_size}"
            )

    def _lp_features(self, arrays: list[np.ndarray]) -> list[np.ndarray]:
        """Concatenated band-pass levels of every modality, finest first."""
        if self.cfg.lp_levels == 0:
            return []
        pyrs = [pyramid.laplacian_pyramid(a, self.cfg.lp_levels) for a in arrays]
        return [
            np.concatenate([p.levels[k] for p in pyrs], axis=-3)
            for k in range(self.cfg.lp_levels)
        ]

    def encode(self, bundle: ModalBundle, batched: np.ndarray | None = None) -> LatentDistribution:
        """Encode a bundle (or a pre-stacked batch per modality) to mu/logvar."""
        if batched is None:
            bundle.validate(strict=len(self._stem_tags) >= 2)
            self._check_bundle(bundle)
            arrays = [img[None].astype(self.cfg.dtype) for _, img in bundle.images]
        else:
            arrays = [a.astype(self.cfg.dtype, copy=False) for a in batched]
        dist = self._encode_arrays(arrays)
        if batched is None:
            return LatentDistribution(mu=ad.getitem(dist.mu, 0), logvar=ad.getitem(dist.logvar, 0))
        return dist

    def _encode_arrays(self, arrays: list[np.ndarray]) -> LatentDistribution:
        h = None
        for stem, arr in zip(self.stems, arrays):
            s = stem(Tensor(arr))
            h = s if h is None else ad.add(h, s)
        lp = self._lp_features(arrays)
        if self.cfg.lp_levels >= 1:
            h = ad.add(h, self.lp_projs[0](Tensor(lp[0])))
        for i in range(len(self.downs)):
            h = self.downs[i](h)
            if i + 1 < self.cfg.lp_levels:
                h = ad.add(h, self.lp_projs[i + 1](Tensor(lp[i + 1])))
            h = self.enc_blocks[i](h)
        out = self.conv_mu_logvar(ad.silu(self.gn_enc(h)))
        zc = self.cfg.z_channels
        return LatentDistribution(
            mu=ad.getitem(out, (slice(None), slice(0, zc))),
            logvar=ad.getitem(out, (slice(None), slice(zc, 2 * zc))),
        )

    # -- decoding ------------------------------------------------------

    def decode_tensors(self, z: Tensor) -> dict[str, Tensor]:
        if z.ndim == 3:
            z = ad.reshape(z, (1,) + tuple(z.shape))
        if tuple(z.shape[1:]) != self.cfg.latent_shape:
            raise ShapeError(
                f"latent shape {tuple(z.shape[1:])} does not match configured "
                f"{self.cfg.latent_shape}"
            )
        return {tag: dec(z) for tag, dec in zip(self._stem_tags, self.decoders)}

    def decode(self, z: np.ndarray | Tensor) -> ModalBundle:
        zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.cfg.dtype))
        squeeze = zt.ndim == 3
        with ad.no_grad():
            outs = self.decode_tensors(zt)
        images = []
        for tag in self._stem_tags:
            arr = outs[tag].data
            images.append((tag, arr[0] if squeeze else arr))
        return ModalBundle(images=images)

    def reconstruct(self, bundle: ModalBundle) -> dict[str, Tensor]:
        dist = self.encode(bundle)
        return self.decode_tensors(dist.mu), dist


class _Stem(nn.Module):
    """Single 3x3 convolution used for modality stems and pyramid projections."""

    def __init__(self, c_in: int, c_out: int, rng, dtype):
        self.conv = nn.Conv2d(c_in, c_out, 3, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)


def dp_vae_loss_terms(
    bundle_arrays: dict[str, np.ndarray],
    recon: dict[str, Tensor],
    dist: LatentDistribution,
    extractors: dict[str, RandomConvFeatures],
    w_mse: float = 1.0,
    w_feat: float = 0.1,
    w_kl: float = 1e-6,
) -> dict[str, Tensor]:
    """Per-term losses: summed-over-modalities MSE, feature match, and KL."""
    if set(bundle_arrays) != set(recon):
        raise ShapeError(
            f"reconstruction modalities {sorted(recon)} do not match bundle "
            f"{sorted(bundle_arrays)}"
        )
    mse_total = None
    feat_total = None
    for tag, target in bundle_arrays.items():
        pred = recon[tag]
        targ = Tensor(np.asarray(target, dtype=pred.dtype))
        if targ.ndim == 3:
            targ = ad.reshape(targ, (1,) + tuple(targ.shape))
        if tuple(targ.shape) != tuple(pred.shape):
            raise ShapeError(f"{tag}: reconstruction {pred.shape} vs target {targ.shape}")
        d = ad.sub(pred, targ)
        m = ad.tmean(ad.mul(d, d))
        mse_total = m if mse_total is None else ad.add(mse_total, m)
        if w_feat != 0.0:
            f = feature_match(pred, targ, extractors[tag])
            feat_total = f if feat_total is None else ad.add(feat_total, f)
    kl = dist.kl()
    terms = {"mse": mse_total, "kl": kl}
    if feat_total is not None:
        terms["feat"] = feat_total
    total = ad.add(ad.mul(mse_total, w_mse), ad.mul(kl, w_kl))
    if feat_total is not None:
        total = ad.add(total, ad.mul(feat_total, w_feat))
    terms["total"] = total
    return terms


def dp_vae_loss(bundle: ModalBundle, recon: dict[str, Tensor], dist: LatentDistribution,
                extractors: dict[str, RandomConvFeatures], w_mse: float = 1.0,
                w_feat: float = 0.1, w_kl: float = 1e-6) -> Tensor:
    """Total DP-VAE objective; see dp_vae_loss_terms for the parts."""
    arrays = {tag: img for tag, img in bundle.images}
    return dp_vae_loss_terms(arrays, recon, dist, extractors, w_mse, w_feat, w_kl)["total"]


def make_extractors(modalities, dtype=np.float32) -> dict[str, RandomConvFeatures]:
    return {m: RandomConvFeatures(MODALITY_CHANNELS[m], dtype=dtype) for m in modalities}
