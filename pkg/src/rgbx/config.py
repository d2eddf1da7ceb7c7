"""Flat dotted-key run configuration with defaults, presets, and hashing.

Config files are plain text, one `key = value` per line, `#` comments.
Every key has a default; unknown keys are rejected. The fully resolved
config is persisted alongside every checkpoint and report so runs are
reconstructible.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from rgbx.errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "runs/out",
    # dataset
    "data.root": "data/synth",
    "data.canvas": 64,
    "data.modalities": ("rgb", "depth"),
    "data.layout": "semantic_mask",
    "data.n_train": 64,
    "data.n_val": 16,
    "data.objects_min": 1,
    "data.objects_max": 3,
    "data.n_max_boxes": 30,
    # diffusion timeline
    "diffusion.T": 1000,
    "diffusion.beta_start": 1e-4,
    "diffusion.beta_end": 0.02,
    # sampler
    "sampler.steps": 100,
    "sampler.guidance_scale": 3.0,
    # dual-path VAE
    "vae.stem_width": 64,
    "vae.widths": (64, 96, 128),
    "vae.z_channels": 4,
    "vae.lp_levels": 3,
    "vae.w_mse": 1.0,
    "vae.w_feat": 0.1,
    "vae.w_kl": 1e-6,
    "vae.batch_size": 8,
    "vae.epochs": 20,
    # denoiser UNet
    "unet.widths": (128, 256, 256),
    "unet.heads": 4,
    "unet.mu": 1.0,
    # conditioning
    "cond.d_ground": 256,
    "cond.d_text": 256,
    "cond.fourier_freqs": 8,
    "cond.lambda": 1.0,
    "cond.text_layers": 2,
    "cond.text_heads": 4,
    "cond.mask_widths": (32, 64, 128),
    # training
    "train.lr": 5e-5,
    "train.warmup_steps": 10000,
    "train.caption_drop": 0.5,
    "train.steps": 3000,
    "train.batch_size": 8,
    "train.posterior_sample": False,
    "train.log_every": 50,
    # evaluation
    "eval.max_records": 16,
}

PRESETS: dict[str, dict] = {
    # desk: small geometry, short timeline, warm-up scaled to 500 steps
    "desk": {
        "data.canvas": 32,
        "diffusion.T": 100,
        "sampler.steps": 100,
        "vae.stem_width": 32,
        "vae.widths": (32, 48, 64),
        "unet.widths": (64, 96),
        "cond.d_ground": 64,
        "cond.d_text": 64,
        "cond.text_layers": 1,
        "train.warmup_steps": 500,
        "train.lr": 2e-4,
    },
    # paper-shape: the documented training hyperparameters at full timeline
    "paper-shape": {
        "diffusion.T": 1000,
        "train.lr": 5e-5,
        "train.warmup_steps": 10000,
        "train.caption_drop": 0.5,
    },
}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from exc


class RunConfig:
    """Resolved configuration: defaults, then preset, then file, then overrides."""

    def __init__(self, values: dict | None = None, preset: str | None = None):
        self.values = dict(DEFAULTS)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            self.values.update(PRESETS[preset])
        if values:
            for k, v in values.items():
                if k not in DEFAULTS:
                    raise ConfigError(f"unknown config key {k!r}")
                self.values[k] = v
        self.validate()

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = _coerce(key, value, DEFAULTS[key])
        self.values[key] = value
        return self

    def validate(self) -> "RunConfig":
        v = self.values
        if v["diffusion.T"] < 1:
            raise ConfigError("diffusion.T must be >= 1")
        if not (0.0 < v["diffusion.beta_start"] <= v["diffusion.beta_end"] < 1.0):
            raise ConfigError("diffusion betas must satisfy 0 < start <= end < 1")
        if v["sampler.steps"] > v["diffusion.T"]:
            raise ConfigError("sampler.steps cannot exceed diffusion.T")
        if v["sampler.guidance_scale"] < 0:
            raise ConfigError("sampler.guidance_scale must be >= 0")
        if not 0.0 <= v["train.caption_drop"] <= 1.0:
            raise ConfigError("train.caption_drop must lie in [0, 1]")
        if v["data.layout"] not in ("boxes", "semantic_mask", "salient_map", "edge_map"):
            raise ConfigError(f"unknown data.layout {v['data.layout']!r}")
        for m in v["data.modalities"]:
            if m not in ("rgb", "thermal", "depth", "edge", "salient"):
                raise ConfigError(f"unknown modality {m!r} in data.modalities")
        if v["data.modalities"][0] != "rgb":
            raise ConfigError("data.modalities must start with rgb")
        down = 1 << len(v["vae.widths"])
        if v["data.canvas"] % down:
            raise ConfigError(
                f"data.canvas {v['data.canvas']} not divisible by VAE downsample {down}"
            )
        if not 0 <= v["vae.lp_levels"] <= len(v["vae.widths"]):
            raise ConfigError("vae.lp_levels must lie in [0, len(vae.widths)]")
        return self

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def data_hash(self) -> str:
        """Hash over the keys that determine dataset content (not its location)."""
        keys = sorted(
            k for k in self.values if k.startswith("data.") and k != "data.root"
        ) + ["seed"]
        text = "\n".join(f"{k} = {self.values[k]}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_file(cls, path, preset: str | None = None, overrides: dict | None = None):
        raw: dict = {}
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        for ln, line in enumerate(path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'key = value', got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
            raw[key] = _coerce(key, val, DEFAULTS[key])
        cfg = cls(raw, preset=preset)
        if overrides:
            for k, v in overrides.items():
                cfg.set(k, v)
        return cfg.validate()

    @classmethod
    def from_text(cls, text: str):
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r} in config text")
            values[key] = _coerce(key, val, DEFAULTS[key])
        return cls(values)
