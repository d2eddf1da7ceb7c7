"""Run configuration: defaults, coercion, rejection, presets, hashing."""

import pytest

from rgbx.config import DEFAULTS, PRESETS, RunConfig
from rgbx.errors import ConfigError


class TestDefaults:
    def test_defaults_validate(self):
        cfg = RunConfig()
        assert cfg["train.lr"] == 5e-5
        assert cfg["train.warmup_steps"] == 10000
        assert cfg["train.caption_drop"] == 0.5
        assert cfg["diffusion.T"] == 1000
        assert cfg["diffusion.beta_start"] == 1e-4
        assert cfg["diffusion.beta_end"] == 0.02

    def test_every_key_has_default(self):
        cfg = RunConfig()
        assert set(cfg.values) == set(DEFAULTS)

    def test_presets_validate(self):
        for name in PRESETS:
            cfg = RunConfig(preset=name)
            cfg.validate()
        desk = RunConfig(preset="desk")
        assert desk["diffusion.T"] == 100
        assert desk["train.warmup_steps"] == 500
        paper = RunConfig(preset="paper-shape")
        assert paper["train.warmup_steps"] == 10000

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            RunConfig(preset="huge")


class TestRejection:
    def test_unknown_key_in_constructor(self):
        with pytest.raises(ConfigError, match="vae.depth"):
            RunConfig({"vae.depth": 3})

    def test_unknown_key_in_set(self):
        with pytest.raises(ConfigError):
            RunConfig().set("nope", 1)

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("data.canvas = 32\nmystery.key = 5\n")
        with pytest.raises(ConfigError, match="mystery.key"):
            RunConfig.from_file(p)

    def test_bad_value_type(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("diffusion.T = banana\n")
        with pytest.raises(ConfigError, match="diffusion.T"):
            RunConfig.from_file(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_file(tmp_path / "none.txt")

    @pytest.mark.parametrize(
        "key,value",
        [
            ("diffusion.T", 0),
            ("diffusion.beta_start", 0.0),
            ("diffusion.beta_end", 1.0),
            ("train.caption_drop", 1.5),
            ("sampler.guidance_scale", -2.0),
            ("data.layout", "keypoints"),
            ("data.canvas", 30),
        ],
    )
    def test_semantic_validation(self, key, value):
        cfg = RunConfig()
        cfg.values[key] = value
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_steps_cannot_exceed_T(self):
        with pytest.raises(ConfigError):
            RunConfig({"diffusion.T": 50, "sampler.steps": 51})

    def test_modalities_must_start_with_rgb(self):
        with pytest.raises(ConfigError):
            RunConfig({"data.modalities": ("depth", "rgb")})


class TestSerialization:
    def test_text_round_trip(self):
        cfg = RunConfig(
            {"data.canvas": 32, "vae.widths": (8, 16), "vae.lp_levels": 2, "train.lr": 1e-3}
        )
        back = RunConfig.from_text(cfg.to_text())
        assert back.values == cfg.values

    def test_file_parse_with_comments(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# comment\n\ndata.canvas = 32\nvae.widths = 8,16,32\n"
                     "train.posterior_sample = true\n")
        cfg = RunConfig.from_file(p)
        assert cfg["data.canvas"] == 32
        assert cfg["vae.widths"] == (8, 16, 32)
        assert cfg["train.posterior_sample"] is True

    def test_hash_stable_and_sensitive(self):
        a = RunConfig({"seed": 1})
        b = RunConfig({"seed": 1})
        c = RunConfig({"seed": 2})
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()

    def test_data_hash_ignores_model_keys(self):
        a = RunConfig({"vae.stem_width": 8})
        b = RunConfig({"vae.stem_width": 64})
        assert a.data_hash() == b.data_hash()
        c = RunConfig({"data.canvas": 32})
        assert a.data_hash() != c.data_hash()

    def test_set_coerces_strings(self):
        cfg = RunConfig()
        cfg.set("diffusion.T", "128")
        assert cfg["diffusion.T"] == 128
        cfg.set("vae.widths", "8,16")
        assert cfg["vae.widths"] == (8, 16)
