"""Training loops and CLI: smoke runs, exit codes, resume, drop plumbing, eval wiring."""

import math

import numpy as np
import pytest

from rgbx import dataset as ds
from rgbx import metrics, train
from rgbx.checkpoint import load_checkpoint
from rgbx.cli import main
from rgbx.config import RunConfig
from rgbx.scenes import make_records
from rgbx.vae import ModalBundle

TINY = """
seed = 7
data.root = {root}
data.canvas = 16
data.n_train = 6
data.n_val = 3
data.modalities = rgb,depth
data.layout = semantic_mask
diffusion.T = 20
sampler.steps = 20
vae.stem_width = 8
vae.widths = 8,16
vae.z_channels = 2
vae.lp_levels = 2
vae.batch_size = 4
vae.epochs = 2
unet.widths = 16,24
unet.heads = 2
cond.d_ground = 16
cond.d_text = 16
cond.text_layers = 1
cond.text_heads = 2
cond.mask_widths = 4,8,8
train.lr = 1e-3
train.warmup_steps = 5
train.steps = 4
train.batch_size = 4
train.log_every = 2
eval.max_records = 2
"""


def tiny_cfg_values(root):
    return RunConfig.from_text(TINY.format(root=root))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end CLI run shared by the smoke assertions."""
    base = tmp_path_factory.mktemp("pipe")
    cfg_path = base / "cfg.txt"
    cfg_path.write_text(TINY.format(root=base / "data"))
    assert main(["datagen", "--config", str(cfg_path)]) == 0
    assert main(["train-vae", "--config", str(cfg_path), "--out", str(base / "vae")]) == 0
    assert main([
        "train-diffusion", "--config", str(cfg_path), "--out", str(base / "diff"),
        "--vae", str(base / "vae" / "vae_best.ckpt"),
    ]) == 0
    return base, cfg_path


class TestCliSmoke:
    def test_checkpoints_written(self, pipeline):
        base, _ = pipeline
        assert (base / "vae" / "vae_best.ckpt").exists()
        assert (base / "vae" / "vae_last.ckpt").exists()
        assert (base / "diff" / "denoiser_last.ckpt").exists()

    def test_effective_config_persisted(self, pipeline):
        base, _ = pipeline
        for sub in ("data", "vae", "diff"):
            text = (base / sub / "config.txt").read_text()
            RunConfig.from_text(text)  # parses back

    def test_sample_command(self, pipeline):
        base, cfg_path = pipeline
        rc = main([
            "sample", "--config", str(cfg_path), "--out", str(base / "samp"),
            "--vae", str(base / "vae" / "vae_best.ckpt"),
            "--denoiser", str(base / "diff" / "denoiser_last.ckpt"),
            "--layout", str(base / "data" / "train" / "00000_mask.png"),
            "--caption", "a daytime scene with 1 objects",
        ])
        assert rc == 0
        assert (base / "samp" / "sample_rgb.png").exists()
        assert (base / "samp" / "sample_depth.png").exists()
        assert (base / "samp" / "sample_grid.png").exists()

    def test_eval_command_writes_report(self, pipeline):
        base, cfg_path = pipeline
        rc = main([
            "eval", "--config", str(cfg_path), "--out", str(base / "ev"),
            "--vae", str(base / "vae" / "vae_best.ckpt"),
            "--denoiser", str(base / "diff" / "denoiser_last.ckpt"),
            "--split", "val",
        ])
        assert rc == 0
        rep = metrics.EvalReport.from_json((base / "ev" / "eval_report.json").read_text())
        assert rep.sample_count == 2
        assert set(rep.psnr_db) == {"rgb", "depth"}

    def test_vae_checkpoint_geometry_enforced(self, pipeline, tmp_path):
        base, cfg_path = pipeline
        rc = main([
            "train-diffusion", "--config", str(cfg_path), "--out", str(tmp_path),
            "--vae", str(base / "vae" / "vae_best.ckpt"),
            "--set", "vae.z_channels=4", "--set", "unet.widths=16",
        ])
        assert rc == 4

    def test_sample_rejects_mismatched_checkpoint_kind(self, pipeline, tmp_path):
        base, cfg_path = pipeline
        rc = main([
            "sample", "--config", str(cfg_path), "--out", str(tmp_path),
            "--vae", str(base / "diff" / "denoiser_last.ckpt"),
            "--denoiser", str(base / "diff" / "denoiser_last.ckpt"),
            "--layout", str(base / "data" / "train" / "00000_mask.png"),
        ])
        assert rc == 4


class TestCliErrors:
    def test_invalid_modality_is_config_error(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("data.modalities = rgb,sonar\n")
        assert main(["datagen", "--config", str(cfg)]) == 2

    def test_unknown_key_is_config_error(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("data.fancy = 1\n")
        assert main(["datagen", "--config", str(cfg)]) == 2

    def test_nonempty_outdir_requires_force(self, tmp_path):
        cfg = tmp_path / "c.txt"
        root = tmp_path / "data"
        root.mkdir()
        (root / "junk.txt").write_text("x")
        cfg.write_text(
            TINY.format(root=root).replace("data.n_train = 6", "data.n_train = 2")
        )
        assert main(["datagen", "--config", str(cfg)]) == 3
        assert main(["datagen", "--config", str(cfg), "--force"]) == 0

    def test_missing_dataset_is_data_error(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text(TINY.format(root=tmp_path / "absent"))
        assert main(["train-vae", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_missing_checkpoint_is_checkpoint_error(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text(TINY.format(root=tmp_path / "data"))
        assert main(["datagen", "--config", str(cfg)]) == 0
        rc = main([
            "train-diffusion", "--config", str(cfg), "--out", str(tmp_path / "o"),
            "--vae", str(tmp_path / "none.ckpt"),
        ])
        assert rc == 4


class TestDatagen:
    def test_deterministic_manifest_hash(self, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        hashes = []
        for sub in ("a", "b"):
            cfg.write_text(TINY.format(root=tmp_path / sub))
            assert main(["datagen", "--config", str(cfg)]) == 0
            out = capsys.readouterr().out
            hashes.append([l for l in out.splitlines() if "manifest hash" in l][0])
        assert hashes[0] == hashes[1]

    def test_zero_records_valid_manifest(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text(
            TINY.format(root=tmp_path / "d")
            .replace("data.n_train = 6", "data.n_train = 0")
            .replace("data.n_val = 3", "data.n_val = 0")
        )
        assert main(["datagen", "--config", str(cfg)]) == 0
        manifest = ds.read_manifest(tmp_path / "d")
        assert manifest["splits"]["train"] == []
        assert ds.read_dataset(tmp_path / "d", "train") == []


class TestTrainingPlumbing:
    def test_caption_drop_fraction_logged(self, tmp_path):
        cfg = tiny_cfg_values(tmp_path / "d")
        records = list(make_records(1, 6, canvas=16, modalities=("rgb", "depth")))
        vres = train.train_vae(cfg, records, records[:2], tmp_path / "v", quiet=True)
        for p, expect in ((1.0, 1.0), (0.0, 0.0)):
            cfg2 = RunConfig(dict(cfg.values))
            cfg2.set("train.caption_drop", p)
            res = train.train_diffusion(
                cfg2, tmp_path / "v" / "vae_best.ckpt", records, tmp_path / f"t{p}",
                quiet=True, steps=3,
            )
            assert res["drop_fraction"] == expect

    def test_vae_resume_continues_step_counter(self, tmp_path):
        cfg = tiny_cfg_values(tmp_path / "d")
        records = list(make_records(2, 6, canvas=16, modalities=("rgb", "depth")))
        train.train_vae(cfg, records, records[:2], tmp_path / "v", quiet=True)
        first = load_checkpoint(tmp_path / "v" / "vae_last.ckpt")
        assert first.meta["epoch"] == 2
        cfg4 = RunConfig(dict(cfg.values))
        cfg4.set("vae.epochs", 4)
        train.train_vae(
            cfg4, records, records[:2], tmp_path / "v2",
            resume=tmp_path / "v" / "vae_last.ckpt", quiet=True,
        )
        second = load_checkpoint(tmp_path / "v2" / "vae_last.ckpt")
        assert second.meta["epoch"] == 4
        assert second.meta["opt_step"] > first.meta["opt_step"]

    def test_diffusion_resume(self, tmp_path):
        cfg = tiny_cfg_values(tmp_path / "d")
        records = list(make_records(3, 6, canvas=16, modalities=("rgb", "depth")))
        train.train_vae(cfg, records, records[:2], tmp_path / "v", quiet=True)
        train.train_diffusion(
            cfg, tmp_path / "v" / "vae_best.ckpt", records, tmp_path / "t1",
            quiet=True, steps=2,
        )
        res = train.train_diffusion(
            cfg, tmp_path / "v" / "vae_best.ckpt", records, tmp_path / "t2",
            resume=tmp_path / "t1" / "denoiser_last.ckpt", quiet=True, steps=4,
        )
        ck = load_checkpoint(tmp_path / "t2" / "denoiser_last.ckpt")
        assert ck.meta["step"] == 4
        assert ck.meta["opt_step"] == 4

    def test_caption_changes_samples(self, tmp_path):
        # same seed, different caption: RGB output must differ
        cfg = tiny_cfg_values(tmp_path / "d")
        records = list(make_records(4, 4, canvas=16, modalities=("rgb", "depth")))
        train.train_vae(cfg, records, records[:2], tmp_path / "v", quiet=True)
        res = train.train_diffusion(
            cfg, tmp_path / "v" / "vae_best.ckpt", records, tmp_path / "t",
            quiet=True, steps=2,
        )
        rec = records[0]
        a = train.sample_records(
            cfg, res["vae"], res["vae_config"], res["unet"], res["embedder"],
            [rec], "semantic_mask", seed=5,
            captions=["a daytime scene with 1 objects"],
        )[0]
        b = train.sample_records(
            cfg, res["vae"], res["vae_config"], res["unet"], res["embedder"],
            [rec], "semantic_mask", seed=5,
            captions=["a nighttime scene with 3 objects"],
        )[0]
        assert not np.array_equal(a.get("rgb"), b.get("rgb"))

    def test_eval_ground_truth_against_itself(self, tmp_path, monkeypatch):
        # oracle wiring: identical generated and reference sets give the
        # metric fixed points (SSIM 1, infinite PSNR, zero set distance)
        cfg = tiny_cfg_values(tmp_path / "d")
        records = list(make_records(5, 5, canvas=16, modalities=("rgb", "depth")))
        train.train_vae(cfg, records, records[:2], tmp_path / "v", quiet=True)
        train.train_diffusion(
            cfg, tmp_path / "v" / "vae_best.ckpt", records, tmp_path / "t",
            quiet=True, steps=2,
        )

        def fake_sample(cfg_, vae_model, vcfg, unet, embedder, recs, layout_kind, seed,
                        guidance_scale=None, captions=None):
            return [ModalBundle(images=list(r.bundle.images)) for r in recs]

        monkeypatch.setattr(train, "sample_records", fake_sample)
        report = train.evaluate(
            cfg, tmp_path / "v" / "vae_best.ckpt", tmp_path / "t" / "denoiser_last.ckpt",
            records, seed=1,
        )
        assert all(math.isinf(v) for v in report.psnr_db.values())
        assert all(v == 1.0 for v in report.ssim_val.values())
        assert report.ssim_x == 1.0
        assert report.feature_dist < 1e-6


class TestGrid:
    def test_grid_concatenates_modalities(self):
        rng = np.random.default_rng(0)
        bundle = ModalBundle(images=[
            ("rgb", rng.uniform(-1, 1, (3, 8, 8)).astype(np.float32)),
            ("depth", rng.uniform(-1, 1, (1, 8, 8)).astype(np.float32)),
        ])
        grid = train.bundle_grid(bundle, gap=2)
        assert grid.shape == (3, 8, 8 + 2 + 8)


class TestSpecExamples:
    def test_three_modality_pipeline_sample_counts(self, tmp_path):
        # an N=3 checkpoint must yield three images plus the grid
        text = TINY.format(root=tmp_path / "d").replace(
            "data.modalities = rgb,depth", "data.modalities = rgb,depth,edge"
        )
        cfg_path = tmp_path / "c.txt"
        cfg_path.write_text(text)
        assert main(["datagen", "--config", str(cfg_path)]) == 0
        assert main(["train-vae", "--config", str(cfg_path), "--out", str(tmp_path / "v")]) == 0
        assert main([
            "train-diffusion", "--config", str(cfg_path), "--out", str(tmp_path / "t"),
            "--vae", str(tmp_path / "v" / "vae_best.ckpt"),
        ]) == 0
        rc = main([
            "sample", "--config", str(cfg_path), "--out", str(tmp_path / "s"),
            "--vae", str(tmp_path / "v" / "vae_best.ckpt"),
            "--denoiser", str(tmp_path / "t" / "denoiser_last.ckpt"),
            "--layout", str(tmp_path / "d" / "train" / "00000_mask.png"),
            "--caption", "a daytime scene with 1 objects",
        ])
        assert rc == 0
        pngs = sorted(p.name for p in (tmp_path / "s").glob("*.png"))
        assert pngs == ["sample_depth.png", "sample_edge.png", "sample_grid.png",
                        "sample_rgb.png"]

    def test_sampling_deterministic_same_seed(self, tmp_path):
        cfg = tiny_cfg_values(tmp_path / "d")
        records = list(make_records(6, 4, canvas=16, modalities=("rgb", "depth")))
        train.train_vae(cfg, records, records[:2], tmp_path / "v", quiet=True)
        res = train.train_diffusion(
            cfg, tmp_path / "v" / "vae_best.ckpt", records, tmp_path / "t",
            quiet=True, steps=2,
        )
        kw = dict(records=records[:2], layout_kind="semantic_mask", seed=99)
        a = train.sample_records(cfg, res["vae"], res["vae_config"], res["unet"],
                                 res["embedder"], **kw)
        b = train.sample_records(cfg, res["vae"], res["vae_config"], res["unet"],
                                 res["embedder"], **kw)
        for ba, bb in zip(a, b):
            for (t1, i1), (t2, i2) in zip(ba.images, bb.images):
                assert t1 == t2 and np.array_equal(i1, i2)

    def test_overfit_single_record_mae(self, tmp_path):
        # overfit mode: train == val == 1 record, 2000 steps, MAE < 0.05
        values = {
            "seed": 1, "data.root": str(tmp_path / "d"), "data.canvas": 16,
            "data.modalities": ("rgb", "depth"),
            "vae.stem_width": 8, "vae.widths": (8, 16), "vae.z_channels": 2,
            "vae.lp_levels": 2, "vae.batch_size": 1, "vae.epochs": 2000,
            "train.lr": 2e-3, "train.warmup_steps": 50,
        }
        cfg = RunConfig(values)
        record = list(make_records(9, 1, canvas=16, modalities=("rgb", "depth")))
        res = train.train_vae(cfg, record, record, tmp_path / "v", quiet=True)
        model = res["model"]
        from rgbx import autodiff as ad
        from rgbx.train import stack_modalities

        with ad.no_grad():
            arrays = stack_modalities(record, ("rgb", "depth"))
            recon = model.decode_tensors(model.encode(None, batched=arrays).mu)
        mae = float(np.mean([
            np.abs(recon[tag].data - arr).mean()
            for tag, arr in zip(("rgb", "depth"), arrays)
        ]))
        assert mae < 0.05, mae


class TestEntryPoint:
    def test_module_help(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-m", "rgbx.cli", "--help"], capture_output=True, text=True
        )
        assert out.returncode == 0
        for sub in ("datagen", "train-vae", "train-diffusion", "sample", "eval", "sweep"):
            assert sub in out.stdout

    def test_overlength_caption_is_data_error(self, pipeline):
        base, cfg_path = pipeline
        rc = main([
            "sample", "--config", str(cfg_path), "--out", str(base / "toolong"),
            "--vae", str(base / "vae" / "vae_best.ckpt"),
            "--denoiser", str(base / "diff" / "denoiser_last.ckpt"),
            "--layout", str(base / "data" / "train" / "00000_mask.png"),
            "--caption", " ".join(["red"] * 249),
        ])
        assert rc == 3
