"""Ablation sweeps: pyramid on/off, shared vs unimodal latents, caption effect.

Each sweep is a deterministic function of (config, seeds) and returns a
summary dict; the CLI writes it as JSON. These are directional desk-scale
reproductions, not paper-scale numbers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from rgbx import autodiff as ad
from rgbx import metrics
from rgbx.config import RunConfig
from rgbx.scenes import make_records
from rgbx.train import (
    build_sampling_conditioning,
    build_schedule,
    sample_records,
    stack_modalities,
    train_diffusion,
    train_vae,
)
from rgbx.vae import ModalBundle, make_extractors
from rgbx import diffusion


def _with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    out = RunConfig(dict(cfg.values))
    out.set("seed", seed)
    return out


def _vae_recon_metrics(model, records, vcfg) -> dict:
    """Held-out reconstruction PSNR/SSIM per modality."""
    with ad.no_grad():
        arrays = stack_modalities(records, vcfg.modalities)
        dist = model.encode(None, batched=arrays)
        recon = model.decode_tensors(dist.mu)
    out = {}
    for tag, target in zip(vcfg.modalities, arrays):
        gen = recon[tag].data
        out[f"psnr.{tag}"] = float(
            np.mean([metrics.psnr(gen[i], target[i], max_val=2.0) for i in range(len(target))])
        )
        out[f"ssim.{tag}"] = float(
            np.mean([metrics.ssim(gen[i], target[i]) for i in range(len(target))])
        )
    return out


def sweep_lp(cfg: RunConfig, seeds=(0, 1, 2), out_dir=None, quiet: bool = True) -> dict:
    """Train the VAE with and without pyramid injection on fresh data per seed.

    Reports held-out PSNR/SSIM per modality; a seed counts as a win when
    the pyramid run is at least as good on the X modality for both metrics.
    """
    x_tag = [m for m in cfg["data.modalities"] if m != "rgb"][0]
    runs = []
    wins = 0
    for seed in seeds:
        scfg = _with_seed(cfg, seed)
        records = list(
            make_records(
                seed, scfg["data.n_train"] + scfg["data.n_val"],
                canvas=scfg["data.canvas"], modalities=tuple(scfg["data.modalities"]),
                n_objects=(scfg["data.objects_min"], scfg["data.objects_max"]),
            )
        )
        train = records[: scfg["data.n_train"]]
        val = records[scfg["data.n_train"]:]
        per_variant = {}
        for label, lp in (("with_lp", scfg["vae.lp_levels"]), ("without_lp", 0)):
            res = train_vae(
                scfg, train, val,
                Path(out_dir or "runs/sweep_lp") / f"seed{seed}_{label}",
                lp_levels=lp, quiet=quiet,
            )
            per_variant[label] = _vae_recon_metrics(res["model"], val, res["config"])
        win = (
            per_variant["with_lp"][f"psnr.{x_tag}"] >= per_variant["without_lp"][f"psnr.{x_tag}"]
            and per_variant["with_lp"][f"ssim.{x_tag}"] >= per_variant["without_lp"][f"ssim.{x_tag}"]
        )
        wins += int(win)
        runs.append({"seed": seed, "win": win, **{
            f"{v}.{k}": per_variant[v][k] for v in per_variant for k in per_variant[v]
        }})
    return {"sweep": "lp", "x_modality": x_tag, "wins": wins, "total": len(seeds), "runs": runs}


def overfit_pipeline(cfg: RunConfig, out_dir, n_records: int = 8,
                     vae_epochs: int | None = None, diff_steps: int | None = None,
                     quiet: bool = True) -> dict:
    """STEP1 + STEP2 on a tiny record set (train == val), for overfit checks."""
    out_dir = Path(out_dir)
    records = list(
        make_records(
            cfg["seed"], n_records, canvas=cfg["data.canvas"],
            modalities=tuple(cfg["data.modalities"]),
            n_objects=(cfg["data.objects_min"], cfg["data.objects_max"]),
        )
    )
    vcfg_epochs = cfg["vae.epochs"] if vae_epochs is None else vae_epochs
    scfg = RunConfig(dict(cfg.values))
    scfg.set("vae.epochs", vcfg_epochs)
    vae_res = train_vae(scfg, records, records, out_dir / "vae", quiet=quiet)
    diff_res = train_diffusion(
        scfg, out_dir / "vae" / "vae_best.ckpt", records, out_dir / "diff",
        quiet=quiet, steps=diff_steps,
    )
    return {"records": records, "cfg": scfg, "out_dir": out_dir, **diff_res}


def _per_sample_feature_distance(gen: ModalBundle, gt: ModalBundle, extractors) -> float:
    vals = [
        metrics.feature_l2(gen.get(tag), gt.get(tag), extractors[tag])
        for tag in gen.tags
    ]
    return float(np.mean(vals))


def _sample_overfit(pipe: dict, records, zero_caption: bool, seed: int,
                    captions=None) -> list[ModalBundle]:
    cfg = pipe["cfg"]
    vcfg = pipe["vae_config"]
    layout_kind = cfg["data.layout"]
    recs = records
    if captions is not None:
        from rgbx.scenes import DatasetRecord

        recs = [
            DatasetRecord(bundle=r.bundle, layouts=r.layouts, caption=c, seed=r.seed)
            for r, c in zip(records, captions)
        ]
    scale = cfg["sampler.guidance_scale"]
    cond = build_sampling_conditioning(pipe["embedder"], recs, layout_kind, scale)
    if zero_caption:
        cond = diffusion.ConditioningBundle(
            caption=cond.caption_uncond,
            grounding=cond.grounding_uncond,
            guidance_scale=1.0,
        )
    sched = build_schedule(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    state = diffusion.sample(
        lambda z, t, c, g: pipe["unet"](z, t, c, g),
        (len(recs),) + vcfg.latent_shape, cond, sched, cfg["sampler.steps"], rng,
    )
    decoded = pipe["vae"].decode(state.z)
    return [
        ModalBundle(images=[(tag, img[i]) for tag, img in decoded.images])
        for i in range(len(recs))
    ]


def _swap_lighting(caption: str) -> str:
    if "daytime" in caption:
        return caption.replace("daytime", "nighttime")
    return caption.replace("nighttime", "daytime")


def caption_effect(pipe: dict, sample_seed: int = 1234) -> dict:
    """Captioned vs zero-caption sampling on the training records.

    Also resamples with the lighting keyword swapped and reports the mean
    RGB brightness shift (expected: nighttime darker than daytime).
    """
    cfg = pipe["cfg"]
    records = pipe["records"]
    layout_kind = cfg["data.layout"]
    extractors = make_extractors(tuple(cfg["data.modalities"]))
    with_cap = _sample_overfit(pipe, records, zero_caption=False, seed=sample_seed)
    without_cap = _sample_overfit(pipe, records, zero_caption=True, seed=sample_seed)
    align_with = float(np.mean([
        metrics.layout_alignment(g, r.layout(layout_kind)) for g, r in zip(with_cap, records)
    ]))
    align_without = float(np.mean([
        metrics.layout_alignment(g, r.layout(layout_kind)) for g, r in zip(without_cap, records)
    ]))
    fd_with = float(np.mean([
        _per_sample_feature_distance(g, r.bundle, extractors) for g, r in zip(with_cap, records)
    ]))
    fd_without = float(np.mean([
        _per_sample_feature_distance(g, r.bundle, extractors) for g, r in zip(without_cap, records)
    ]))

    swapped = [_swap_lighting(r.caption) for r in records]
    edited = _sample_overfit(pipe, records, zero_caption=False, seed=sample_seed, captions=swapped)
    deltas = []
    for rec, orig, edit in zip(records, with_cap, edited):
        sign = -1.0 if "daytime" in rec.caption else 1.0  # day -> night should darken
        deltas.append(sign * (float(edit.get("rgb").mean()) - float(orig.get("rgb").mean())))
    return {
        "sweep": "caption",
        "alignment_with_caption": align_with,
        "alignment_without_caption": align_without,
        "feature_l2_with_caption": fd_with,
        "feature_l2_without_caption": fd_without,
        "brightness_shift_signed_mean": float(np.mean(deltas)),
        "caption_helps_alignment": align_with > align_without,
        "caption_helps_fidelity": fd_with < fd_without,
        "lighting_flip_correct": float(np.mean(deltas)) > 0.0,
    }


def sweep_caption(cfg: RunConfig, out_dir, n_records: int = 8,
                  vae_epochs: int | None = None, diff_steps: int | None = None,
                  quiet: bool = True) -> dict:
    pipe = overfit_pipeline(
        cfg, Path(out_dir), n_records=n_records, vae_epochs=vae_epochs,
        diff_steps=diff_steps, quiet=quiet,
    )
    return caption_effect(pipe)


def sweep_shared(cfg: RunConfig, seeds=(0, 1, 2), out_dir=None,
                 vae_epochs: int | None = None, diff_steps: int | None = None,
                 quiet: bool = True) -> dict:
    """Shared-latent pipeline vs two unimodal pipelines at equal step budget.

    The separate variant gets half the VAE epochs and half the denoiser
    steps per modality, so both variants spend the same total optimizer
    budget. Scored by feature distance between generated and held-out X.
    """
    out_dir = Path(out_dir or "runs/sweep_shared")
    modalities = tuple(cfg["data.modalities"])
    x_tag = [m for m in modalities if m != "rgb"][0]
    epochs = cfg["vae.epochs"] if vae_epochs is None else vae_epochs
    steps = cfg["train.steps"] if diff_steps is None else diff_steps
    extract = make_extractors((x_tag,))[x_tag]
    runs = []
    wins = 0
    for seed in seeds:
        scfg = _with_seed(cfg, seed)
        records = list(
            make_records(
                seed, scfg["data.n_train"] + scfg["data.n_val"],
                canvas=scfg["data.canvas"], modalities=modalities,
                n_objects=(scfg["data.objects_min"], scfg["data.objects_max"]),
            )
        )
        train = records[: scfg["data.n_train"]]
        val = records[scfg["data.n_train"]:]
        gt_x = [r.bundle.get(x_tag) for r in val]

        # shared pipeline
        base = out_dir / f"seed{seed}"
        scfg.set("vae.epochs", epochs)
        vres = train_vae(scfg, train, val, base / "shared_vae", quiet=quiet)
        dres = train_diffusion(
            scfg, base / "shared_vae" / "vae_best.ckpt", train, base / "shared_diff",
            quiet=quiet, steps=steps,
        )
        shared_samples = sample_records(
            scfg, dres["vae"], dres["vae_config"], dres["unet"], dres["embedder"],
            val, scfg["data.layout"], seed=9000 + seed,
        )
        fd_shared = metrics.feature_distance(
            [b.get(x_tag) for b in shared_samples], gt_x, extract
        ).value

        # unimodal pipelines at half budget each; only the X pipeline is scored
        half_cfg = _with_seed(cfg, seed)
        half_cfg.set("vae.epochs", max(epochs // 2, 1))
        uni_x = train_vae(
            half_cfg, train, val, base / "uni_x_vae", modalities=(x_tag,), quiet=quiet
        )
        udres = train_diffusion(
            half_cfg, base / "uni_x_vae" / "vae_best.ckpt", train, base / "uni_x_diff",
            quiet=quiet, steps=max(steps // 2, 1),
        )
        uni_samples = sample_records(
            half_cfg, udres["vae"], udres["vae_config"], udres["unet"], udres["embedder"],
            val, half_cfg["data.layout"], seed=9000 + seed,
        )
        fd_uni = metrics.feature_distance(
            [b.get(x_tag) for b in uni_samples], gt_x, extract
        ).value
        win = fd_shared <= fd_uni
        wins += int(win)
        runs.append({"seed": seed, "fd_shared": fd_shared, "fd_unimodal": fd_uni, "win": win})
    return {"sweep": "shared", "x_modality": x_tag, "wins": wins, "total": len(seeds), "runs": runs}


def write_summary(summary: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=1, sort_keys=True))
    return path
