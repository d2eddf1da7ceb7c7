"""Training orchestration: STEP1 (VAE), STEP2 (denoiser), sampling, eval, sweeps.

All randomness flows from named child generators of the root seed, so a
(config, seed) pair reproduces every artifact bit-exactly. STEP2 freezes
the VAE and encodes each record once up front; the joint-modality embedder
and the UNet train together.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from rgbx import autodiff as ad
from rgbx import diffusion, metrics, pngio
from rgbx.autodiff import Tensor
from rgbx.checkpoint import Checkpoint, check_geometry, load_checkpoint, save_checkpoint
from rgbx.conditioning import (
    PAD_ID,
    CaptionEmbedding,
    GroundingFeature,
    JointModalityEmbedder,
    LayoutCondition,
    Tokenizer,
    drop_caption,
    one_hot_mask,
)
from rgbx.config import RunConfig
from rgbx.errors import CheckpointError, DataError
from rgbx.optim import Adam, warmup_constant_lr
from rgbx.scenes import N_CLASSES, DatasetRecord
from rgbx.unet import DenoiserUNet, UnetConfig
from rgbx.vae import DPVAE, ModalBundle, VaeConfig, dp_vae_loss_terms, make_extractors


def _child_rngs(seed: int, names: list[str]) -> dict[str, np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def log(msg: str):
    print(msg, flush=True)


# -- model builders ------------------------------------------------------


def vae_config_from_run(cfg: RunConfig, modalities=None, lp_levels=None) -> VaeConfig:
    return VaeConfig(
        modalities=tuple(modalities if modalities is not None else cfg["data.modalities"]),
        image_size=cfg["data.canvas"],
        stem_width=cfg["vae.stem_width"],
        widths=tuple(cfg["vae.widths"]),
        z_channels=cfg["vae.z_channels"],
        lp_levels=cfg["vae.lp_levels"] if lp_levels is None else lp_levels,
        w_mse=cfg["vae.w_mse"],
        w_feat=cfg["vae.w_feat"],
        w_kl=cfg["vae.w_kl"],
    )


def unet_config_from_run(cfg: RunConfig) -> UnetConfig:
    return UnetConfig(
        z_channels=cfg["vae.z_channels"],
        widths=tuple(cfg["unet.widths"]),
        n_heads=cfg["unet.heads"],
        d_ground=cfg["cond.d_ground"],
        d_text=cfg["cond.d_text"],
        mu=cfg["unet.mu"],
    )


def build_embedder(cfg: RunConfig, rng, layout: str | None = None) -> JointModalityEmbedder:
    return JointModalityEmbedder(
        rng,
        layout=layout or cfg["data.layout"],
        d_ground=cfg["cond.d_ground"],
        d_text=cfg["cond.d_text"],
        resolution=cfg["data.canvas"],
        n_classes=N_CLASSES,
        n_freqs=cfg["cond.fourier_freqs"],
        lambda_scale=cfg["cond.lambda"],
        text_layers=cfg["cond.text_layers"],
        text_heads=cfg["cond.text_heads"],
        mask_widths=tuple(cfg["cond.mask_widths"]),
        n_max_boxes=cfg["data.n_max_boxes"],
    )


def build_schedule(cfg: RunConfig) -> diffusion.NoiseSchedule:
    return diffusion.make_schedule(
        cfg["diffusion.T"], cfg["diffusion.beta_start"], cfg["diffusion.beta_end"]
    )


# -- batching ------------------------------------------------------------


def stack_modalities(records: list[DatasetRecord], modalities) -> list[np.ndarray]:
    """Per-modality (B, c, H, W) float32 stacks in modality order."""
    return [
        np.stack([rec.bundle.get(tag) for rec in records]).astype(np.float32)
        for tag in modalities
    ]


def collate_captions(records, tokenizer: Tokenizer):
    ids_list = [tokenizer.encode(rec.caption) for rec in records]
    max_len = max(len(i) for i in ids_list)
    ids = np.full((len(ids_list), max_len), PAD_ID, dtype=np.int64)
    valid = np.zeros((len(ids_list), max_len), dtype=bool)
    for i, seq in enumerate(ids_list):
        ids[i, : len(seq)] = seq
        valid[i, : len(seq)] = True
    return ids, valid


def embed_layouts(embedder: JointModalityEmbedder, records, layout_kind: str) -> GroundingFeature:
    """Batched grounding tokens; box layouts are padded with a validity mask."""
    if layout_kind in ("semantic_mask", "salient_map", "edge_map"):
        planes = []
        for rec in records:
            layout = rec.layout(layout_kind)
            if layout_kind == "semantic_mask":
                planes.append(one_hot_mask(layout.mask, N_CLASSES))
            else:
                planes.append(layout.mask.astype(np.float32)[None])
        return embedder.mask_embedder.forward_planes(np.stack(planes))
    toks = []
    for rec in records:
        layout = rec.layout("boxes")
        toks.append(embedder.box_embedder(layout.boxes, layout.labels).tokens)
    n_max = max(t.shape[0] for t in toks)
    d = toks[0].shape[1]
    padded = []
    valid = np.zeros((len(toks), n_max), dtype=bool)
    for i, t in enumerate(toks):
        n = t.shape[0]
        valid[i, :n] = True
        if n < n_max:
            pad = Tensor(np.zeros((n_max - n, d), dtype=t.data.dtype))
            t = ad.concat([t, pad], axis=0)
        padded.append(ad.reshape(t, (1, n_max, d)))
    return GroundingFeature(tokens=ad.concat(padded, axis=0), mask=valid)


def build_conditioning(embedder, records, layout_kind, drop_p, rng,
                       guidance_scale: float = 1.0) -> diffusion.ConditioningBundle:
    """Batched caption + fused grounding, with caption drop applied."""
    ids, valid = collate_captions(records, embedder.tokenizer)
    caption = CaptionEmbedding(tokens=embedder.text_encoder(ids, valid), mask=valid)
    caption = drop_caption(caption, drop_p, rng)
    grounding = embed_layouts(embedder, records, layout_kind)
    fused = embedder.fuser(grounding, caption)
    return diffusion.ConditioningBundle(
        caption=caption, grounding=fused, guidance_scale=guidance_scale
    )


def build_sampling_conditioning(embedder, records, layout_kind,
                                guidance_scale: float) -> diffusion.ConditioningBundle:
    """Conditional and caption-dropped branches, mirroring training modes."""
    ids, valid = collate_captions(records, embedder.tokenizer)
    with ad.no_grad():
        caption = CaptionEmbedding(tokens=embedder.text_encoder(ids, valid), mask=valid)
        grounding = embed_layouts(embedder, records, layout_kind)
        fused = embedder.fuser(grounding, caption)
        cap_u = caption.zeros_like()
        fused_u = embedder.fuser(grounding, cap_u)
    return diffusion.ConditioningBundle(
        caption=caption,
        grounding=fused,
        guidance_scale=guidance_scale,
        caption_uncond=cap_u,
        grounding_uncond=fused_u,
    )


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- STEP1: DP-VAE ---------------------------------------------------------


def train_vae(cfg: RunConfig, records_train, records_val, out_dir,
              lp_levels: int | None = None, modalities=None, resume: str | None = None,
              quiet: bool = False) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rngs = _child_rngs(cfg["seed"], ["vae_init", "vae_train"])
    vcfg = vae_config_from_run(cfg, modalities=modalities, lp_levels=lp_levels)
    model = DPVAE(vcfg, rngs["vae_init"])
    extractors = make_extractors(vcfg.modalities)
    opt = Adam(dict(model.named_parameters()), lr=cfg["train.lr"])
    start_epoch = 0
    best_val = np.inf
    if resume:
        ck = load_checkpoint(resume, expect_kind="dpvae")
        _check_vae_geometry(ck, vcfg)
        model.load_state_dict(_strip(ck.arrays, "model."))
        if any(k.startswith("opt.m.") for k in ck.arrays):
            opt.load_state_dict(
                {
                    "step_count": ck.meta["opt_step"],
                    "m": _strip(ck.arrays, "opt.m."),
                    "v": _strip(ck.arrays, "opt.v."),
                }
            )
        start_epoch = int(ck.meta.get("epoch", 0))
        best_val = float(ck.meta.get("best_val_mse", np.inf))

    n = len(records_train)
    bs = min(cfg["vae.batch_size"], n)
    history = []
    for epoch in range(start_epoch, cfg["vae.epochs"]):
        perm = rngs["vae_train"].permutation(n)
        sums = {"mse": 0.0, "feat": 0.0, "kl": 0.0, "total": 0.0}
        batches = 0
        for lo in range(0, n, bs):
            batch = [records_train[i] for i in perm[lo : lo + bs]]
            arrays = stack_modalities(batch, vcfg.modalities)
            dist = model.encode(None, batched=arrays)
            z = dist.sample(rngs["vae_train"]) if cfg["train.posterior_sample"] else dist.mu
            recon = model.decode_tensors(z)
            targets = {tag: arr for tag, arr in zip(vcfg.modalities, arrays)}
            terms = dp_vae_loss_terms(
                targets, recon, dist, extractors,
                w_mse=vcfg.w_mse, w_feat=vcfg.w_feat, w_kl=vcfg.w_kl,
            )
            model.zero_grad()
            terms["total"].backward()
            clip_grad_norm(opt.params, 1.0)
            lr = warmup_constant_lr(cfg["train.lr"], cfg["train.warmup_steps"], opt.step_count + 1)
            opt.step(lr)
            for key in sums:
                if key in terms:
                    sums[key] += terms[key].item()
            batches += 1
        val_mse = evaluate_vae_mse(model, records_val, vcfg) if records_val else np.nan
        history.append(
            {"epoch": epoch, **{k: s / max(batches, 1) for k, s in sums.items()}, "val_mse": val_mse}
        )
        if not quiet:
            h = history[-1]
            log(
                f"vae epoch {epoch:3d} | step {opt.step_count:5d} | "
                f"mse {h['mse']:.5f} | feat {h['feat']:.5f} | kl {h['kl']:.3f} | "
                f"val_mse {val_mse:.5f}"
            )
        improved = records_val and val_mse < best_val
        if improved:
            best_val = val_mse
            _save_vae(out_dir / "vae_best.ckpt", model, vcfg, cfg, opt=None,
                      meta={"epoch": epoch + 1, "best_val_mse": best_val})
        _save_vae(out_dir / "vae_last.ckpt", model, vcfg, cfg, opt=opt,
                  meta={"epoch": epoch + 1, "best_val_mse": float(best_val)})
    if not (out_dir / "vae_best.ckpt").exists():
        _save_vae(out_dir / "vae_best.ckpt", model, vcfg, cfg, opt=None,
                  meta={"epoch": cfg["vae.epochs"], "best_val_mse": float(best_val)})
    return {"history": history, "best_val_mse": float(best_val), "model": model, "config": vcfg}


def evaluate_vae_mse(model: DPVAE, records, vcfg: VaeConfig) -> float:
    with ad.no_grad():
        arrays = stack_modalities(records, vcfg.modalities)
        dist = model.encode(None, batched=arrays)
        recon = model.decode_tensors(dist.mu)
        total = 0.0
        for tag, target in zip(vcfg.modalities, arrays):
            total += float(np.mean((recon[tag].data - target) ** 2))
    return total / len(vcfg.modalities)


def _save_vae(path, model: DPVAE, vcfg: VaeConfig, cfg: RunConfig, opt, meta):
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    if opt is not None:
        st = opt.state_dict()
        arrays.update({f"opt.m.{k}": v for k, v in st["m"].items()})
        arrays.update({f"opt.v.{k}": v for k, v in st["v"].items()})
        meta = dict(meta, opt_step=st["step_count"])
    save_checkpoint(
        path, "dpvae",
        config={
            "modalities": list(vcfg.modalities),
            "image_size": vcfg.image_size,
            "stem_width": vcfg.stem_width,
            "widths": list(vcfg.widths),
            "z_channels": vcfg.z_channels,
            "lp_levels": vcfg.lp_levels,
            "run_config": cfg.to_text(),
        },
        arrays=arrays,
        meta=meta,
    )


def _check_vae_geometry(ck: Checkpoint, vcfg: VaeConfig):
    check_geometry(
        ck.config,
        {
            "modalities": list(vcfg.modalities),
            "image_size": vcfg.image_size,
            "widths": list(vcfg.widths),
            "z_channels": vcfg.z_channels,
        },
    )


def load_vae(path) -> tuple[DPVAE, VaeConfig]:
    ck = load_checkpoint(path, expect_kind="dpvae")
    vcfg = VaeConfig(
        modalities=tuple(ck.config["modalities"]),
        image_size=ck.config["image_size"],
        stem_width=ck.config["stem_width"],
        widths=tuple(ck.config["widths"]),
        z_channels=ck.config["z_channels"],
        lp_levels=ck.config["lp_levels"],
    )
    model = DPVAE(vcfg, np.random.default_rng(0))
    model.load_state_dict(_strip(ck.arrays, "model."))
    return model, vcfg


def _strip(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


# -- STEP2: denoiser -------------------------------------------------------


def encode_latents(model: DPVAE, records, vcfg: VaeConfig, batch: int = 32):
    """Posterior mu/logvar for every record, encoded once with frozen weights."""
    mus, logvars = [], []
    with ad.no_grad():
        for lo in range(0, len(records), batch):
            chunk = records[lo : lo + batch]
            arrays = stack_modalities(chunk, vcfg.modalities)
            dist = model.encode(None, batched=arrays)
            mus.append(dist.mu.data.copy())
            logvars.append(dist.logvar.data.copy())
    return np.concatenate(mus), np.concatenate(logvars)


def train_diffusion(cfg: RunConfig, vae_ckpt, records, out_dir, resume: str | None = None,
                    quiet: bool = False, steps: int | None = None,
                    layout_kind: str | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae_model, vcfg = load_vae(vae_ckpt)
    if vcfg.image_size != cfg["data.canvas"] or vcfg.z_channels != cfg["vae.z_channels"]:
        raise CheckpointError(
            f"VAE checkpoint geometry ({vcfg.image_size}px, {vcfg.z_channels}ch latent) "
            f"does not match run config ({cfg['data.canvas']}px, {cfg['vae.z_channels']}ch)"
        )
    layout_kind = layout_kind or cfg["data.layout"]
    rngs = _child_rngs(cfg["seed"], ["diff_init", "diff_train"])
    embedder = build_embedder(cfg, rngs["diff_init"], layout=layout_kind)
    ucfg = unet_config_from_run(cfg)
    unet = DenoiserUNet(ucfg, rngs["diff_init"])
    sched = build_schedule(cfg)

    mu_bank, logvar_bank = encode_latents(vae_model, records, vcfg)
    params = {f"unet.{k}": p for k, p in unet.named_parameters()}
    params.update({f"embedder.{k}": p for k, p in embedder.named_parameters()})
    opt = Adam(params, lr=cfg["train.lr"])
    start_step = 0
    if resume:
        ck = load_checkpoint(resume, expect_kind="denoiser")
        unet.load_state_dict(_strip(ck.arrays, "unet."))
        embedder.load_state_dict(_strip(ck.arrays, "embedder."))
        if any(k.startswith("opt.m.") for k in ck.arrays):
            opt.load_state_dict(
                {
                    "step_count": ck.meta["opt_step"],
                    "m": _strip(ck.arrays, "opt.m."),
                    "v": _strip(ck.arrays, "opt.v."),
                }
            )
        start_step = int(ck.meta.get("step", 0))

    n = len(records)
    bs = min(cfg["train.batch_size"], n)
    total_steps = steps if steps is not None else cfg["train.steps"]
    rng_t = rngs["diff_train"]
    dropped_total = 0
    seen_total = 0
    history = []
    for step in range(start_step, total_steps):
        idx = rng_t.choice(n, size=bs, replace=n < bs)
        batch = [records[i] for i in idx]
        z0 = mu_bank[idx]
        if cfg["train.posterior_sample"]:
            eps = rng_t.standard_normal(z0.shape).astype(z0.dtype)
            z0 = z0 + np.exp(0.5 * logvar_bank[idx]) * eps
        cond = build_conditioning(
            embedder, batch, layout_kind, cfg["train.caption_drop"], rng_t
        )
        n_drop = int(np.sum(cond.caption.is_dropped)) if not isinstance(
            cond.caption.is_dropped, bool
        ) else int(cond.caption.is_dropped) * bs
        dropped_total += n_drop
        seen_total += bs
        loss = diffusion.training_loss(
            lambda z, t, c, g: unet(z, t, c, g), z0, cond, sched, rng_t
        )
        for p in params.values():
            p.grad = None
        loss.backward()
        clip_grad_norm(params, 1.0)
        lr = warmup_constant_lr(cfg["train.lr"], cfg["train.warmup_steps"], opt.step_count + 1)
        opt.step(lr)
        if (step + 1) % cfg["train.log_every"] == 0 or step + 1 == total_steps:
            frac = dropped_total / max(seen_total, 1)
            history.append({"step": step + 1, "loss": loss.item(), "drop_frac": frac})
            if not quiet:
                log(
                    f"diff step {step + 1:6d} | loss {loss.item():.5f} | "
                    f"uncond_frac {frac:.3f} | lr {lr:.2e}"
                )
    _save_denoiser(out_dir / "denoiser_last.ckpt", unet, embedder, ucfg, cfg, layout_kind,
                   opt=opt, meta={"step": total_steps})
    return {
        "history": history,
        "unet": unet,
        "embedder": embedder,
        "schedule": sched,
        "vae": vae_model,
        "vae_config": vcfg,
        "drop_fraction": dropped_total / max(seen_total, 1),
    }


def _save_denoiser(path, unet: DenoiserUNet, embedder: JointModalityEmbedder,
                   ucfg: UnetConfig, cfg: RunConfig, layout_kind: str, opt, meta):
    arrays = {f"unet.{k}": v for k, v in unet.state_dict().items()}
    arrays.update({f"embedder.{k}": v for k, v in embedder.state_dict().items()})
    if opt is not None:
        st = opt.state_dict()
        arrays.update({f"opt.m.{k}": v for k, v in st["m"].items()})
        arrays.update({f"opt.v.{k}": v for k, v in st["v"].items()})
        meta = dict(meta, opt_step=st["step_count"])
    save_checkpoint(
        path, "denoiser",
        config={
            "z_channels": ucfg.z_channels,
            "unet_widths": list(ucfg.widths),
            "heads": ucfg.n_heads,
            "d_ground": ucfg.d_ground,
            "d_text": ucfg.d_text,
            "mu": ucfg.mu,
            "layout": layout_kind,
            "canvas": cfg["data.canvas"],
            "vocab": list(embedder.tokenizer.vocab),
            "run_config": cfg.to_text(),
        },
        arrays=arrays,
        meta=meta,
    )


def load_denoiser(path, cfg: RunConfig) -> tuple[DenoiserUNet, JointModalityEmbedder, str]:
    ck = load_checkpoint(path, expect_kind="denoiser")
    check_geometry(
        ck.config,
        {"z_channels": cfg["vae.z_channels"], "canvas": cfg["data.canvas"]},
        path=str(path),
    )
    layout_kind = ck.config["layout"]
    ucfg = UnetConfig(
        z_channels=ck.config["z_channels"],
        widths=tuple(ck.config["unet_widths"]),
        n_heads=ck.config["heads"],
        d_ground=ck.config["d_ground"],
        d_text=ck.config["d_text"],
        mu=ck.config["mu"],
    )
    unet = DenoiserUNet(ucfg, np.random.default_rng(0))
    unet.load_state_dict(_strip(ck.arrays, "unet."))
    tk = Tokenizer(vocab=ck.config["vocab"])
    embedder = build_embedder(cfg, np.random.default_rng(0), layout=layout_kind)
    embedder.tokenizer = tk
    embedder.load_state_dict(_strip(ck.arrays, "embedder."))
    return unet, embedder, layout_kind


# -- sampling --------------------------------------------------------------


def sample_records(cfg: RunConfig, vae_model: DPVAE, vcfg: VaeConfig, unet: DenoiserUNet,
                   embedder: JointModalityEmbedder, records, layout_kind: str,
                   seed: int, guidance_scale: float | None = None,
                   captions: list[str] | None = None) -> list[ModalBundle]:
    """Sample one bundle per record, conditioned on its layout and caption."""
    scale = cfg["sampler.guidance_scale"] if guidance_scale is None else guidance_scale
    if captions is not None:
        records = [
            DatasetRecord(bundle=r.bundle, layouts=r.layouts, caption=c, seed=r.seed)
            for r, c in zip(records, captions)
        ]
    cond = build_sampling_conditioning(embedder, records, layout_kind, scale)
    sched = build_schedule(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    latent_shape = (len(records),) + vcfg.latent_shape
    state = diffusion.sample(
        lambda z, t, c, g: unet(z, t, c, g),
        latent_shape, cond, sched, cfg["sampler.steps"], rng,
    )
    decoded = vae_model.decode(state.z)
    out = []
    for i in range(len(records)):
        out.append(ModalBundle(images=[(tag, img[i]) for tag, img in decoded.images]))
    return out


def bundle_grid(bundle: ModalBundle, gap: int = 2) -> np.ndarray:
    """Side-by-side (3, H, sum W) grid; single-channel maps become gray RGB."""
    parts = []
    h = bundle.images[0][1].shape[-2]
    sep = np.ones((3, h, gap), dtype=np.float32)
    for i, (tag, img) in enumerate(bundle.images):
        rgb = img if img.shape[0] == 3 else np.repeat(img, 3, axis=0)
        if i:
            parts.append(sep)
        parts.append(rgb.astype(np.float32))
    return np.concatenate(parts, axis=-1)


def sample_to_files(cfg: RunConfig, vae_ckpt, diff_ckpt, layout: LayoutCondition,
                    caption: str, seed: int, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae_model, vcfg = load_vae(vae_ckpt)
    unet, embedder, layout_kind = load_denoiser(diff_ckpt, cfg)
    rec = DatasetRecord(
        bundle=ModalBundle(images=[]), layouts={layout.variant: layout},
        caption=caption, seed=seed,
    )
    bundles = sample_records(
        cfg, vae_model, vcfg, unet, embedder, [rec], layout_kind, seed
    )
    paths = []
    for tag, img in bundles[0].images:
        p = out_dir / f"sample_{tag}.png"
        pngio.save_image(p, np.asarray(img))
        paths.append(p)
    grid = out_dir / "sample_grid.png"
    pngio.save_image(grid, bundle_grid(bundles[0]))
    paths.append(grid)
    (out_dir / "sample_config.txt").write_text(cfg.to_text())
    return paths


# -- evaluation --------------------------------------------------------------


def evaluate(cfg: RunConfig, vae_ckpt, diff_ckpt, records, seed: int) -> metrics.EvalReport:
    if not records:
        raise DataError("cannot evaluate an empty split")
    records = records[: cfg["eval.max_records"]]
    vae_model, vcfg = load_vae(vae_ckpt)
    unet, embedder, layout_kind = load_denoiser(diff_ckpt, cfg)
    bundles = sample_records(
        cfg, vae_model, vcfg, unet, embedder, records, layout_kind, seed
    )
    modalities = vcfg.modalities
    x_tags = [t for t in modalities if t != "rgb"]
    extractor = make_extractors(("rgb",))["rgb"] if not x_tags else make_extractors(x_tags)[x_tags[0]]
    psnr_acc = {t: [] for t in modalities}
    ssim_acc = {t: [] for t in modalities}
    ssim_x_acc = []
    align_acc = []
    gen_x, gt_x = [], []
    for rec, gen in zip(records, bundles):
        for tag in modalities:
            psnr_acc[tag].append(metrics.psnr(gen.get(tag), rec.bundle.get(tag), max_val=2.0))
            ssim_acc[tag].append(metrics.ssim(gen.get(tag), rec.bundle.get(tag)))
        for tag in x_tags:
            ssim_x_acc.append(metrics.ssim(gen.get(tag), rec.bundle.get(tag)))
        align_acc.append(metrics.layout_alignment(gen, rec.layout(layout_kind)))
        if x_tags:
            gen_x.append(gen.get(x_tags[0]))
            gt_x.append(rec.bundle.get(x_tags[0]))
    fd = metrics.feature_distance(gen_x, gt_x, extractor) if len(gen_x) >= 2 else metrics.FrechetResult(0.0)
    return metrics.EvalReport(
        sample_count=len(records),
        psnr_db={t: float(np.mean(v)) for t, v in psnr_acc.items()},
        ssim_val={t: float(np.mean(v)) for t, v in ssim_acc.items()},
        ssim_x=float(np.mean(ssim_x_acc)) if ssim_x_acc else 1.0,
        feature_dist=fd.value,
        feature_dist_loaded=fd.diagonal_loaded,
        alignment=float(np.mean(align_acc)),
    )
