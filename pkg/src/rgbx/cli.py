"""Command-line entry points: datagen, train-vae, train-diffusion, sample, eval, sweep.

Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint error.
Every command derives all randomness from --seed (or the config seed), so
rerunning a command with the same inputs reproduces its artifacts byte for
byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from rgbx import dataset as ds
from rgbx import pngio, sweeps, train
from rgbx.conditioning import LayoutCondition
from rgbx.config import RunConfig
from rgbx.errors import (
    CaptionError,
    CheckpointError,
    ConfigError,
    DataError,
    LayoutError,
    RgbxError,
)
from rgbx.scenes import make_records

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if args.config:
        cfg = RunConfig.from_file(args.config, preset=args.preset, overrides=overrides)
    else:
        cfg = RunConfig(preset=args.preset)
        for k, v in overrides.items():
            cfg.set(k, v)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.out is not None:
        cfg.set("out_dir", str(args.out))
    return cfg.validate()


def _persist_config(cfg: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())


def cmd_datagen(args) -> int:
    cfg = _load_config(args)
    root = Path(cfg["data.root"])
    if root.exists() and any(root.iterdir()) and not args.force:
        raise DataError(f"output dir {root} is not empty; pass --force to overwrite")
    modalities = tuple(cfg["data.modalities"])
    nobj = (cfg["data.objects_min"], cfg["data.objects_max"])
    splits = {}
    for split, count, offset in (
        ("train", cfg["data.n_train"], 0),
        ("val", cfg["data.n_val"], 1_000_000_000),
    ):
        splits[split] = list(
            make_records(
                cfg["seed"] + offset, count, canvas=cfg["data.canvas"],
                modalities=modalities, n_objects=nobj,
            )
        )
    digest = ds.write_dataset(
        root, splits, canvas=cfg["data.canvas"], modalities=modalities,
        config_hash=cfg.data_hash(),
    )
    _persist_config(cfg, root)
    print(f"manifest hash: {digest}")
    print(f"wrote {sum(len(v) for v in splits.values())} records to {root}")
    return EXIT_OK


def cmd_train_vae(args) -> int:
    cfg = _load_config(args)
    records_train = ds.read_dataset(cfg["data.root"], "train")
    records_val = ds.read_dataset(cfg["data.root"], "val")
    _check_dataset_matches(cfg, records_train)
    out_dir = Path(cfg["out_dir"])
    _persist_config(cfg, out_dir)
    res = train.train_vae(cfg, records_train, records_val, out_dir, resume=args.resume)
    print(f"best val mse: {res['best_val_mse']:.6f}")
    print(f"checkpoints: {out_dir / 'vae_best.ckpt'}, {out_dir / 'vae_last.ckpt'}")
    return EXIT_OK


def cmd_train_diffusion(args) -> int:
    cfg = _load_config(args)
    records_train = ds.read_dataset(cfg["data.root"], "train")
    _check_dataset_matches(cfg, records_train)
    out_dir = Path(cfg["out_dir"])
    _persist_config(cfg, out_dir)
    res = train.train_diffusion(cfg, args.vae, records_train, out_dir, resume=args.resume)
    last = res["history"][-1] if res["history"] else {"loss": float("nan")}
    print(f"final loss: {last['loss']:.5f} | uncond fraction: {res['drop_fraction']:.3f}")
    print(f"checkpoint: {out_dir / 'denoiser_last.ckpt'}")
    return EXIT_OK


def load_layout_file(path, kind: str) -> LayoutCondition:
    path = Path(path)
    if not path.exists():
        raise DataError(f"layout file {path} does not exist")
    if path.suffix == ".json":
        import json

        with open(path) as f:
            payload = json.load(f)
        boxes = np.asarray(
            [[r["x0"], r["y0"], r["x1"], r["y1"]] for r in payload], dtype=np.float64
        ).reshape(-1, 4)
        return LayoutCondition(
            variant="boxes", boxes=boxes, labels=[r["label"] for r in payload]
        ).validate()
    if kind == "semantic_mask":
        return LayoutCondition(variant="semantic_mask", mask=pngio.load_mask(path)).validate()
    mask = pngio.load_image(path, expect_channels=1)[0]
    return LayoutCondition(variant=kind, mask=mask).validate()


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    layout = load_layout_file(args.layout, cfg["data.layout"])
    out_dir = Path(cfg["out_dir"])
    _persist_config(cfg, out_dir)
    paths = train.sample_to_files(
        cfg, args.vae, args.denoiser, layout, args.caption, cfg["seed"], out_dir
    )
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    records = ds.read_dataset(cfg["data.root"], args.split)
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    out_dir = Path(cfg["out_dir"])
    _persist_config(cfg, out_dir)
    report = train.evaluate(cfg, args.vae, args.denoiser, records, cfg["seed"])
    (out_dir / "eval_report.json").write_text(report.to_json())
    print(report.table())
    print(f"report: {out_dir / 'eval_report.json'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg["out_dir"])
    _persist_config(cfg, out_dir)
    seeds = tuple(int(s) for s in (args.seeds or "0,1,2").split(","))
    if args.kind == "lp":
        summary = sweeps.sweep_lp(cfg, seeds=seeds, out_dir=out_dir, quiet=False)
    elif args.kind == "caption":
        summary = sweeps.sweep_caption(cfg, out_dir, quiet=False)
    elif args.kind == "shared":
        summary = sweeps.sweep_shared(cfg, seeds=seeds, out_dir=out_dir, quiet=False)
    else:
        raise ConfigError(f"unknown sweep kind {args.kind!r}")
    path = sweeps.write_summary(summary, out_dir / f"sweep_{args.kind}.json")
    if "wins" in summary:
        print(f"{args.kind}: {summary['wins']}/{summary['total']} seeds favor the full model")
    print(f"summary: {path}")
    return EXIT_OK


def _check_dataset_matches(cfg: RunConfig, records) -> None:
    if not records:
        raise DataError("train split is empty")
    tags = records[0].bundle.tags
    if tags != list(cfg["data.modalities"]):
        raise DataError(
            f"dataset modalities {tags} do not match config {list(cfg['data.modalities'])}"
        )
    h, w = records[0].bundle.spatial
    if h != cfg["data.canvas"]:
        raise DataError(f"dataset canvas {h} does not match config {cfg['data.canvas']}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgbx",
        description="Layout- and caption-guided cross-modal RGB+X latent diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="config file (key = value lines)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--force", action="store_true")
        p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
        p.add_argument("--preset", choices=["desk", "paper-shape"], default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")

    p = sub.add_parser("datagen", help="generate the synthetic paired dataset")
    common(p)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train-vae", help="STEP1: train the dual-path VAE")
    common(p)
    p.set_defaults(fn=cmd_train_vae)

    p = sub.add_parser("train-diffusion", help="STEP2: train the latent denoiser")
    common(p)
    p.add_argument("--vae", type=Path, required=True, help="VAE checkpoint from STEP1")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("sample", help="sample RGB+X images for a layout and caption")
    common(p)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--denoiser", type=Path, required=True)
    p.add_argument("--layout", type=Path, required=True,
                   help="boxes .json or mask .png layout file")
    p.add_argument("--caption", type=str, default="")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a trained pipeline on a split")
    common(p)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--denoiser", type=Path, required=True)
    p.add_argument("--split", type=str, default="val")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="run an ablation sweep")
    common(p)
    p.add_argument("--kind", choices=["lp", "caption", "shared"], required=True)
    p.add_argument("--seeds", type=str, default=None, help="comma-separated seed list")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, LayoutError, CaptionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RgbxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
