"""Dataset directory format: per-record files plus a manifest.

Layout on disk:

    root/
      manifest.json             version, config hash, split index
      <split>/
        <id>_rgb.png            8-bit RGB
        <id>_<modality>.png     8-bit grayscale per auxiliary modality
        <id>_boxes.json         [{"label", "x0", "y0", "x1", "y1"}, ...]
        <id>_mask.png           semantic class ids
        <id>_caption.txt        templated caption

The manifest records each record's id and generator seed. Round trips are
lossless: images live on the 8-bit grid, boxes round-trip through JSON
floats exactly, captions and seeds verbatim.

External data can be dropped into the same shape: put `<id>_rgb.png` and
`<id>_<modality>.png` pairs in a split directory and call
``import_external``; boxes/mask/caption files are optional there.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from rgbx import pngio
from rgbx.conditioning import LayoutCondition
from rgbx.errors import DataError
from rgbx.scenes import CLASS_NAMES, DatasetRecord
from rgbx.vae import MODALITY_CHANNELS, ModalBundle

FORMAT_VERSION = 1


def record_id(i: int) -> str:
    return f"{i:05d}"


def _boxes_payload(layout: LayoutCondition) -> list[dict]:
    return [
        {"label": lab, "x0": float(b[0]), "y0": float(b[1]), "x1": float(b[2]), "y1": float(b[3])}
        for b, lab in zip(layout.boxes, layout.labels)
    ]


def _boxes_from_payload(payload: list[dict]) -> LayoutCondition:
    boxes = np.asarray(
        [[r["x0"], r["y0"], r["x1"], r["y1"]] for r in payload], dtype=np.float64
    ).reshape(-1, 4)
    return LayoutCondition(variant="boxes", boxes=boxes, labels=[r["label"] for r in payload])


def write_split(root: Path, split: str, records: list[DatasetRecord]) -> list[dict]:
    split_dir = Path(root) / split
    split_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for i, rec in enumerate(records):
        rid = record_id(i)
        for tag, img in rec.bundle.images:
            pngio.save_image(split_dir / f"{rid}_{tag}.png", img)
        with open(split_dir / f"{rid}_boxes.json", "w") as f:
            json.dump(_boxes_payload(rec.layouts["boxes"]), f, indent=0, sort_keys=True)
        pngio.save_mask(split_dir / f"{rid}_mask.png", rec.layouts["semantic_mask"].mask)
        with open(split_dir / f"{rid}_caption.txt", "w") as f:
            f.write(rec.caption)
        index.append({"id": rid, "seed": int(rec.seed)})
    return index


def write_dataset(root, splits: dict[str, list[DatasetRecord]], canvas: int,
                  modalities: tuple, config_hash: str = "") -> str:
    """Write all splits plus the manifest; returns the manifest hash."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "canvas": int(canvas),
        "modalities": list(modalities),
        "class_names": list(CLASS_NAMES),
        "splits": {},
    }
    for split, records in splits.items():
        manifest["splits"][split] = write_split(root, split, records)
    payload = json.dumps(manifest, indent=1, sort_keys=True)
    with open(root / "manifest.json", "w") as f:
        f.write(payload)
    return hashlib.sha256(payload.encode()).hexdigest()


def manifest_hash(root) -> str:
    with open(Path(root) / "manifest.json") as f:
        return hashlib.sha256(f.read().encode()).hexdigest()


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"dataset format version {manifest.get('format_version')} "
            f"!= supported {FORMAT_VERSION}"
        )
    return manifest


def read_dataset(root, split: str) -> list[DatasetRecord]:
    """Load one split; raises DataError naming the first broken record."""
    root = Path(root)
    manifest = read_manifest(root)
    if split not in manifest["splits"]:
        raise DataError(f"split {split!r} not in manifest ({list(manifest['splits'])})")
    modalities = manifest["modalities"]
    split_dir = root / split
    records = []
    for entry in manifest["splits"][split]:
        rid = entry["id"]
        images = []
        for tag in modalities:
            path = split_dir / f"{rid}_{tag}.png"
            if not path.exists():
                raise DataError(f"record {rid}: missing modality file {path.name}")
            images.append((tag, pngio.load_image(path, MODALITY_CHANNELS[tag])))
        boxes_path = split_dir / f"{rid}_boxes.json"
        if not boxes_path.exists():
            raise DataError(f"record {rid}: missing layout file {boxes_path.name}")
        with open(boxes_path) as f:
            boxes = _boxes_from_payload(json.load(f))
        mask_path = split_dir / f"{rid}_mask.png"
        if not mask_path.exists():
            raise DataError(f"record {rid}: missing layout file {mask_path.name}")
        mask = pngio.load_mask(mask_path)
        cap_path = split_dir / f"{rid}_caption.txt"
        if not cap_path.exists():
            raise DataError(f"record {rid}: missing caption file {cap_path.name}")
        caption = cap_path.read_text()
        records.append(
            DatasetRecord(
                bundle=ModalBundle(images=images).validate(strict=len(modalities) >= 2),
                layouts={
                    "boxes": boxes,
                    "semantic_mask": LayoutCondition(variant="semantic_mask", mask=mask),
                },
                caption=caption,
                seed=int(entry["seed"]),
            )
        )
    return records


def import_external(root, split: str, modalities: tuple) -> list[DatasetRecord]:
    """Adapter for user-dropped image pairs following the file convention.

    Scans `<id>_rgb.png` files, requires one `<id>_<modality>.png` per
    auxiliary modality, and validates channel counts. Boxes, mask, and
    caption files are optional; absent layouts come back empty.
    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DataError(f"no split directory {split_dir}")
    ids = sorted(p.name[: -len("_rgb.png")] for p in split_dir.glob("*_rgb.png"))
    if not ids:
        raise DataError(f"no *_rgb.png files in {split_dir}")
    records = []
    for rid in ids:
        images = []
        for tag in modalities:
            path = split_dir / f"{rid}_{tag}.png"
            if not path.exists():
                raise DataError(f"record {rid}: missing modality file {path.name}")
            images.append((tag, pngio.load_image(path, MODALITY_CHANNELS[tag])))
        bundle = ModalBundle(images=images).validate(strict=len(modalities) >= 2)
        layouts = {}
        boxes_path = split_dir / f"{rid}_boxes.json"
        if boxes_path.exists():
            with open(boxes_path) as f:
                layouts["boxes"] = _boxes_from_payload(json.load(f))
        mask_path = split_dir / f"{rid}_mask.png"
        if mask_path.exists():
            layouts["semantic_mask"] = LayoutCondition(
                variant="semantic_mask", mask=pngio.load_mask(mask_path)
            )
        cap_path = split_dir / f"{rid}_caption.txt"
        caption = cap_path.read_text() if cap_path.exists() else ""
        records.append(DatasetRecord(bundle=bundle, layouts=layouts, caption=caption, seed=-1))
    return records


def records_equal(a: DatasetRecord, b: DatasetRecord) -> bool:
    """Bit-exact record equality (images, layouts, caption, seed)."""
    if a.caption != b.caption or a.seed != b.seed:
        return False
    if a.bundle.tags != b.bundle.tags:
        return False
    for (_, ia), (_, ib) in zip(a.bundle.images, b.bundle.images):
        if not np.array_equal(ia, ib):
            return False
    la, lb = a.layouts["boxes"], b.layouts["boxes"]
    if la.labels != lb.labels or not np.array_equal(la.boxes, lb.boxes):
        return False
    return np.array_equal(a.layouts["semantic_mask"].mask, b.layouts["semantic_mask"].mask)
