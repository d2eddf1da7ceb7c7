"""Procedural paired-modality scenes with layouts and templated captions.

Each scene is a set of flat-shaded shapes on a lighting-dependent
background, rendered consistently into RGB plus aligned auxiliary maps
(depth from depth ranks, thermal from emissivity classes, edges from RGB
gradients, saliency from silhouettes). Boxes and the semantic mask come
from the exact analytic geometry, and the caption is generated from one
deterministic template so caption and scene always agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rgbx.conditioning import LayoutCondition
from rgbx.errors import DataError, PlacementError
from rgbx.vae import ModalBundle

SHAPES = ("circle", "rectangle", "triangle")
CLASS_NAMES = ("background", "circle", "rectangle", "triangle")
N_CLASSES = len(CLASS_NAMES)

COLORS = {
    "red": (1.0, -0.8, -0.8),
    "green": (-0.8, 1.0, -0.8),
    "blue": (-0.8, -0.8, 1.0),
    "yellow": (1.0, 1.0, -0.8),
    "cyan": (-0.8, 1.0, 1.0),
    "magenta": (1.0, -0.8, 1.0),
    "orange": (1.0, 0.2, -0.8),
    "white": (1.0, 1.0, 1.0),
}

SIZES = {"small": 0.10, "medium": 0.14, "large": 0.19}  # half-extent, canvas fraction

EMISSIVITY = {"low": -0.1, "medium": 0.4, "high": 0.9}

LIGHTINGS = ("daytime", "nighttime")

EDGE_THRESHOLD = 0.5


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    cx: float          # center, canvas fraction in [0, 1]
    cy: float
    depth_rank: int    # 1 = nearest
    emissivity: str = "medium"

    def half_extents(self) -> tuple[float, float]:
        r = SIZES[self.size]
        if self.shape == "rectangle":
            return r * 1.2, r * 0.8
        return r, r

    def box(self) -> tuple[float, float, float, float]:
        hx, hy = self.half_extents()
        return (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)


@dataclass
class SceneSpec:
    seed: int
    canvas: int
    objects: list[SceneObject] = field(default_factory=list)
    background: str = "plain"
    lighting: str = "daytime"

    def validate(self) -> "SceneSpec":
        if self.lighting not in LIGHTINGS:
            raise DataError(f"unknown lighting {self.lighting!r}")
        ranks = [o.depth_rank for o in self.objects]
        if len(set(ranks)) != len(ranks):
            raise DataError("depth ranks must be unique")
        for o in self.objects:
            if o.shape not in SHAPES:
                raise DataError(f"unknown shape {o.shape!r}")
            if o.color not in COLORS:
                raise DataError(f"unknown color {o.color!r}")
            if o.size not in SIZES:
                raise DataError(f"unknown size {o.size!r}")
            x0, y0, x1, y1 = o.box()
            if x0 < 0.0 or y0 < 0.0 or x1 > 1.0 or y1 > 1.0:
                raise DataError(f"object {o} extends past the canvas")
        return self


@dataclass
class DatasetRecord:
    bundle: ModalBundle
    layouts: dict[str, LayoutCondition]
    caption: str
    seed: int

    def layout(self, kind: str) -> LayoutCondition:
        """Layout of the requested kind, deriving dense variants on demand."""
        if kind in self.layouts:
            return self.layouts[kind]
        if kind == "salient_map":
            try:
                sal = self.bundle.get("salient")[0]
            except KeyError:
                mask = self.layouts["semantic_mask"].mask
                sal = np.where(mask > 0, 1.0, -1.0).astype(np.float32)
            return LayoutCondition(variant="salient_map", mask=sal)
        if kind == "edge_map":
            try:
                edge = self.bundle.get("edge")[0]
            except KeyError:
                edge = edge_map_from_rgb(self.bundle.get("rgb"))
            return LayoutCondition(variant="edge_map", mask=edge)
        raise DataError(f"record has no {kind!r} layout")


def _coverage(obj: SceneObject, canvas: int) -> np.ndarray:
    """Boolean pixel-coverage mask evaluated at pixel centers."""
    coords = (np.arange(canvas) + 0.5) / canvas
    xs = coords[None, :]
    ys = coords[:, None]
    hx, hy = obj.half_extents()
    if obj.shape == "circle":
        return (xs - obj.cx) ** 2 + (ys - obj.cy) ** 2 <= hx**2
    if obj.shape == "rectangle":
        return (np.abs(xs - obj.cx) <= hx) & (np.abs(ys - obj.cy) <= hy)
    # isoceles triangle: apex up, base at the bottom of the box
    top = obj.cy - hy
    bot = obj.cy + hy
    inside_y = (ys >= top) & (ys <= bot)
    frac = np.clip((ys - top) / (bot - top), 0.0, 1.0)
    return inside_y & (np.abs(xs - obj.cx) <= frac * hx)


def quantize_unit(img: np.ndarray) -> np.ndarray:
    """Snap [-1, 1] floats to the 8-bit storage grid used on disk."""
    q = np.round((np.clip(img, -1.0, 1.0) + 1.0) * 0.5 * 255.0)
    return (q.astype(np.float32) / 255.0) * 2.0 - 1.0


def edge_map_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """Thresholded Sobel gradient magnitude of the grayscale image."""
    gray = rgb.mean(axis=0)
    pad = np.pad(gray, 1, mode="edge")
    gx = (
        (pad[:-2, 2:] + 2 * pad[1:-1, 2:] + pad[2:, 2:])
        - (pad[:-2, :-2] + 2 * pad[1:-1, :-2] + pad[2:, :-2])
    ) / 4.0
    gy = (
        (pad[2:, :-2] + 2 * pad[2:, 1:-1] + pad[2:, 2:])
        - (pad[:-2, :-2] + 2 * pad[:-2, 1:-1] + pad[:-2, 2:])
    ) / 4.0
    mag = np.sqrt(gx**2 + gy**2)
    return np.where(mag > EDGE_THRESHOLD, 1.0, -1.0).astype(np.float32)


def region_name(cx: float, cy: float) -> str:
    col = 0 if cx < 1 / 3 else (1 if cx < 2 / 3 else 2)
    row = 0 if cy < 1 / 3 else (1 if cy < 2 / 3 else 2)
    vert = ("top", "", "bottom")[row]
    horiz = ("left", "", "right")[col]
    if not vert and not horiz:
        return "center"
    if not vert:
        return horiz
    if not horiz:
        return vert
    return f"{vert} {horiz}"


def scene_caption(spec: SceneSpec) -> str:
    n = len(spec.objects)
    head = f"A {spec.lighting} scene with {n} objects"
    if n == 0:
        return head + "."
    parts = [
        f"a {o.size} {o.color} {o.shape} at the {region_name(o.cx, o.cy)}"
        for o in spec.objects
    ]
    return head + ": " + ", ".join(parts) + "."


def generate_scene(spec: SceneSpec, modalities: tuple = ("rgb", "depth")) -> DatasetRecord:
    """Render a scene spec into a pixel-aligned record.

    Raises PlacementError when an object ends up fully occluded, since the
    caption and box list would then disagree with the rendered images.
    """
    spec.validate()
    s = spec.canvas
    n = len(spec.objects)
    order = sorted(spec.objects, key=lambda o: -o.depth_rank)  # paint far to near
    covers = {id(o): _coverage(o, s) for o in spec.objects}

    night = spec.lighting == "nighttime"
    grad = np.linspace(0.0, 1.0, s, dtype=np.float32)[:, None]
    if night:
        rgb_bg = -0.75 + 0.15 * grad
    else:
        rgb_bg = 0.55 + 0.20 * grad
    rgb = np.broadcast_to(rgb_bg, (3, s, s)).astype(np.float32).copy()

    depth = np.full((1, s, s), -1.0, dtype=np.float32)
    thermal = np.full((1, s, s), -0.85 if night else -0.5, dtype=np.float32)
    salient = np.full((1, s, s), -1.0, dtype=np.float32)
    mask = np.zeros((s, s), dtype=np.int64)

    owner = np.full((s, s), -1, dtype=np.int64)
    for o in order:
        cov = covers[id(o)]
        color = np.asarray(COLORS[o.color], dtype=np.float32)
        if night:
            color = color * 0.4 - 0.3
        for c in range(3):
            rgb[c][cov] = color[c]
        if n > 1:
            dval = 0.9 - 1.2 * (o.depth_rank - 1) / (n - 1)
        else:
            dval = 0.9
        depth[0][cov] = dval
        thermal[0][cov] = EMISSIVITY[o.emissivity]
        salient[0][cov] = 1.0
        mask[cov] = 1 + SHAPES.index(o.shape)
        owner[cov] = spec.objects.index(o)

    for i, o in enumerate(spec.objects):
        if covers[id(o)].sum() == 0 or not np.any(owner == i):
            raise PlacementError(f"object {i} ({o.shape}) has no visible pixels")

    edge = edge_map_from_rgb(rgb)[None]

    by_tag = {
        "rgb": rgb,
        "depth": depth,
        "thermal": thermal,
        "edge": edge,
        "salient": salient,
    }
    images = [(tag, quantize_unit(by_tag[tag])) for tag in modalities]

    boxes = np.asarray([o.box() for o in spec.objects], dtype=np.float64).reshape(-1, 4)
    labels = [o.shape for o in spec.objects]
    layouts = {
        "boxes": LayoutCondition(variant="boxes", boxes=boxes, labels=labels),
        "semantic_mask": LayoutCondition(variant="semantic_mask", mask=mask),
    }
    return DatasetRecord(
        bundle=ModalBundle(images=images).validate(strict=len(modalities) >= 2),
        layouts=layouts,
        caption=scene_caption(spec),
        seed=spec.seed,
    )


def sample_scene_spec(seed: int, canvas: int = 64, n_objects: tuple = (1, 3),
                      max_tries: int = 100, scene_attempts: int = 25) -> SceneSpec:
    """Random scene with non-overlapping object boxes; deterministic in seed.

    Attributes are drawn up front; placement tries larger objects first and
    resamples the whole arrangement a few times before giving up.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_objects[0], n_objects[1] + 1))
    lighting = LIGHTINGS[int(rng.integers(0, 2))]
    color_names = list(COLORS)
    size_names = list(SIZES)
    emis_names = list(EMISSIVITY)
    attrs = []
    ranks = rng.permutation(n) + 1
    for i in range(n):
        attrs.append(
            (
                SHAPES[int(rng.integers(0, len(SHAPES)))],
                color_names[int(rng.integers(0, len(color_names)))],
                size_names[int(rng.integers(0, len(size_names)))],
                emis_names[int(rng.integers(0, len(emis_names)))],
            )
        )
    order = sorted(range(n), key=lambda i: -SIZES[attrs[i][2]])  # big first
    for _ in range(scene_attempts):
        placed: dict[int, tuple] = {}
        centers: dict[int, tuple] = {}
        ok = True
        for i in order:
            shape, _, size, _ = attrs[i]
            hx = SIZES[size] * (1.2 if shape == "rectangle" else 1.0)
            hy = SIZES[size] * (0.8 if shape == "rectangle" else 1.0)
            found = False
            for _ in range(max_tries):
                cx = float(rng.uniform(hx + 0.02, 1.0 - hx - 0.02))
                cy = float(rng.uniform(hy + 0.02, 1.0 - hy - 0.02))
                cand = (cx - hx, cy - hy, cx + hx, cy + hy)
                if all(
                    cand[2] <= b[0] or cand[0] >= b[2] or cand[3] <= b[1] or cand[1] >= b[3]
                    for b in placed.values()
                ):
                    placed[i] = cand
                    centers[i] = (cx, cy)
                    found = True
                    break
            if not found:
                ok = False
                break
        if ok:
            objects = [
                SceneObject(
                    attrs[i][0], attrs[i][1], attrs[i][2],
                    centers[i][0], centers[i][1], int(ranks[i]), attrs[i][3],
                )
                for i in range(n)
            ]
            return SceneSpec(seed=seed, canvas=canvas, objects=objects, lighting=lighting)
    raise PlacementError(
        f"could not place {n} objects after {scene_attempts} arrangements"
    )


def validate_record(record: DatasetRecord, tol_px: int = 1):
    """Check layout-image and caption-scene consistency; raises DataError."""
    mask = record.layouts["semantic_mask"].mask
    s = mask.shape[0]
    boxes = record.layouts["boxes"].boxes
    labels = record.layouts["boxes"].labels
    fg = mask > 0
    if len(boxes) == 0:
        if fg.any():
            raise DataError("empty box list but mask has foreground")
    ys, xs = np.nonzero(fg)
    covered = np.zeros_like(fg)
    for (x0, y0, x1, y1), label in zip(boxes, labels):
        px0, py0 = int(np.floor(x0 * s)) - tol_px, int(np.floor(y0 * s)) - tol_px
        px1, py1 = int(np.ceil(x1 * s)) + tol_px, int(np.ceil(y1 * s)) + tol_px
        covered[max(py0, 0) : py1, max(px0, 0) : px1] = True
        sub = mask[max(py0, 0) : py1, max(px0, 0) : px1]
        if not np.any(sub == 1 + SHAPES.index(label)):
            raise DataError(f"box labeled {label!r} covers no pixels of that class")
    if np.any(fg & ~covered):
        raise DataError("mask foreground extends outside every box")
    caption = record.caption.lower()
    for label in labels:
        if label not in caption:
            raise DataError(f"caption omits object {label!r}")
    n_claimed = int(caption.split("scene with ")[1].split(" ")[0])
    if n_claimed != len(labels):
        raise DataError(f"caption claims {n_claimed} objects, layout has {len(labels)}")
    return record


def make_records(root_seed: int, count: int, canvas: int = 64,
                 modalities: tuple = ("rgb", "depth"), n_objects: tuple = (1, 3)):
    """Deterministic record stream; record i gets seed root*1000003 + i."""
    for i in range(count):
        seed = root_seed * 1_000_003 + i
        spec = sample_scene_spec(seed, canvas=canvas, n_objects=n_objects)
        yield validate_record(generate_scene(spec, modalities=modalities))
