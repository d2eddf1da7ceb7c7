"""Scene generator: geometry oracles, determinism, caption consistency."""

import numpy as np
import pytest

from rgbx.errors import DataError, PlacementError
from rgbx.scenes import (
    SceneObject,
    SceneSpec,
    generate_scene,
    make_records,
    quantize_unit,
    sample_scene_spec,
    scene_caption,
    validate_record,
)


def centered_circle_spec(size="medium", canvas=64, lighting="daytime"):
    return SceneSpec(
        seed=0, canvas=canvas,
        objects=[SceneObject("circle", "red", size, 0.5, 0.5, 1, "high")],
        lighting=lighting,
    )


class TestGenerateScene:
    def test_empty_scene(self):
        rec = generate_scene(SceneSpec(seed=1, canvas=32, objects=[], lighting="daytime"))
        assert rec.caption == "A daytime scene with 0 objects."
        assert len(rec.layouts["boxes"].boxes) == 0
        assert rec.layouts["semantic_mask"].mask.max() == 0
        # background only: depth at floor, saliency empty
        assert np.all(rec.bundle.get("depth") == quantize_unit(np.full((1, 32, 32), -1.0)))

    def test_centered_circle_geometry_oracle(self):
        canvas = 64
        rec = generate_scene(centered_circle_spec(canvas=canvas), modalities=("rgb", "depth"))
        (x0, y0, x1, y1) = rec.layouts["boxes"].boxes[0]
        r = 0.14  # medium half-extent
        assert abs(x0 - (0.5 - r)) < 1 / canvas
        assert abs(x1 - (0.5 + r)) < 1 / canvas
        assert abs(y0 - (0.5 - r)) < 1 / canvas
        assert abs(y1 - (0.5 + r)) < 1 / canvas
        mask_px = int((rec.layouts["semantic_mask"].mask == 1).sum())
        expected = np.pi * (r * canvas) ** 2
        assert abs(mask_px - expected) / expected < 0.05

    def test_same_seed_bit_identical(self):
        spec = sample_scene_spec(1234, canvas=32)
        a = generate_scene(spec, modalities=("rgb", "depth", "thermal"))
        b = generate_scene(sample_scene_spec(1234, canvas=32),
                           modalities=("rgb", "depth", "thermal"))
        for (ta, ia), (tb, ib) in zip(a.bundle.images, b.bundle.images):
            assert ta == tb and np.array_equal(ia, ib)
        assert a.caption == b.caption
        assert np.array_equal(a.layouts["boxes"].boxes, b.layouts["boxes"].boxes)

    def test_lighting_flips_brightness(self):
        day = generate_scene(centered_circle_spec(lighting="daytime"))
        night = generate_scene(
            SceneSpec(seed=0, canvas=64, objects=centered_circle_spec().objects,
                      lighting="nighttime")
        )
        assert day.bundle.get("rgb").mean() > night.bundle.get("rgb").mean() + 0.5

    def test_depth_rank_ordering(self):
        spec = SceneSpec(
            seed=2, canvas=64,
            objects=[
                SceneObject("circle", "red", "small", 0.25, 0.25, 1, "low"),
                SceneObject("rectangle", "blue", "small", 0.75, 0.75, 2, "low"),
            ],
        )
        rec = generate_scene(spec, modalities=("rgb", "depth"))
        depth = rec.bundle.get("depth")[0]
        near = depth[16, 16]
        far = depth[48, 48]
        assert near > far > -1.0

    def test_thermal_nighttime_background_cooler(self):
        day = generate_scene(centered_circle_spec(), modalities=("rgb", "thermal"))
        night = generate_scene(
            SceneSpec(seed=0, canvas=64, objects=centered_circle_spec().objects,
                      lighting="nighttime"),
            modalities=("rgb", "thermal"),
        )
        assert day.bundle.get("thermal")[0, 0, 0] > night.bundle.get("thermal")[0, 0, 0]

    def test_edge_map_marks_object_boundary(self):
        rec = generate_scene(centered_circle_spec(), modalities=("rgb", "edge"))
        edge = rec.bundle.get("edge")[0]
        mask = rec.layouts["semantic_mask"].mask
        boundary = (mask == 1) & (np.roll(mask, 1, 0) == 0)
        assert edge[boundary].mean() > 0.5
        assert edge[2:8, 2:8].max() == -1.0  # flat background corner

    def test_salient_is_silhouette_union(self):
        rec = generate_scene(centered_circle_spec(), modalities=("rgb", "salient"))
        sal = rec.bundle.get("salient")[0]
        mask = rec.layouts["semantic_mask"].mask
        assert np.array_equal(sal > 0, mask > 0)

    def test_fully_occluded_object_rejected(self):
        spec = SceneSpec(
            seed=3, canvas=32,
            objects=[
                SceneObject("rectangle", "red", "large", 0.5, 0.5, 1, "low"),
                SceneObject("circle", "blue", "small", 0.5, 0.5, 2, "low"),
            ],
        )
        with pytest.raises(PlacementError):
            generate_scene(spec)

    def test_unique_depth_ranks_enforced(self):
        spec = SceneSpec(
            seed=4, canvas=32,
            objects=[
                SceneObject("circle", "red", "small", 0.3, 0.3, 1, "low"),
                SceneObject("circle", "blue", "small", 0.7, 0.7, 1, "low"),
            ],
        )
        with pytest.raises(DataError):
            generate_scene(spec)

    def test_object_outside_canvas_rejected(self):
        spec = SceneSpec(
            seed=5, canvas=32,
            objects=[SceneObject("circle", "red", "large", 0.02, 0.5, 1, "low")],
        )
        with pytest.raises(DataError):
            generate_scene(spec)


class TestCaptions:
    def test_template_structure(self):
        spec = centered_circle_spec()
        assert scene_caption(spec) == (
            "A daytime scene with 1 objects: a medium red circle at the center."
        )

    def test_caption_scene_consistency_random(self):
        for rec in make_records(11, 12, canvas=32, modalities=("rgb", "depth")):
            validate_record(rec)  # raises on inconsistency

    def test_caption_mentions_lighting(self):
        for seed in range(8):
            spec = sample_scene_spec(seed, canvas=32)
            assert spec.lighting in scene_caption(spec)


class TestPlacementSampler:
    def test_deterministic(self):
        a = sample_scene_spec(42, canvas=32)
        b = sample_scene_spec(42, canvas=32)
        assert a == b

    def test_boxes_disjoint(self):
        for seed in range(20):
            spec = sample_scene_spec(seed, canvas=64, n_objects=(2, 3))
            boxes = [o.box() for o in spec.objects]
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    a, b = boxes[i], boxes[j]
                    assert a[2] <= b[0] or a[0] >= b[2] or a[3] <= b[1] or a[1] >= b[3]

    def test_impossible_configuration_raises(self):
        with pytest.raises(PlacementError):
            sample_scene_spec(0, canvas=32, n_objects=(12, 12), max_tries=5,
                              scene_attempts=2)


class TestQuantization:
    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (3, 8, 8)).astype(np.float32)
        q = quantize_unit(x)
        assert np.array_equal(q, quantize_unit(q))

    def test_grid_resolution(self):
        x = np.array([[-1.0, 1.0, 0.0]], dtype=np.float32)
        q = quantize_unit(x)
        assert np.abs(q - x).max() <= 1.0 / 255.0 + 1e-7


class TestDerivedLayouts:
    def test_salient_layout_from_mask_when_missing(self):
        rec = generate_scene(centered_circle_spec(), modalities=("rgb", "depth"))
        lay = rec.layout("salient_map")
        assert lay.variant == "salient_map"
        assert np.array_equal(lay.mask > 0, rec.layouts["semantic_mask"].mask > 0)

    def test_edge_layout_derived_from_rgb(self):
        rec = generate_scene(centered_circle_spec(), modalities=("rgb", "depth"))
        lay = rec.layout("edge_map")
        assert lay.variant == "edge_map"
        assert set(np.unique(lay.mask)) <= {-1.0, 1.0}
