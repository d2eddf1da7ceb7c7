"""Checkpoint archive: bit-exact round trips and typed failure modes."""

import numpy as np
import pytest

from rgbx.checkpoint import Checkpoint, check_geometry, load_checkpoint, save_checkpoint
from rgbx.errors import CheckpointError


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "w1": rng.standard_normal((3, 4)).astype(np.float32),
        "w2": rng.standard_normal((2, 2, 2)).astype(np.float64),
        "scalar": np.asarray(0.25, dtype=np.float32),
        "ints": np.arange(7, dtype=np.int64),
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, "dpvae", {"z_channels": 4}, arrays, meta={"step": 3})
    ck = load_checkpoint(path)
    assert ck.kind == "dpvae"
    assert ck.config == {"z_channels": 4}
    assert ck.meta == {"step": 3}
    assert set(ck.arrays) == set(arrays)
    for k, v in arrays.items():
        assert ck.arrays[k].dtype == v.dtype
        assert ck.arrays[k].shape == v.shape
        assert np.array_equal(ck.arrays[k], v, equal_nan=True)


def test_deterministic_bytes(tmp_path):
    arrays = {"a": np.ones((4, 4), np.float32), "b": np.zeros(3, np.float64)}
    save_checkpoint(tmp_path / "x1.ckpt", "unet", {"k": 1}, arrays, meta={})
    save_checkpoint(tmp_path / "x2.ckpt", "unet", {"k": 1}, arrays, meta={})
    assert (tmp_path / "x1.ckpt").read_bytes() == (tmp_path / "x2.ckpt").read_bytes()


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="exist"):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_bad_magic(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_kind_mismatch(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, "dpvae", {}, {"a": np.zeros(2)})
    with pytest.raises(CheckpointError, match="kind"):
        load_checkpoint(p, expect_kind="denoiser")


def test_version_mismatch(tmp_path):
    import rgbx.checkpoint as cp

    p = tmp_path / "m.ckpt"
    save_checkpoint(p, "dpvae", {}, {"a": np.zeros(2)})
    orig = cp.FORMAT_VERSION
    try:
        cp.FORMAT_VERSION = 2
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)
    finally:
        cp.FORMAT_VERSION = orig


def test_truncated_body(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, "dpvae", {}, {"a": np.arange(100, dtype=np.float64)})
    raw = p.read_bytes()
    p.write_bytes(raw[:-40])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)


def test_geometry_check():
    config = {"z_channels": 4, "widths": [8, 16], "image_size": 32}
    check_geometry(config, {"z_channels": 4, "widths": (8, 16)})
    with pytest.raises(CheckpointError, match="z_channels"):
        check_geometry(config, {"z_channels": 2})
    with pytest.raises(CheckpointError, match="widths"):
        check_geometry(config, {"widths": (8, 32)})


def test_model_state_round_trip(tmp_path):
    from rgbx.unet import DenoiserUNet, UnetConfig

    cfg = UnetConfig(z_channels=2, widths=(8,), n_heads=2, d_ground=8, d_text=8)
    model = DenoiserUNet(cfg, np.random.default_rng(0))
    state = model.state_dict()
    save_checkpoint(tmp_path / "u.ckpt", "denoiser", {}, state)
    loaded = load_checkpoint(tmp_path / "u.ckpt").arrays
    clone = DenoiserUNet(cfg, np.random.default_rng(99))
    clone.load_state_dict(loaded)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), clone.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
