import os

import numpy as np
import pytest

from attn_inpaint import imageio as io
from attn_inpaint.config import RunConfig


def test_config_file_and_overrides():
    rc = RunConfig.from_text("[train]\nsteps = 7\nlr = 0.001\n[arch]\nuse_attention = false\n")
    rc.apply(["attention.prop_radius=1", "train.steps=9"])
    cfg, spec = rc.build()
    assert cfg.steps == 9 and cfg.lr == 0.001
    assert spec.use_attention is False and spec.attention.prop_radius == 1
    assert spec.attention.downscale_rate == 2


@pytest.mark.parametrize("text", ["[train]\nbogus = 1\n", "[nope]\nx = 1\n"])
def test_unknown_keys_rejected(text):
    with pytest.raises(KeyError):
        RunConfig.from_text(text)


def test_bad_override_syntax():
    with pytest.raises(ValueError):
        RunConfig().apply(["train.steps"])
    with pytest.raises(ValueError):
        RunConfig().apply(["arch.use_attention=maybe"])


def test_echo_round_trips():
    rc = RunConfig().apply(["train.seed=5", "attention.softmax_scale=3.5"])
    again = RunConfig.from_text(rc.echo())
    assert again.build() == rc.build()


def test_png_round_trip_lossless(tmp_path, rng):
    img = rng.integers(0, 256, (9, 7, 3), dtype=np.uint8)
    io.write_rgb(tmp_path / "a.png", img)
    np.testing.assert_array_equal(io.read_rgb(tmp_path / "a.png"), img)
    m = (rng.uniform(size=(9, 7)) > 0.5).astype(np.float32)
    io.write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(io.read_mask(tmp_path / "m.png"), m)


def test_gendata_is_deterministic_and_varied(tmp_path):
    a = io.gendata(tmp_path / "a", 16, 64, 3)
    b = io.gendata(tmp_path / "b", 16, 64, 3)
    assert len(a) == 16
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()
    levels = np.unique(np.concatenate([io.read_rgb(p).ravel() for p in a]))
    assert len(levels) >= 200


def test_gendata_rejects_tiny_images(tmp_path):
    with pytest.raises(ValueError):
        io.gendata(tmp_path, 2, 16, 0)


def test_load_dir_errors(tmp_path):
    with pytest.raises(ValueError):
        io.load_dir(tmp_path)
    io.write_rgb(tmp_path / "a.png", np.zeros((32, 32, 3), np.uint8))
    io.write_rgb(tmp_path / "b.png", np.zeros((40, 32, 3), np.uint8))
    with pytest.raises(ValueError):
        io.load_dir(tmp_path)
    assert os.path.exists(tmp_path / "a.png")
