import numpy as np
import pytest

from attn_inpaint import masking as K
from attn_inpaint.tensor import Tensor


def test_complete_of_corrupt_is_identity(rng):
    for _ in range(50):
        x = rng.uniform(-1, 1, (2, 3, 8, 8)).astype(np.float32)
        m = (rng.uniform(size=(2, 1, 8, 8)) > 0.5).astype(np.float32)
        assert np.array_equal(K.complete(K.corrupt(x, m), x, m), x)


def test_complete_keeps_known_and_takes_hole_from_prediction():
    z = np.full((1, 1, 2, 2), 3.0)
    m = np.array([[[[1, 0], [0, 1]]]], dtype=float)
    out = K.complete(z * m, np.full_like(z, 7.0), m)
    np.testing.assert_array_equal(out[0, 0], [[3, 7], [7, 3]])


def test_complete_on_tensors_matches_numpy(rng):
    z, p = rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(1, 3, 4, 4))
    m = (rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(float)
    np.testing.assert_allclose(K.complete(Tensor(z), Tensor(p), m).data, K.complete(z, p, m))


def test_sample_mask_pair_bounds(rng):
    for _ in range(200):
        p = K.sample_mask_pair(rng, 40, 30, 16, 12)
        assert p.outer_bbox.contains(p.inner_bbox)
        assert 12 <= p.inner_bbox.height <= 16 and 9 <= p.inner_bbox.width <= 12
        assert p.outer_bbox.bottom <= 40 and p.outer_bbox.right <= 30


def test_sample_mask_pair_rejects_oversize(rng):
    with pytest.raises(ValueError):
        K.sample_mask_pair(rng, 10, 10, 11, 4)


def test_masks_are_known_outside_box(rng):
    p = K.sample_mask_pair(rng, 16, 16, 8, 8)
    inner = p.inner
    assert inner.sum() == 256 - p.inner_bbox.height * p.inner_bbox.width
    assert inner[p.inner_bbox.slices()].sum() == 0


def test_rng_state_round_trip(rng):
    rng.normal(size=3)
    arr = K.rng_state_to_array(rng)
    clone = K.rng_from_array(arr)
    np.testing.assert_array_equal(rng.integers(0, 1 << 30, 20), clone.integers(0, 1 << 30, 20))
    with pytest.raises(ValueError):
        K.rng_from_array(np.zeros(3))


def test_crop_outer_batches(rng):
    pairs = [K.sample_mask_pair(rng, 16, 16, 8, 8) for _ in range(3)]
    img = rng.normal(size=(3, 3, 16, 16))
    crops = K.crop_outer(img, pairs)
    assert crops.shape == (3, 3, 8, 8)
    t, l = pairs[1].outer_bbox.top, pairs[1].outer_bbox.left
    np.testing.assert_array_equal(crops[1], img[1, :, t:t + 8, l:l + 8])
    assert K.crop_outer(Tensor(img), pairs).shape == (3, 3, 8, 8)


def test_unit_range_round_trip():
    u8 = np.arange(256, dtype=np.uint8)
    x = K.to_unit_range(u8)
    assert x.min() == -1.0 and x.max() == 1.0
    np.testing.assert_array_equal(K.to_uint8(x), u8)
