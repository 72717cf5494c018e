"""Rectangular hole sampling and image composition.

Mask convention: 1 marks a known pixel, 0 a missing one.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, concat

# Rng algorithm: numpy PCG64. The serialised state is 10 float64 values, each
# an exactly representable 32-bit word.
_RNG_WORDS = 10


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _split128(v):
    return [(v >> (32 * i)) & 0xFFFFFFFF for i in range(4)]


def _join128(words):
    return sum(int(w) << (32 * i) for i, w in enumerate(words))


def rng_state_to_array(rng):
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 state can be serialised")
    words = _split128(st["state"]["state"]) + _split128(st["state"]["inc"])
    words += [st["has_uint32"], st["uinteger"]]
    return np.array(words, dtype=np.float64)


def rng_from_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != (_RNG_WORDS,):
        raise ValueError("malformed rng state")
    words = [int(v) for v in arr]
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": _join128(words[:4]), "inc": _join128(words[4:8])},
        "has_uint32": words[8],
        "uinteger": words[9],
    }
    return rng


@dataclass(frozen=True)
class BBox:
    top: int
    left: int
    height: int
    width: int

    @property
    def bottom(self):
        return self.top + self.height

    @property
    def right(self):
        return self.left + self.width

    def contains(self, other):
        return (self.top <= other.top and self.left <= other.left
                and other.bottom <= self.bottom and other.right <= self.right)

    def slices(self):
        return slice(self.top, self.bottom), slice(self.left, self.right)


def box_mask(shape, bbox):
    """Known-mask (1 outside, 0 inside the box) of the given (H, W)."""
    m = np.ones(shape, dtype=np.float32)
    m[bbox.slices()] = 0.0
    return m


@dataclass(frozen=True)
class MaskPair:
    image_shape: tuple
    outer_bbox: BBox
    inner_bbox: BBox

    @property
    def outer(self):
        return box_mask(self.image_shape, self.outer_bbox)

    @property
    def inner(self):
        return box_mask(self.image_shape, self.inner_bbox)


def sample_mask_pair(rng, H, W, h_max, w_max):
    """Outer h_max x w_max box at a uniform position, inner box inside it.

    Inner height is uniform over [ceil(3 h_max / 4), h_max] (width likewise),
    placed uniformly within the outer box.
    """
    if not (1 <= h_max <= H and 1 <= w_max <= W):
        raise ValueError(f"hole {h_max}x{w_max} does not fit image {H}x{W}")
    top = int(rng.integers(0, H - h_max + 1))
    left = int(rng.integers(0, W - w_max + 1))
    ih = int(rng.integers(math.ceil(3 * h_max / 4), h_max + 1))
    iw = int(rng.integers(math.ceil(3 * w_max / 4), w_max + 1))
    itop = top + int(rng.integers(0, h_max - ih + 1))
    ileft = left + int(rng.integers(0, w_max - iw + 1))
    return MaskPair((H, W), BBox(top, left, h_max, w_max), BBox(itop, ileft, ih, iw))


def corrupt(x, m):
    """z = x * m with the mask broadcast over channels."""
    if isinstance(x, Tensor):
        return x * _as_mask(m, x)
    return np.asarray(x) * np.asarray(m, dtype=np.asarray(x).dtype)


def complete(z, x_pred, m):
    """Known pixels from z, hole pixels from the prediction: z + x_pred * (1 - m)."""
    if isinstance(z, Tensor) or isinstance(x_pred, Tensor):
        like = x_pred if isinstance(x_pred, Tensor) else z
        mt = _as_mask(m, like)
        return z + x_pred * (1.0 - mt)
    m = np.asarray(m, dtype=np.asarray(z).dtype)
    return np.asarray(z) + np.asarray(x_pred) * (1 - m)


def _as_mask(m, like):
    if isinstance(m, Tensor):
        return m
    return Tensor(np.asarray(m, dtype=like.dtype))


def crop_box(img, bbox):
    rows, cols = bbox.slices()
    if bbox.top < 0 or bbox.left < 0 or bbox.bottom > img.shape[-2] or bbox.right > img.shape[-1]:
        raise AssertionError("crop box outside image")
    return img[..., rows, cols]


def crop_outer(img, pairs):
    """Crop every sample of a batch to its outer box (fixed size)."""
    if isinstance(pairs, MaskPair):
        return crop_box(img, pairs.outer_bbox)
    crops = [crop_box(img[i:i + 1], p.outer_bbox) for i, p in enumerate(pairs)]
    if isinstance(img, Tensor):
        return concat(crops, axis=0)
    return np.concatenate(crops, axis=0)


def batch_masks(pairs, dtype=np.float32):
    """(B, 1, H, W) inner known-masks for a list of mask pairs."""
    return np.stack([p.inner for p in pairs])[:, None].astype(dtype)


def to_unit_range(u8):
    """8-bit values to [-1, 1] via v / 127.5 - 1."""
    return np.asarray(u8, dtype=np.float32) / 127.5 - 1.0


def to_uint8(x):
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def downscale_mask(m, factor):
    """Nearest (top-left) downscale of a known-mask."""
    if factor == 1:
        return np.asarray(m)
    return np.asarray(m)[..., ::factor, ::factor]
