"""PNG reading/writing and the synthetic texture generator."""

import os

import numpy as np
from PIL import Image

from .masking import to_uint8, to_unit_range


def read_rgb(path):
    """8-bit RGB image as a uint8 array (H, W, 3)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_rgb(path, arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("write_rgb expects uint8 (H, W, 3)")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False)
    return path


def read_mask(path):
    """Grayscale mask to a float known-mask (H, W): 255 -> 1, anything else -> 0."""
    with Image.open(path) as im:
        g = np.asarray(im.convert("L"), dtype=np.uint8)
    return (g >= 128).astype(np.float32)


def write_mask(path, known):
    g = np.where(np.asarray(known) > 0.5, 255, 0).astype(np.uint8)
    Image.fromarray(g, mode="L").save(path, format="PNG", optimize=False)
    return path


def image_to_tensor(rgb):
    """uint8 (H, W, 3) -> float32 (1, 3, H, W) in [-1, 1]."""
    return to_unit_range(rgb).transpose(2, 0, 1)[None]


def tensor_to_image(x):
    """(1, 3, H, W) or (3, H, W) in [-1, 1] -> uint8 (H, W, 3)."""
    x = np.asarray(x)
    if x.ndim == 4:
        x = x[0]
    return to_uint8(x).transpose(1, 2, 0)


def grid(images, cols=None):
    """Tile (N, 3, H, W) images in [-1, 1] into one uint8 RGB array."""
    images = np.asarray(images)
    n, _, h, w = images.shape
    cols = cols or n
    rows = (n + cols - 1) // cols
    out = np.full((rows * h, cols * w, 3), 255, dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        out[r * h:(r + 1) * h, c * w:(c + 1) * w] = tensor_to_image(images[i])
    return out


# ------------------------------------------------------------- synthetic data
def _grating(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2.0, 10.0) / size
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    colors = rng.uniform(0, 1, size=(2, 3))
    t = (wave + 1) / 2
    return t[..., None] * colors[0] + (1 - t[..., None]) * colors[1]


def _checkerboard(rng, size):
    cell = int(rng.integers(4, size // 4 + 1))
    oy, ox = rng.integers(0, cell, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    parity = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    colors = rng.uniform(0, 1, size=(2, 3))
    return parity[..., None] * colors[0] + (1 - parity[..., None]) * colors[1]


def _gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    corners = rng.uniform(0, 1, size=(4, 3))
    a, b = yy[..., None], xx[..., None]
    return ((1 - a) * (1 - b) * corners[0] + (1 - a) * b * corners[1]
            + a * (1 - b) * corners[2] + a * b * corners[3])


_KINDS = (_grating, _checkerboard, _gradient)


def synth_textures(count, size, seed):
    """Deterministic list of uint8 (size, size, 3) textures cycling through kinds."""
    if size < 32:
        raise ValueError("texture size must be >= 32")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        img = _KINDS[i % len(_KINDS)](rng, size)
        out.append(np.clip(np.rint(img * 255), 0, 255).astype(np.uint8))
    return out


def gendata(out_dir, count, size, seed):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(synth_textures(count, size, seed)):
        paths.append(write_rgb(os.path.join(out_dir, f"tex_{i:04d}.png"), img))
    return paths


def load_dir(path):
    """All PNGs of a directory (sorted) as float32 (N, 3, H, W) in [-1, 1]."""
    names = sorted(f for f in os.listdir(path) if f.lower().endswith(".png"))
    if not names:
        raise ValueError(f"no PNG images in {path}")
    imgs = [image_to_tensor(read_rgb(os.path.join(path, n)))[0] for n in names]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValueError(f"images in {path} have differing dims: {sorted(shapes)}")
    return np.stack(imgs)
