"""Contextual attention: match foreground against background patches, attend,
propagate along coherent shifts and paste the attended patches back.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, concat, no_grad, reshape, sqrt, sum_, transpose

INVALID_SCORE = -1e9


@dataclass
class AttentionConfig:
    patch_size: int = 3
    softmax_scale: float = 10.0
    prop_radius: int = 2
    extract_stride: int = 1
    downscale_rate: int = 1
    eps: float = 1e-4

    def validate(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be a positive odd integer")
        if self.prop_radius < 0:
            raise ValueError("prop_radius must be >= 0")
        if self.extract_stride < 1:
            raise ValueError("extract_stride must be >= 1")
        if self.downscale_rate not in (1, 2):
            raise ValueError("downscale_rate must be 1 or 2")
        return self


@dataclass
class PatchStack:
    """Background patches on the extraction lattice, including invalid ones.

    ``centers`` holds the (row, col) centre of every patch in the grid it was
    taken from; ``valid`` flags patches whose centre pixel is known.
    """

    patches: Tensor
    valid: np.ndarray
    centers: np.ndarray
    lattice: tuple
    stride: int

    @property
    def num_valid(self):
        return int(self.valid.sum())

    def __len__(self):
        return len(self.valid)


@dataclass
class AttentionScores:
    """Scores of shape (1, P, h, w): one channel per background patch."""

    scores: Tensor
    valid: np.ndarray
    centers: np.ndarray
    lattice: tuple
    stride: int

    def replace(self, scores):
        return AttentionScores(scores, self.valid, self.centers, self.lattice, self.stride)


def _lattice_centers(rows, cols, stride):
    ys, xs = np.meshgrid(np.arange(rows) * stride, np.arange(cols) * stride, indexing="ij")
    return np.stack([ys.ravel(), xs.ravel()], axis=1)


def extract_patches(bg, mask_known, cfg):
    if bg.shape[0] != 1:
        raise ValueError("extract_patches works on one sample at a time")
    mask = np.asarray(mask_known.data if isinstance(mask_known, Tensor) else mask_known)
    mask = mask.reshape(mask.shape[-2:])
    if mask.shape != bg.shape[-2:]:
        raise ValueError(f"mask {mask.shape} does not match features {bg.shape[-2:]}")
    k, s = cfg.patch_size, cfg.extract_stride
    patches = F.unfold_patches(bg, k, stride=s, pad_size=k // 2)
    h, w = bg.shape[-2:]
    rows, cols = (h - 1) // s + 1, (w - 1) // s + 1
    centers = _lattice_centers(rows, cols, s)
    valid = mask[centers[:, 0], centers[:, 1]] > 0.5
    if not valid.any():
        raise ValueError("no valid background patch: the hole covers every lattice centre")
    return PatchStack(patches, valid, centers, (rows, cols), s)


def _valid_tensor(valid, like):
    return Tensor(valid.astype(like.dtype).reshape(1, -1, 1, 1))


def match_scores(fg, stack, eps=1e-4):
    """Cosine similarity of every foreground patch with every background patch."""
    if fg.shape[1] != stack.patches.shape[1]:
        raise ValueError("foreground and patch channel counts differ")
    b = stack.patches
    k = b.shape[-1]
    bnorm = F.clip(sqrt(sum_(b * b, axis=(1, 2, 3), keepdims=True)), eps, np.inf)
    dots = F.conv2d(fg, b / bnorm, padding=F.PaddingMode.ZERO, pad_size=k // 2)
    ones = Tensor(np.ones((1,) + b.shape[1:], dtype=fg.dtype))
    fnorm = F.clip(sqrt(F.conv2d(fg * fg, ones, pad_size=k // 2)), eps, np.inf)
    cos = dots / fnorm
    v = _valid_tensor(stack.valid, cos)
    raw = cos * v + (1.0 - v) * INVALID_SCORE
    return AttentionScores(raw, stack.valid, stack.centers, stack.lattice, stack.stride)


def attend(raw, scale):
    att = F.channel_softmax(raw.scores, scale)
    return raw.replace(att * _valid_tensor(raw.valid, att))


def _diag_kernel(k, stride, dtype):
    kp = k // stride
    kern = np.zeros((1, 1, 2 * kp + 1, 2 * k + 1), dtype=dtype)
    for j in range(-kp, kp + 1):
        kern[0, 0, j + kp, stride * j + k] = 1.0
    return Tensor(kern), (kp, k)


def _diag_pass(s4, k, stride, vertical):
    """Sum s4[patch + j, query + stride*j] over |stride*j| <= k along one axis.

    s4 has shape (Hb, Wb, h, w). The sum is a convolution of each
    (patch-axis, query-axis) plane with a shifted identity kernel.
    """
    hb, wb, h, w = s4.shape
    if vertical:
        perm, plane = (1, 3, 0, 2), (wb * w, 1, hb, h)
    else:
        perm, plane = (0, 2, 1, 3), (hb * h, 1, wb, w)
    planes = reshape(transpose(s4, perm), plane)
    kern, pads = _diag_kernel(k, stride, s4.dtype)
    out = F.conv2d(planes, kern, padding=F.PaddingMode.ZERO, pad_size=pads)
    out = reshape(out, tuple(s4.shape[i] for i in perm))
    return transpose(out, tuple(np.argsort(perm)))


def propagate(scores, k):
    """Left-right then top-down summation of scores along equal query/patch shifts.

    Shifts whose patch centre falls off the lattice contribute zero; the
    result is not renormalised.
    """
    if k < 0:
        raise ValueError("propagation radius must be >= 0")
    if k == 0:
        return scores
    s = scores.scores
    hb, wb = scores.lattice
    h, w = s.shape[-2:]
    s4 = reshape(s, (hb, wb, h, w))
    s4 = _diag_pass(s4, k, scores.stride, vertical=False)
    s4 = _diag_pass(s4, k, scores.stride, vertical=True)
    return scores.replace(reshape(s4, s.shape))


def renormalize(scores):
    """Zero invalid channels and rescale so weights sum to one per location."""
    v = _valid_tensor(scores.valid, scores.scores)
    masked = scores.scores * v
    total = sum_(masked, axis=1, keepdims=True)
    return scores.replace(masked / total)


def coverage(in_hw, kernel, stride, padding, out_hw, dtype=np.float32):
    with no_grad():
        ones = Tensor(np.ones((1, 1) + tuple(in_hw), dtype=dtype))
        kern = Tensor(np.ones((1, 1, kernel, kernel), dtype=dtype))
        cov = F.transposed_conv2d(ones, kern, stride=stride, padding=padding, output_size=out_hw)
    return cov.data


def paste(scores, patches, out_hw, stride=1, padding=None):
    """Scatter attended patches and average overlapping pixels."""
    s = scores.scores if isinstance(scores, AttentionScores) else scores
    if np.any(s.data < 0):
        raise ValueError("paste expects nonnegative scores")
    k = patches.shape[-1]
    if padding is None:
        padding = k // 2
    acc = F.transposed_conv2d(s, patches, stride=stride, padding=padding, output_size=out_hw)
    cov = coverage(s.shape[-2:], k, stride, padding, out_hw, dtype=s.dtype)
    assert np.all(cov > 0), "paste geometry leaves uncovered output pixels"
    return acc / Tensor(cov)


def contextual_attention(fg, bg, mask_known, cfg):
    """Reconstruct ``fg`` from background patches of ``bg``.

    ``mask_known`` is (n, 1, H, W) at feature resolution with 1 for known
    pixels. Returns the reconstructed features and the final per-sample
    scores (used for visualisation).
    """
    cfg.validate()
    if fg.shape != bg.shape:
        raise ValueError("foreground and background must have equal dims")
    mask = np.asarray(mask_known.data if isinstance(mask_known, Tensor) else mask_known)
    n, c, h, w = fg.shape
    r = cfg.downscale_rate
    if h % r or w % r:
        raise ValueError(f"feature dims {h}x{w} not divisible by downscale rate {r}")
    if r > 1:
        fg_l = F.resize_nearest(fg, 1.0 / r)
        bg_l = F.resize_nearest(bg, 1.0 / r)
        mask_l = mask[..., ::r, ::r]
    else:
        fg_l, bg_l, mask_l = fg, bg, mask
    p = cfg.patch_size
    outs, all_scores = [], []
    for i in range(n):
        stack = extract_patches(bg_l[i:i + 1], mask_l[i], cfg)
        raw = match_scores(fg_l[i:i + 1], stack, cfg.eps)
        att = attend(raw, cfg.softmax_scale)
        final = renormalize(propagate(att, cfg.prop_radius))
        if r == 1:
            raw_patches = stack.patches
        else:
            raw_patches = F.unfold_patches(bg[i:i + 1], p * r, stride=cfg.extract_stride * r,
                                           pad_size=r * (p // 2))
        outs.append(paste(final, raw_patches, (h, w), stride=r, padding=r * (p // 2)))
        all_scores.append(final)
    return concat(outs, axis=0) if n > 1 else outs[0], all_scores


# ------------------------------------------------------------- visualisation
def attention_offsets(scores):
    """Offset (dy, dx) from each query to the centre of its strongest patch."""
    s = scores.scores.data[0]
    best = s.argmax(axis=0)
    h, w = s.shape[1:]
    qy, qx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy = scores.centers[best, 0]
    cx = scores.centers[best, 1]
    return cy - qy, cx - qx


# hue of the offset direction; rotated so up-right reads green and
# down-left reads pink/magenta
HUE_ROTATION_DEG = 75.0


def offsets_to_color(dy, dx, max_mag=None):
    dy = np.asarray(dy, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    mag = np.hypot(dy, dx)
    if max_mag is None:
        max_mag = mag.max()
    sat = mag / max_mag if max_mag > 0 else np.zeros_like(mag)
    sat = np.clip(sat, 0.0, 1.0)
    hue = (np.degrees(np.arctan2(-dy, dx)) + HUE_ROTATION_DEG) % 360.0 / 360.0
    rgb = np.empty(dy.shape + (3,))
    for idx in np.ndindex(dy.shape):
        rgb[idx] = colorsys.hsv_to_rgb(hue[idx], sat[idx], 1.0)
    return rgb


def attention_to_color(scores):
    """RGB map (1, 3, h, w) in [0, 1]; white means a query attends to itself."""
    if isinstance(scores, (list, tuple)):
        return np.concatenate([attention_to_color(s) for s in scores], axis=0)
    dy, dx = attention_offsets(scores)
    rgb = offsets_to_color(dy, dx)
    return rgb.transpose(2, 0, 1)[None]


def color_wheel_legend(size=64):
    """Square legend image (size, size, 3) of the offset colour coding."""
    c = (size - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dy, dx = yy - c, xx - c
    rgb = offsets_to_color(dy, dx, max_mag=c)
    rgb[np.hypot(dy, dx) > c] = 1.0
    return rgb
