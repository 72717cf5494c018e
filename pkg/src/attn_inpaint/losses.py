"""Reconstruction and adversarial objectives plus evaluation metrics."""

import math
from dataclasses import dataclass

import numpy as np

from .masking import BBox
from .tensor import Tensor, grad, mean, sqrt, sum_


@dataclass
class DiscountMask:
    """Per-pixel weights gamma**l inside the hole, 0 elsewhere; dims (1, 1, H, W)."""

    weights: np.ndarray
    gamma: float
    bbox: BBox


def build_discount_mask(bbox, gamma=0.99, image_shape=None):
    """l is the distance of a hole pixel to the nearest side of its box."""
    if bbox.height <= 0 or bbox.width <= 0:
        raise ValueError("empty hole box")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if image_shape is None:
        image_shape = (bbox.bottom, bbox.right)
    H, W = image_shape
    if bbox.top < 0 or bbox.left < 0 or bbox.bottom > H or bbox.right > W:
        raise ValueError("hole box outside image")
    i = np.arange(bbox.height)[:, None]
    j = np.arange(bbox.width)[None, :]
    dist = np.minimum(np.minimum(i, j), np.minimum(bbox.height - 1 - i, bbox.width - 1 - j))
    weights = np.zeros((1, 1, H, W), dtype=np.float64)
    # scalar pow per distance: numpy's vectorised power is not correctly rounded
    table = np.array([float(gamma) ** k for k in range(int(dist.max()) + 1)])
    weights[0, 0, bbox.top:bbox.bottom, bbox.left:bbox.right] = table[dist]
    return DiscountMask(weights, gamma, bbox)


def discounted_l1(pred, target, M):
    """sum(M * |pred - target|) / sum(M), M broadcast over channels."""
    w = M.weights if isinstance(M, DiscountMask) else np.asarray(M)
    if pred.shape != target.shape:
        raise ValueError("pred and target dims differ")
    w = np.broadcast_to(w, pred.shape).astype(pred.dtype)
    total = float(w.sum(dtype=np.float64))
    if total == 0:
        raise ValueError("discount mask has zero total weight")
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    return sum_(Tensor(w) * (pred - target).abs()) * (1.0 / total)


def critic_loss(d_real, d_fake):
    """mean(D(fake)) - mean(D(real)); minimised by the critic."""
    return mean(d_fake) - mean(d_real)


def generator_adv_loss(d_fake):
    return -mean(d_fake)


@dataclass
class GpConfig:
    lambda_gp: float = 10.0

    def __post_init__(self):
        if self.lambda_gp <= 0:
            raise ValueError("lambda_gp must be positive")


def interpolate(x_real, x_fake, t):
    t = np.asarray(t, dtype=np.float64).reshape(-1, *([1] * (np.ndim(x_real) - 1)))
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    return (1 - t) * x_real + t * x_fake


def gradient_penalty(critic, x_real, x_fake, mask_known, cfg=None, rng=None, t=None):
    """lambda * mean((|| grad D(x_hat) * (1 - m) ||_2 - 1)^2) over the batch.

    x_hat interpolates real and fake with a fresh t ~ U[0, 1] per sample.
    The result stays differentiable w.r.t. the critic parameters.
    """
    cfg = cfg or GpConfig()
    xr = x_real.data if isinstance(x_real, Tensor) else np.asarray(x_real)
    xf = x_fake.data if isinstance(x_fake, Tensor) else np.asarray(x_fake)
    if xr.shape != xf.shape:
        raise ValueError("real and fake batches differ in dims")
    n = xr.shape[0]
    if t is None:
        if rng is None:
            raise ValueError("either rng or t is required")
        t = rng.uniform(0.0, 1.0, size=n)
    hole = 1.0 - np.asarray(mask_known, dtype=xr.dtype)
    hole = np.broadcast_to(hole, xr.shape)
    if np.any(hole.reshape(n, -1).sum(axis=1) == 0):
        raise ValueError("gradient penalty needs a non-empty hole")
    x_hat = Tensor(interpolate(xr, xf, t).astype(xr.dtype), requires_grad=True)
    d = critic(x_hat)
    g = grad(sum_(d), x_hat, create_graph=True)
    masked = g * Tensor(np.ascontiguousarray(hole))
    norms = sqrt(sum_(masked * masked, axis=tuple(range(1, xr.ndim))))
    return mean((norms - 1.0) * (norms - 1.0)) * cfg.lambda_gp


# -------------------------------------------------------------------- metrics
PSNR_INF = math.inf


def eval_metrics(x, x_tilde):
    """Full-image l1/l2 (percent), PSNR (peak 1) and anisotropic TV (percent).

    Inputs are in [-1, 1] and are mapped to [0, 1] first. Identical images
    give PSNR = inf.
    """
    u = (np.asarray(x, dtype=np.float64) + 1.0) / 2.0
    v = (np.asarray(x_tilde, dtype=np.float64) + 1.0) / 2.0
    diff = u - v
    l1 = float(np.mean(np.abs(diff)))
    l2 = float(np.mean(diff * diff))
    psnr = PSNR_INF if l2 == 0 else 10.0 * math.log10(1.0 / l2)
    dx = np.abs(v[..., :, 1:] - v[..., :, :-1])
    dy = np.abs(v[..., 1:, :] - v[..., :-1, :])
    tv = float((dx.sum() + dy.sum()) / (dx.size + dy.size))
    return {"l1_pct": 100.0 * l1, "l2_pct": 100.0 * l2, "psnr": psnr, "tv": 100.0 * tv}
