"""Oracle suite behind ``attn-inpaint check``: optimised kernels vs brute force."""

import numpy as np

from . import functional as F
from . import oracle
from .attention import AttentionConfig, AttentionScores, _lattice_centers, contextual_attention, propagate
from .tensor import Tensor, grad, mean, precision

CONV_TOL = 1e-5  # abs, 32-bit forward
ATTN_TOL = 1e-4  # rel, 32-bit forward
EXACT64_TOL = 0.0
GRAD64_TOL = 1e-6


def _conv_cases(rng, n=20):
    for i in range(n):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        dilation = int(rng.integers(1, 3))
        size = int(rng.integers(max(5, dilation * (k // 2) + 2), 10))
        mode = "reflect" if i % 2 == 0 else "zero"
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.uniform(-1, 1, (2, ci, size, size)).astype(np.float32)
        w = rng.uniform(-1, 1, (co, ci, k, k)).astype(np.float32)
        yield f"conv/{i:02d}", x, w, stride, dilation, mode


def check_conv(rng):
    out = []
    for cid, x, w, stride, dilation, mode in _conv_cases(rng):
        got = F.conv2d(Tensor(x), Tensor(w), stride=stride, dilation=dilation,
                       padding=F.PaddingMode(mode)).data
        ref = oracle.naive_conv(x, w, stride, dilation, mode=mode)
        out.append(oracle.compare(cid, got, ref, CONV_TOL, rel=False))
    return out


def random_scores(rng, lattice_hw, hw, stride, dtype=np.float64):
    hb, wb = lattice_hw
    s = rng.uniform(0, 1, (1, hb * wb) + tuple(hw)).astype(dtype)
    centers = _lattice_centers(hb, wb, stride)
    return AttentionScores(Tensor(s), np.ones(hb * wb, dtype=bool), centers, (hb, wb), stride)


def check_propagate(rng, n=5):
    out = []
    for i in range(n):
        stride = 1 + i % 2
        h = int(rng.integers(4, 9))
        lat = ((h - 1) // stride + 1,) * 2
        k = int(rng.integers(1, 3))
        sc = random_scores(rng, lat, (h, h), stride)
        got = propagate(sc, k).scores.data[0]
        ref = oracle.naive_propagate(sc.scores.data[0], sc.centers, k, stride)
        out.append(oracle.compare(f"propagate/{i}", got, ref, EXACT64_TOL, rel=False))
    return out


ATTN_CASES = [  # (channels, size, extract_stride, downscale_rate, prop_radius)
    (2, 6, 1, 1, 2), (3, 8, 1, 1, 1), (4, 16, 1, 1, 2), (2, 8, 2, 1, 2), (3, 12, 2, 1, 1),
    (2, 8, 1, 2, 2), (2, 16, 1, 2, 2), (3, 16, 2, 2, 1), (2, 12, 1, 1, 0), (3, 10, 1, 1, 2),
]


def attention_case(seed, c, size, stride, rate, k, dtype=np.float32):
    rng = np.random.default_rng(seed)
    fg = rng.uniform(-1, 1, (1, c, size, size)).astype(dtype)
    bg = rng.uniform(-1, 1, (1, c, size, size)).astype(dtype)
    mask = np.ones((size, size), dtype=dtype)
    h0, w0 = rng.integers(0, size // 2, size=2)
    mask[h0:h0 + size // 2, w0:w0 + size // 2] = 0
    cfg = AttentionConfig(extract_stride=stride, downscale_rate=rate, prop_radius=k)
    return fg, bg, mask, cfg


def check_attention():
    out = []
    for i, (c, size, stride, rate, k) in enumerate(ATTN_CASES):
        fg, bg, mask, cfg = attention_case(100 + i, c, size, stride, rate, k)
        got, _ = contextual_attention(Tensor(fg), Tensor(bg), mask[None, None], cfg)
        ref, _, _ = oracle.naive_attention(fg[0], bg[0], mask, cfg.patch_size, cfg.softmax_scale, k,
                                           stride, rate, cfg.eps)
        out.append(oracle.compare(f"attention/{i}", got.data[0], ref, ATTN_TOL))
    return out


def check_gradients(rng):
    out = []
    with precision("float64"):
        x = rng.uniform(-1, 1, (1, 2, 6, 6))
        w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))

        def f_conv(a):
            return mean(F.elu(F.conv2d(Tensor(a), w, padding=F.PaddingMode.REFLECT))).data

        xt = Tensor(x, requires_grad=True)
        g = grad(mean(F.elu(F.conv2d(xt, w, padding=F.PaddingMode.REFLECT))), xt).data
        err = oracle.grad_rel_error(g, oracle.finite_diff_grad(f_conv, x, 1e-5))
        out.append(oracle.OracleReport("grad/conv_elu_mean", err, err, GRAD64_TOL, err <= GRAD64_TOL))

        fg = rng.uniform(-1, 1, (1, 2, 8, 8))
        mask = np.ones((1, 1, 8, 8))
        mask[..., 2:6, 2:6] = 0
        cfg = AttentionConfig()

        def f_attn(a):
            return mean(contextual_attention(Tensor(a), Tensor(a), mask, cfg)[0]).data

        ft = Tensor(fg, requires_grad=True)
        g = grad(mean(contextual_attention(ft, ft, mask, cfg)[0]), ft).data
        err = oracle.grad_rel_error(g, oracle.finite_diff_grad(f_attn, fg, 1e-5))
        out.append(oracle.OracleReport("grad/attention_mean", err, err, GRAD64_TOL, err <= GRAD64_TOL))
    return out


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    return check_conv(rng) + check_propagate(rng) + check_attention() + check_gradients(rng)
