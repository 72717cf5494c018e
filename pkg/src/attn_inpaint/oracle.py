"""Brute-force reference implementations.

Everything here uses plain Python loops over float64 scalars and shares no
code with the optimised kernels, so agreement between the two is evidence
rather than tautology.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class OracleReport:
    case_id: str
    max_abs: float
    max_rel: float
    tolerance: float
    passed: bool

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"CASE {self.case_id} max_abs={self.max_abs:.3e} max_rel={self.max_rel:.3e} {verdict}"


def compare(case_id, got, ref, tol, rel=True):
    """max_rel is max|got - ref| scaled by max|ref| (floored at 1e-12)."""
    got = np.asarray(got, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if got.shape != ref.shape:
        return OracleReport(case_id, math.inf, math.inf, tol, False)
    max_abs = float(np.max(np.abs(got - ref))) if got.size else 0.0
    scale = max(float(np.max(np.abs(ref))) if ref.size else 0.0, 1e-12)
    max_rel = max_abs / scale
    err = max_rel if rel else max_abs
    return OracleReport(case_id, max_abs, max_rel, tol, bool(err <= tol))


def _pad_value(img, c, y, x, mode):
    h, w = len(img[c]), len(img[c][0])
    if 0 <= y < h and 0 <= x < w:
        return img[c][y][x]
    if mode == "zero":
        return 0.0
    # mirror without repeating the edge
    if y < 0:
        y = -y
    elif y >= h:
        y = 2 * (h - 1) - y
    if x < 0:
        x = -x
    elif x >= w:
        x = 2 * (w - 1) - x
    return img[c][y][x]


def naive_conv(inp, filters, stride=1, dilation=1, pad=None, mode="zero"):
    """Direct summation cross-correlation in float64."""
    inp = np.asarray(inp, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    n, ci, h, w = inp.shape
    co, _, kh, kw = filters.shape
    if pad is None:
        pad = dilation * (kh // 2)
    ho = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    wo = (w + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        img = inp[b].tolist()
        for o in range(co):
            f = filters[o].tolist()
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for a in range(kh):
                            for d in range(kw):
                                y = i * stride + a * dilation - pad
                                x = j * stride + d * dilation - pad
                                acc += f[c][a][d] * _pad_value(img, c, y, x, mode)
                    out[b, o, i, j] = acc
    return out


def naive_propagate(scores, centers, k, stride=1):
    """Literal left-right then top-down sums over equal query/patch shifts.

    ``scores`` is (P, h, w) indexed by patch; ``centers`` maps a patch index
    to its (row, col) centre. Terms whose shifted query or patch does not
    exist contribute zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    P, h, w = scores.shape
    lookup = {(int(cy), int(cx)): p for p, (cy, cx) in enumerate(centers)}

    def one_pass(src, dy, dx):
        out = np.zeros_like(src)
        for p in range(P):
            cy, cx = int(centers[p][0]), int(centers[p][1])
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for i in range(-k, k + 1):
                        q = lookup.get((cy + i * dy, cx + i * dx))
                        yy, xx = y + i * dy, x + i * dx
                        if q is None or not (0 <= yy < h and 0 <= xx < w):
                            continue
                        acc += src[q, yy, xx]
                    out[p, y, x] = acc
        return out

    return one_pass(one_pass(scores, 0, 1), 1, 0)


def _patch_vector(img, cy, cx, half, channels):
    vec = []
    h, w = len(img[0]), len(img[0][0])
    for c in range(channels):
        for a in range(-half, half + 1):
            for b in range(-half, half + 1):
                y, x = cy + a, cx + b
                vec.append(img[c][y][x] if 0 <= y < h and 0 <= x < w else 0.0)
    return vec


def naive_attention(fg, bg, mask, patch_size=3, softmax_scale=10.0, prop_radius=2,
                    extract_stride=1, downscale_rate=1, eps=1e-4):
    """Reference contextual attention for a single sample.

    fg, bg: (c, H, W); mask: (H, W) with 1 = known. Returns the
    reconstruction (c, H, W), the final weights (P, h, w) and the argmax
    patch index map (h, w).
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    c, H, W = fg.shape
    r, s, half = downscale_rate, extract_stride, patch_size // 2
    fg_l = fg[:, ::r, ::r].tolist()
    bg_l = bg[:, ::r, ::r].tolist()
    mask_l = mask[::r, ::r]
    h, w = len(fg_l[0]), len(fg_l[0][0])

    centers = [(y, x) for y in range(0, h, s) for x in range(0, w, s)]
    valid = [mask_l[y, x] > 0.5 for (y, x) in centers]
    bvecs = [_patch_vector(bg_l, cy, cx, half, c) for (cy, cx) in centers]
    bnorms = [max(math.sqrt(sum(v * v for v in b)), eps) for b in bvecs]
    P = len(centers)

    # cosine scores and masked softmax per query
    att = np.zeros((P, h, w))
    for y in range(h):
        for x in range(w):
            f = _patch_vector(fg_l, y, x, half, c)
            fn = max(math.sqrt(sum(v * v for v in f)), eps)
            logits = []
            for p in range(P):
                if valid[p]:
                    dot = sum(a * b for a, b in zip(f, bvecs[p]))
                    logits.append(softmax_scale * dot / (fn * bnorms[p]))
                else:
                    logits.append(None)
            top = max(v for v in logits if v is not None)
            exps = [math.exp(v - top) if v is not None else 0.0 for v in logits]
            total = sum(exps)
            for p in range(P):
                att[p, y, x] = exps[p] / total

    prop = naive_propagate(att, centers, prop_radius, s) if prop_radius > 0 else att
    for p in range(P):
        if not valid[p]:
            prop[p] = 0.0
    totals = prop.sum(axis=0)
    final = prop / totals

    # gather-average paste: each query pastes a (patch_size * r)^2 window
    k = patch_size * r
    out = np.zeros((c, H, W))
    count = np.zeros((H, W))
    raw = []
    for (cy, cx) in centers:
        top, left = r * cy - r * half, r * cx - r * half
        win = np.zeros((c, k, k))
        for ch in range(c):
            for a in range(k):
                for b in range(k):
                    yy, xx = top + a, left + b
                    if 0 <= yy < H and 0 <= xx < W:
                        win[ch, a, b] = bg[ch, yy, xx]
        raw.append(win)
    for y in range(h):
        for x in range(w):
            top, left = r * y - r * half, r * x - r * half
            blend = np.zeros((c, k, k))
            for p in range(P):
                wgt = final[p, y, x]
                if wgt:
                    blend += wgt * raw[p]
            for a in range(k):
                for b in range(k):
                    yy, xx = top + a, left + b
                    if 0 <= yy < H and 0 <= xx < W:
                        out[:, yy, xx] += blend[:, a, b]
                        count[yy, xx] += 1
    out /= count
    argmax = final.argmax(axis=0)
    return out, final, argmax


def finite_diff_grad(fn, x, step=1e-4):
    """Central differences of a scalar function of a float64 array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = float(fn(x))
        x[idx] = orig - step
        fm = float(fn(x))
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g


def grad_rel_error(got, ref):
    """Norm-wise relative error ||got - ref|| / max(||got||, ||ref||)."""
    got = np.asarray(got, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(got), np.linalg.norm(ref), 1e-30)
    return float(np.linalg.norm(got - ref) / denom)
