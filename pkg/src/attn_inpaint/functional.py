"""Convolution, padding, resampling and activation primitives.

All image tensors use (batch, channels, height, width) layout. The three
convolution kernels below (forward, input-adjoint and filter-adjoint) are
each other's derivatives, which closes the set under repeated
differentiation.
"""

from enum import Enum

import numpy as np

from .tensor import Tensor, _make, as_tensor, mul, reshape, sum_

# Test hook: added to every conv2d forward output when non-zero.
KERNEL_PERTURBATION = 0.0


class PaddingMode(str, Enum):
    REFLECT = "reflect"
    ZERO = "zero"


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# ------------------------------------------------------------------- padding
def pad(x, pads, mode=PaddingMode.ZERO):
    """Pad the two spatial axes; ``pads`` is (top, bottom, left, right)."""
    mode = PaddingMode(mode)
    top, bottom, left, right = (int(p) for p in pads)
    if min(pads) < 0:
        raise ValueError("negative padding")
    if top == bottom == left == right == 0:
        return x
    h, w = x.shape[-2:]
    if mode is PaddingMode.REFLECT:
        if max(top, bottom) >= h or max(left, right) >= w:
            raise ValueError(f"reflect padding {pads} exceeds input size {h}x{w}")
        np_mode = "reflect"
    else:
        np_mode = "constant"
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    data = np.pad(x.data, widths, mode=np_mode)

    def bw(g):
        return (_pad_adjoint(g, (top, bottom, left, right), mode, (h, w)),)

    return _make(data, (x,), bw, "pad")


def _fold_reflect_axis(g, axis, p0, p1, n):
    g = np.moveaxis(g, axis, -1)
    out = g[..., p0:p0 + n].copy()
    if p0:
        out[..., 1:p0 + 1] += g[..., :p0][..., ::-1]
    if p1:
        out[..., n - 1 - p1:n - 1] += g[..., p0 + n:][..., ::-1]
    return np.moveaxis(out, -1, axis)


def _pad_adjoint(g, pads, mode, hw):
    top, bottom, left, right = pads
    h, w = hw
    if mode is PaddingMode.ZERO:
        data = g.data[..., top:top + h, left:left + w].copy()
    else:
        data = _fold_reflect_axis(g.data, g.ndim - 2, top, bottom, h)
        data = _fold_reflect_axis(data, g.ndim - 1, left, right, w)

    def bw(gg):
        return (pad(gg, pads, mode),)

    return _make(np.ascontiguousarray(data), (g,), bw, "pad_adjoint")


# --------------------------------------------------------------- convolution
def _out_size(n, k, stride, dilation):
    return (n - dilation * (k - 1) - 1) // stride + 1


def _im2col(x, kh, kw, stride, dilation, ho, wo):
    n, c = x.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    sh, sw = stride
    for a in range(kh):
        r0 = a * dilation
        for b in range(kw):
            c0 = b * dilation
            cols[:, :, a, b] = x[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw]
    return cols


def _col2im(cols, in_shape, stride, dilation):
    n, c, kh, kw, ho, wo = cols.shape
    out = np.zeros(in_shape, dtype=cols.dtype)
    sh, sw = stride
    for a in range(kh):
        r0 = a * dilation
        for b in range(kw):
            c0 = b * dilation
            out[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw] += cols[:, :, a, b]
    return out


def _conv_valid(x, w, stride, dilation):
    """Unpadded cross-correlation y = conv(x; w)."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input has {c}, filters expect {ci}")
    ho = _out_size(h, kh, stride[0], dilation)
    wo = _out_size(wd, kw, stride[1], dilation)
    if ho < 1 or wo < 1:
        raise ValueError("convolution output would be empty")
    cols = _im2col(x.data, kh, kw, stride, dilation, ho, wo).reshape(n, c * kh * kw, ho * wo)
    data = np.matmul(w.data.reshape(o, -1), cols).reshape(n, o, ho, wo)
    if KERNEL_PERTURBATION:
        data = data + np.asarray(KERNEL_PERTURBATION, dtype=data.dtype)
    in_hw = (h, wd)

    def bw(g):
        gx = _conv_input_adjoint(g, w, in_hw, stride, dilation) if x.requires_grad else None
        gw = _conv_filter_adjoint(x, g, w.shape, stride, dilation) if w.requires_grad else None
        return gx, gw

    return _make(data, (x, w), bw, "conv2d")


def _conv_input_adjoint(g, w, in_hw, stride, dilation):
    """Adjoint of conv w.r.t. its input: scatters filter x value into the input grid."""
    n, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    cols = np.matmul(w.data.reshape(o, -1).T, g.data.reshape(n, o, ho * wo))
    data = _col2im(cols.reshape(n, c, kh, kw, ho, wo), (n, c) + tuple(in_hw), stride, dilation)

    def bw(gg):
        ggrad = _conv_valid(gg, w, stride, dilation) if g.requires_grad else None
        wgrad = _conv_filter_adjoint(gg, g, w.shape, stride, dilation) if w.requires_grad else None
        return ggrad, wgrad

    return _make(data, (g, w), bw, "conv_input_adjoint")


def _conv_filter_adjoint(x, g, w_shape, stride, dilation):
    """Adjoint of conv w.r.t. its filters: correlates input with output gradient."""
    n, c, h, wd = x.shape
    _, o, ho, wo = g.shape
    kh, kw = w_shape[2:]
    cols = _im2col(x.data, kh, kw, stride, dilation, ho, wo).reshape(n, c * kh * kw, ho * wo)
    data = np.tensordot(g.data.reshape(n, o, ho * wo), cols, axes=([0, 2], [0, 2]))
    data = data.reshape(w_shape)

    def bw(gw):
        gx = _conv_input_adjoint(g, gw, (h, wd), stride, dilation) if x.requires_grad else None
        gg = _conv_valid(x, gw, stride, dilation) if g.requires_grad else None
        return gx, gg

    return _make(data, (x, g), bw, "conv_filter_adjoint")


def conv2d(x, filters, bias=None, stride=1, dilation=1, padding=PaddingMode.ZERO, pad_size=None):
    """2-D cross-correlation.

    ``pad_size`` defaults to ``dilation * (k // 2)`` on each side, which keeps
    spatial dims when stride is 1. It may be an int or an (h, w) pair.
    """
    kh, kw = filters.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d filters must have odd spatial size")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    if x.shape[1] != filters.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, filters expect {filters.shape[1]}")
    if pad_size is None:
        ph, pw = dilation * (kh // 2), dilation * (kw // 2)
    else:
        ph, pw = _pair(pad_size)
    xp = pad(x, (ph, ph, pw, pw), padding)
    out = _conv_valid(xp, filters, (stride, stride), dilation)
    if bias is not None:
        out = out + reshape(bias, (1, -1, 1, 1))
    return out


def transposed_conv2d(x, filters, stride=1, padding=0, output_size=None):
    """Transposed convolution with filters laid out (in_ch, out_ch, kh, kw).

    Every input element scatters ``filters * value`` into the output and
    overlaps are summed. The full output of size ``(h - 1) * stride + k`` is
    cropped by ``padding`` on each side; ``output_size`` can request extra
    trailing rows/columns.
    """
    n, ci, h, w = x.shape
    fi, co, kh, kw = filters.shape
    if fi != ci:
        raise ValueError(f"channel mismatch: input has {ci}, filters expect {fi}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ph, pw = _pair(padding)
    full_h = (h - 1) * stride + kh
    full_w = (w - 1) * stride + kw
    if output_size is None:
        out_h, out_w = full_h - 2 * ph, full_w - 2 * pw
    else:
        out_h, out_w = output_size
    extra_h = out_h + 2 * ph - full_h
    extra_w = out_w + 2 * pw - full_w
    if not (0 <= extra_h < stride and 0 <= extra_w < stride):
        raise ValueError(f"incompatible output_size {output_size}")
    full = _conv_input_adjoint(x, filters, (full_h + extra_h, full_w + extra_w), (stride, stride), 1)
    if ph or pw:
        full = full[:, :, ph:ph + out_h, pw:pw + out_w]
    return full


# ------------------------------------------------------------ patch unfolding
def unfold_patches(x, size, stride=1, pad_size=0):
    """Zero-padded sliding windows of a single image as (P, c, size, size).

    Patches are ordered row-major over the window lattice.
    """
    if x.shape[0] != 1:
        raise ValueError("unfold_patches expects a batch of one")
    xp = pad(x, (pad_size,) * 4, PaddingMode.ZERO) if pad_size else x
    return _unfold_valid(xp, size, stride)


def _unfold_valid(x, k, stride):
    _, c, h, w = x.shape
    ho = _out_size(h, k, stride, 1)
    wo = _out_size(w, k, stride, 1)
    cols = _im2col(x.data, k, k, (stride, stride), 1, ho, wo)[0]
    data = np.ascontiguousarray(cols.transpose(3, 4, 0, 1, 2)).reshape(ho * wo, c, k, k)
    in_shape = x.shape

    def bw(g):
        return (_fold_valid(g, in_shape, stride, (ho, wo)),)

    return _make(data, (x,), bw, "unfold")


def _fold_valid(g, in_shape, stride, lattice):
    ho, wo = lattice
    _, c, k, _ = g.shape
    cols = g.data.reshape(ho, wo, c, k, k).transpose(2, 3, 4, 0, 1)[None]
    data = _col2im(np.ascontiguousarray(cols), in_shape, (stride, stride), 1)

    def bw(gg):
        return (_unfold_valid(gg, k, stride),)

    return _make(data, (g,), bw, "fold")


# ---------------------------------------------------------------- activations
def elu(x):
    pos = x.data > 0
    data = np.where(pos, x.data, np.expm1(np.minimum(x.data, 0))).astype(x.dtype)
    posf = Tensor(pos.astype(x.dtype))
    out = None

    def bw(g):
        # d/dx = 1 for x > 0, exp(x) = out + 1 otherwise
        return (g * (posf + (1.0 - posf) * (out + 1.0)),)

    out = _make(data, (x,), bw, "elu")
    return out


def leaky_relu(x, alpha=0.2):
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    slope = Tensor(np.where(x.data > 0, 1.0, alpha).astype(x.dtype))
    return mul(x, slope)


def clip(x, lo, hi):
    if not lo < hi:
        raise ValueError("clip needs lo < hi")
    inside = Tensor(((x.data >= lo) & (x.data <= hi)).astype(x.dtype))
    data = np.clip(x.data, lo, hi)

    def bw(g):
        return (g * inside,)

    return _make(data, (x,), bw, "clip")


def channel_softmax(x, scale=1.0):
    """Softmax of ``scale * x`` over axis 1, stabilised by max subtraction."""
    z = x.data * np.asarray(scale, dtype=x.dtype)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=1, keepdims=True)
    out = None

    def bw(g):
        inner = sum_(g * out, axis=1, keepdims=True)
        return ((g - inner) * out * float(scale),)

    out = _make(data, (x,), bw, "channel_softmax")
    return out


# ---------------------------------------------------------------- resampling
def resize_nearest(x, factor):
    """Nearest-neighbour resize by 2, 4, 1/2 or 1/4.

    Downscaling keeps the top-left sample of each block.
    """
    if factor >= 1:
        f = int(round(factor))
        if f != factor or f & (f - 1):
            raise ValueError(f"unsupported factor {factor}")
        return _upsample(x, f) if f > 1 else x
    f = int(round(1 / factor))
    if abs(1 / f - factor) > 1e-12 or f & (f - 1):
        raise ValueError(f"unsupported factor {factor}")
    h, w = x.shape[-2:]
    if h % f or w % f:
        raise ValueError(f"cannot downscale {h}x{w} by {f}")
    return _subsample(x, f)


def _upsample(x, f):
    data = x.data.repeat(f, axis=-2).repeat(f, axis=-1)

    def bw(g):
        return (_block_sum(g, f),)

    return _make(data, (x,), bw, "upsample")


def _block_sum(g, f):
    *lead, h, w = g.shape
    data = g.data.reshape(*lead, h // f, f, w // f, f).sum(axis=(-3, -1))

    def bw(gg):
        return (_upsample(gg, f),)

    return _make(data, (g,), bw, "block_sum")


def _subsample(x, f):
    data = np.ascontiguousarray(x.data[..., ::f, ::f])
    shape = x.shape

    def bw(g):
        return (_subsample_adjoint(g, f, shape),)

    return _make(data, (x,), bw, "subsample")


def _subsample_adjoint(g, f, shape):
    data = np.zeros(shape, dtype=g.dtype)
    data[..., ::f, ::f] = g.data

    def bw(gg):
        return (_subsample(gg, f),)

    return _make(data, (g,), bw, "subsample_adjoint")


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def constant(value, like):
    return as_tensor(np.asarray(value, dtype=like.dtype))
