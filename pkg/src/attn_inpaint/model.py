"""Coarse-to-fine generator with a contextual attention branch, plus the
separate global and local WGAN critics.

Layer stacks are described with the K/D/S/C grammar, e.g.
``K5S1C32 - K3S2C64 - K3D2S1C128 - resize (2x) - K3S1C3 - clip``.
"""

import re
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .attention import AttentionConfig, contextual_attention
from .masking import complete, downscale_mask
from .tensor import Tensor, concat, matmul

COARSE = ("K5S1C32 - K3S2C64 - K3S1C64 - K3S2C128 - K3S1C128 - K3S1C128 - K3D2S1C128 - "
          "K3D4S1C128 - K3D8S1C128 - K3D16S1C128 - K3S1C128 - K3S1C128 - resize (2x) - "
          "K3S1C64 - K3S1C64 - resize (2x) - K3S1C32 - K3S1C16 - K3S1C3 - clip")
REFINE_CONV = ("K5S1C32 - K3S2C64 - K3S1C64 - K3S2C128 - K3S1C128 - K3S1C128 - K3D2S1C128 - "
               "K3D4S1C128 - K3D8S1C128 - K3D16S1C128")
REFINE_ATTN = ("K5S1C32 - K3S2C64 - K3S1C64 - K3S2C128 - K3S1C128 - K3S1C128 - "
               "contextual attention layer - K3S1C128 - K3S1C128 - concat")
REFINE_DECODER = ("K3S1C128 - K3S1C128 - resize (2x) - K3S1C64 - K3S1C64 - resize (2x) - "
                  "K3S1C32 - K3S1C16 - K3S1C3 - clip")
GLOBAL_CRITIC = "K5S2C64 - K5S2C128 - K5S2C256 - K5S2C256 - fully-connected to 1"
LOCAL_CRITIC = "K5S2C64 - K5S2C128 - K5S2C256 - K5S2C512 - fully-connected to 1"

IMAGE_CHANNELS = 3
LEAKY_ALPHA = 0.2


class DivergenceError(FloatingPointError):
    """Raised when a forward pass or loss produces NaN/Inf."""


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int
    dilation: int
    channels: int


@dataclass(frozen=True)
class LayerToken:
    kind: str  # resize | clip | attention | concat | fc
    value: int = 0


_CONV_RE = re.compile(r"^K(\d+)(?:D(\d+))?S(\d+)(?:D(\d+))?C(\d+)$")
_RESIZE_RE = re.compile(r"^resize\s*\(\s*(\d+)\s*(?:x|×)\s*\)$")
_FC_RE = re.compile(r"^fully-connected to (\d+)$")


def parse_arch(text):
    """Parse a ``-``-separated layer string into ConvSpec / LayerToken items."""
    layers = []
    for raw in re.split(r"\s+-\s+", text.strip()):
        tok = raw.strip()
        m = _CONV_RE.match(tok)
        if m:
            k, d1, s, d2, c = m.groups()
            if d1 and d2:
                raise ValueError(f"dilation given twice in {tok!r}")
            layers.append(ConvSpec(int(k), int(s), int(d1 or d2 or 1), int(c)))
            continue
        m = _RESIZE_RE.match(tok)
        if m:
            layers.append(LayerToken("resize", int(m.group(1))))
            continue
        m = _FC_RE.match(tok)
        if m:
            layers.append(LayerToken("fc", int(m.group(1))))
            continue
        if tok == "clip":
            layers.append(LayerToken("clip"))
        elif tok == "contextual attention layer":
            layers.append(LayerToken("attention"))
        elif tok == "concat":
            layers.append(LayerToken("concat"))
        else:
            raise ValueError(f"unrecognised layer token {tok!r}")
    return layers


@dataclass
class ArchSpec:
    channel_multiplier: float = 0.25
    image_size: int = 64
    local_size: int = 32
    use_attention: bool = True
    coarse: str = COARSE
    refine_conv: str = REFINE_CONV
    refine_attn: str = REFINE_ATTN
    refine_decoder: str = REFINE_DECODER
    global_critic: str = GLOBAL_CRITIC
    local_critic: str = LOCAL_CRITIC
    attention: AttentionConfig = field(default_factory=lambda: AttentionConfig(downscale_rate=2))

    def width(self, channels, final=False):
        if final:
            return channels
        c = int(round(channels * self.channel_multiplier))
        if c < 4:
            raise ValueError(f"multiplier {self.channel_multiplier} gives {c} < 4 channels")
        return c


def _init_conv(rng, cin, cout, k, dtype):
    bound = np.sqrt(6.0 / (cin * k * k))
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


class ConvStack:
    """Convolutions (with optional resize/clip/attention markers) from a layer string.

    The stack is split at an attention token: ``pre`` runs before the
    attention layer and ``post`` after it.
    """

    def __init__(self, layers, in_channels, spec, rng, dtype, padding, act):
        self.padding = F.PaddingMode(padding)
        self.act = act
        self.items = []
        self.params = OrderedDict()
        convs = [i for i, l in enumerate(layers) if isinstance(l, ConvSpec)]
        last_conv = convs[-1] if convs else -1
        clip_follows = any(isinstance(l, LayerToken) and l.kind == "clip" for l in layers)
        c = in_channels
        for i, layer in enumerate(layers):
            if isinstance(layer, ConvSpec):
                final = clip_follows and i == last_conv
                cout = spec.width(layer.channels, final=final)
                w, b = _init_conv(rng, c, cout, layer.kernel, dtype)
                idx = len(self.params) // 2
                self.params[f"{idx}.w"] = w
                self.params[f"{idx}.b"] = b
                self.items.append(("conv", layer, w, b, not final))
                c = cout
            elif layer.kind == "resize":
                self.items.append(("resize", layer.value))
            elif layer.kind == "clip":
                self.items.append(("clip",))
            elif layer.kind == "attention":
                self.items.append(("attention",))
            elif layer.kind == "concat":
                pass
            else:
                raise ValueError(f"layer {layer} not allowed in a convolution stack")
        self.out_channels = c

    def run(self, x, on_attention=None):
        for item in self.items:
            kind = item[0]
            if kind == "conv":
                _, layer, w, b, activate = item
                dilation = layer.dilation
                if self.padding is F.PaddingMode.REFLECT:
                    dilation = effective_dilation(layer, x.shape[-2:])
                x = F.conv2d(x, w, b, stride=layer.stride, dilation=dilation, padding=self.padding,
                             pad_size=dilation * (layer.kernel // 2))
                if activate:
                    x = self.act(x)
            elif kind == "resize":
                x = F.resize_nearest(x, item[1])
            elif kind == "clip":
                x = F.clip(x, -1.0, 1.0)
            elif kind == "attention":
                x = on_attention(x)
        return x


def effective_dilation(layer, hw):
    """Largest dilation <= the nominal one whose reflect padding fits the map.

    Reflection padding needs pad < size; on small feature maps the widest
    dilations are halved until that holds.
    """
    d = layer.dilation
    half = layer.kernel // 2
    while d > 1 and d * half >= min(hw):
        d //= 2
    return d


def _elu(x):
    return F.elu(x)


def _leaky(x):
    return F.leaky_relu(x, LEAKY_ALPHA)


class Generator:
    """Two-stage inpainting network.

    Stage one maps concat(z, m) to a coarse image. Stage two composes the
    coarse prediction into the hole, then runs a dilated-conv branch and a
    contextual-attention branch in parallel and decodes their concatenated
    features.
    """

    def __init__(self, spec, seed=0, dtype=np.float32):
        self.spec = spec
        rng = np.random.default_rng(seed)
        in_ch = IMAGE_CHANNELS + 1
        pad = F.PaddingMode.REFLECT
        self.coarse = ConvStack(parse_arch(spec.coarse), in_ch, spec, rng, dtype, pad, _elu)
        self.refine_conv = ConvStack(parse_arch(spec.refine_conv), in_ch, spec, rng, dtype, pad, _elu)
        self.refine_attn = ConvStack(parse_arch(spec.refine_attn), in_ch, spec, rng, dtype, pad, _elu)
        dec_in = self.refine_conv.out_channels + self.refine_attn.out_channels
        self.decoder = ConvStack(parse_arch(spec.refine_decoder), dec_in, spec, rng, dtype, pad, _elu)
        for stack in self.stacks().values():
            assert stack.padding is F.PaddingMode.REFLECT
        if any(item[0] == "conv" and item[1].stride > 1 for item in self.decoder.items):
            raise ValueError("decoder may not downsample")
        if self.coarse.out_channels != IMAGE_CHANNELS or self.decoder.out_channels != IMAGE_CHANNELS:
            raise ValueError("generator stages must end in 3 channels")

    def stacks(self):
        return OrderedDict([("coarse", self.coarse), ("refine_conv", self.refine_conv),
                            ("refine_attn", self.refine_attn), ("decoder", self.decoder)])

    def parameters(self):
        out = OrderedDict()
        for name, stack in self.stacks().items():
            for k, v in stack.params.items():
                out[f"{name}.{k}"] = v
        return out

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def downsample_factor(self):
        f = 1
        for item in self.refine_attn.items:
            if item[0] == "attention":
                break
            if item[0] == "conv":
                f *= item[1].stride
        return f

    def forward(self, z, m):
        """Returns (coarse_out, refined_out, attention scores per sample)."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        m_arr = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=z.dtype)
        n, _, H, W = z.shape
        unit = self.downsample_factor() * self.spec.attention.downscale_rate
        if H % unit or W % unit:
            raise ValueError(f"input {H}x{W} must be divisible by {unit}")
        mt = Tensor(np.broadcast_to(m_arr, (n, 1, H, W)).copy())
        coarse = self.coarse.run(concat([z, mt], axis=1))
        x2 = complete(z, coarse, mt)
        x2 = concat([x2, mt], axis=1)
        conv_feat = self.refine_conv.run(x2)
        scores = []

        def attend(feat):
            if not self.spec.use_attention:
                return feat
            f = H // feat.shape[-2]
            mask_feat = downscale_mask(np.broadcast_to(m_arr, (n, 1, H, W)), f)
            out, sc = contextual_attention(feat, feat, mask_feat, self.spec.attention)
            scores.extend(sc)
            return out

        attn_feat = self.refine_attn.run(x2, on_attention=attend)
        refined = self.decoder.run(concat([conv_feat, attn_feat], axis=1))
        for t in (coarse, refined):
            if not np.all(np.isfinite(t.data)):
                raise DivergenceError("generator produced non-finite output")
        return coarse, refined, scores

    __call__ = forward


class Critic:
    """Strided conv stack with leaky ReLU and an affine head to one score."""

    def __init__(self, layers_text, input_size, spec, seed=0, dtype=np.float32, zero_head=False):
        rng = np.random.default_rng(seed)
        layers = parse_arch(layers_text)
        if not layers or not isinstance(layers[-1], LayerToken) or layers[-1].kind != "fc":
            raise ValueError("critic must end with a fully-connected layer")
        convs = layers[:-1]
        for l in convs:
            if not isinstance(l, ConvSpec) or l.stride != 2:
                raise ValueError("critic layers must be stride-2 convolutions")
        self.input_size = input_size
        self.stack = ConvStack(convs, IMAGE_CHANNELS, spec, rng, dtype, F.PaddingMode.ZERO, _leaky)
        assert self.stack.padding is F.PaddingMode.ZERO
        size = input_size
        for l in convs:
            size = (size + 2 * (l.kernel // 2) - l.kernel) // 2 + 1
        self.feature_shape = (self.stack.out_channels, size, size)
        fan_in = int(np.prod(self.feature_shape))
        out = layers[-1].value
        if zero_head:
            w = np.zeros((fan_in, out), dtype=dtype)
        else:
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, out)).astype(dtype)
        self.fc_w = Tensor(w, requires_grad=True)
        self.fc_b = Tensor(np.zeros(out, dtype=dtype), requires_grad=True)

    def parameters(self):
        out = OrderedDict((f"conv.{k}", v) for k, v in self.stack.params.items())
        out["fc.w"] = self.fc_w
        out["fc.b"] = self.fc_b
        return out

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def forward(self, img):
        img = img if isinstance(img, Tensor) else Tensor(img)
        if img.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(f"critic expects {self.input_size}x{self.input_size} input, got {img.shape[-2:]}")
        feat = self.stack.run(img)
        return matmul(F.flatten(feat), self.fc_w) + self.fc_b

    __call__ = forward


def build_generator(spec, seed=0, dtype=np.float32):
    return Generator(spec, seed, dtype)


def build_critics(spec, seed=0, dtype=np.float32, zero_head=False):
    """Global critic on the full image and local critic on the outer-box crop."""
    g = Critic(spec.global_critic, spec.image_size, spec, seed=seed + 1, dtype=dtype, zero_head=zero_head)
    l = Critic(spec.local_critic, spec.local_size, spec, seed=seed + 2, dtype=dtype, zero_head=zero_head)
    return g, l


def critic_forward(critic, img):
    return critic(img)


def generator_forward(g, z, m):
    return g(z, m)


def load_parameters(model, arrays):
    """Copy arrays (name -> ndarray) into the model's parameter tensors."""
    params = model.parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
    for name, p in params.items():
        a = np.asarray(arrays[name])
        if a.shape != p.shape:
            raise ValueError(f"{name}: shape {a.shape} != {p.shape}")
        p.data = a.astype(p.dtype, copy=True)


def receptive_field_growth(layers):
    """One-sided receptive-field growth (input pixels) contributed by a stack."""
    growth, jump = 0, 1
    for l in layers:
        if isinstance(l, ConvSpec):
            growth += l.dilation * (l.kernel // 2) * jump
            jump *= l.stride
    return growth
