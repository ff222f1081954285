"""Building blocks: DyT, single-head spatial attention, multi-scale
dilated depthwise convolution, the hybrid encoder block, and the
offset-based dynamic 2x upsampler.

Every block is a :class:`Module` owning named parameters and callable
on autodiff values, so the whole network differentiates end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Value
from .errors import ConfigurationError, DimensionError, UnsupportedScaleError
from .tensor import ConvSpec, Tensor


class Module:
    """Minimal parameter container with deterministic traversal order."""

    def parameters(self, trainable_only: bool = False) -> list[Parameter]:
        out: list[Parameter] = []
        self._collect(self, out)
        if trainable_only:
            out = [p for p in out if p.trainable]
        return out

    @staticmethod
    def _collect(obj, out: list[Parameter]) -> None:
        for attr in obj.__dict__.values():
            if isinstance(attr, Parameter):
                out.append(attr)
            elif isinstance(attr, Module):
                Module._collect(attr, out)
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Parameter):
                        out.append(item)
                    elif isinstance(item, Module):
                        Module._collect(item, out)

    def __call__(self, x: Value, training: bool = False) -> Value:
        raise NotImplementedError


def he_normal(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype: str
) -> Tensor:
    std = math.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape), dtype=dtype)


class Conv2d(Module):
    """2-d convolution layer (cross-correlation) with optional bias."""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        dtype: str = "f32",
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
        zero_init: bool = False,
    ):
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"{name}: channels {in_channels}->{out_channels} not divisible "
                f"by groups {groups}"
            )
        self.spec = ConvSpec(stride, padding, dilation, groups)
        wshape = (out_channels, in_channels // groups, kernel, kernel)
        fan_in = (in_channels // groups) * kernel * kernel
        if zero_init:
            w = Tensor(np.zeros(wshape), dtype=dtype)
        else:
            w = he_normal(rng, wshape, fan_in, dtype)
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = (
            Parameter(f"{name}.bias", Tensor(np.zeros(out_channels), dtype=dtype))
            if bias
            else None
        )

    def __call__(self, x: Value, training: bool = False) -> Value:
        b = ad.watch(self.bias) if self.bias is not None else None
        return ad.conv2d(x, ad.watch(self.weight), b, self.spec)


class BatchNorm2d(Module):
    """Per-channel batch normalization with tracked running statistics."""

    def __init__(
        self,
        name: str,
        channels: int,
        dtype: str = "f32",
        momentum: float = 0.1,
        eps: float = 1e-5,
    ):
        self.gamma = Parameter(f"{name}.gamma", Tensor(np.ones(channels), dtype=dtype))
        self.beta = Parameter(f"{name}.beta", Tensor(np.zeros(channels), dtype=dtype))
        self.running_mean = Parameter(
            f"{name}.running_mean", Tensor(np.zeros(channels), dtype=dtype),
            trainable=False,
        )
        self.running_var = Parameter(
            f"{name}.running_var", Tensor(np.ones(channels), dtype=dtype),
            trainable=False,
        )
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Value, training: bool = False) -> Value:
        y, new_mean, new_var = ad.batchnorm2d(
            x,
            ad.watch(self.gamma),
            ad.watch(self.beta),
            self.running_mean.value,
            self.running_var.value,
            training,
            self.momentum,
            self.eps,
        )
        if training:
            self.running_mean.assign(new_mean)
            self.running_var.assign(new_var)
        return y


DYT_ALPHA_INIT = 0.5


class DyT(Module):
    """Learnable tanh normalization: y = gamma_c * tanh(alpha * x) + beta_c.

    ``alpha`` is a single scalar; ``gamma``/``beta`` are per-channel.
    """

    def __init__(self, name: str, channels: int, dtype: str = "f32"):
        self.alpha = Parameter(f"{name}.alpha", Tensor([DYT_ALPHA_INIT], dtype=dtype))
        self.gamma = Parameter(f"{name}.gamma", Tensor(np.ones(channels), dtype=dtype))
        self.beta = Parameter(f"{name}.beta", Tensor(np.zeros(channels), dtype=dtype))
        self.channels = channels

    def __call__(self, x: Value, training: bool = False) -> Value:
        if x.tensor.rank != 4 or x.tensor.shape[1] != self.channels:
            raise DimensionError(
                f"dyt expects [N,{self.channels},H,W], got {x.tensor.shape}"
            )
        t = ad.tanh(ad.mul(x, ad.watch(self.alpha)))
        return ad.add(ad.mul(t, ad.watch(self.gamma)), ad.watch(self.beta))


class SingleHeadAttention(Module):
    """Global self-attention over the H*W spatial tokens of a feature map.

    A norm layer feeds one shared 1x1 conv producing Q, K, V of width
    ``dim`` per token; scores are softmax(Q K^T / sqrt(dim)) over keys.
    A 1x1 output projection maps back only when dim != channels.
    """

    def __init__(
        self,
        name: str,
        channels: int,
        rng: np.random.Generator,
        dtype: str = "f32",
        dim: int | None = None,
        use_dyt: bool = True,
    ):
        d = channels if dim is None else dim
        if d < 1:
            raise ConfigurationError(f"{name}: attention width must be >= 1, got {d}")
        self.dim = d
        self.norm: Module = (
            DyT(f"{name}.norm", channels, dtype)
            if use_dyt
            else BatchNorm2d(f"{name}.norm", channels, dtype)
        )
        self.qkv = Conv2d(f"{name}.qkv", channels, 3 * d, 1, rng, dtype)
        self.proj = (
            Conv2d(f"{name}.proj", d, channels, 1, rng, dtype)
            if d != channels
            else None
        )

    def __call__(self, x: Value, training: bool = False) -> Value:
        n, c, h, w = x.tensor.shape
        d = self.dim
        p = h * w
        z = self.norm(x, training)
        qkv = self.qkv(z)
        q, k, v = ad.split(qkv, 1, [d, d, d])
        q_tok = ad.transpose(ad.reshape(q, (n, d, p)), (0, 2, 1))  # [n,p,d]
        k_map = ad.reshape(k, (n, d, p))  # [n,d,p]
        v_tok = ad.transpose(ad.reshape(v, (n, d, p)), (0, 2, 1))
        scores = ad.scale(ad.matmul(q_tok, k_map), 1.0 / math.sqrt(d))
        attn = ad.softmax(scores, axis=2)
        out = ad.matmul(attn, v_tok)  # [n,p,d]
        out = ad.reshape(ad.transpose(out, (0, 2, 1)), (n, d, h, w))
        if self.proj is not None:
            out = self.proj(out)
        return out


class MultiScaleDilatedConv(Module):
    """Parallel dilated depthwise 3x3 branches summed with the identity,
    then one shared batchnorm. Padding equals each branch's dilation so
    the spatial extents are preserved."""

    def __init__(
        self,
        name: str,
        channels: int,
        rng: np.random.Generator,
        dtype: str = "f32",
        rates: tuple[int, ...] = (1, 2, 3),
    ):
        if not rates or any(r < 1 for r in rates):
            raise ConfigurationError(f"{name}: dilation rates must be positive, got {rates}")
        self.branches = [
            Conv2d(
                f"{name}.branch{r}", channels, channels, 3, rng, dtype,
                padding=r, dilation=r, groups=channels, bias=False,
            )
            for r in rates
        ]
        self.bn = BatchNorm2d(f"{name}.bn", channels, dtype)

    def __call__(self, x: Value, training: bool = False) -> Value:
        s = x
        for branch in self.branches:
            s = ad.add(s, branch(x))
        return self.bn(s, training)


class FeedForward(Module):
    """1x1 expansion -> relu -> 1x1 projection with a residual add."""

    def __init__(
        self,
        name: str,
        channels: int,
        rng: np.random.Generator,
        dtype: str = "f32",
        ratio: float = 4.0,
    ):
        if ratio <= 0:
            raise ConfigurationError(f"{name}: ffn ratio must be positive, got {ratio}")
        hidden = max(1, int(math.floor(ratio * channels + 0.5)))
        self.expand = Conv2d(f"{name}.expand", channels, hidden, 1, rng, dtype)
        self.project = Conv2d(f"{name}.project", hidden, channels, 1, rng, dtype)

    def __call__(self, x: Value, training: bool = False) -> Value:
        return ad.add(x, self.project(ad.relu(self.expand(x))))


@dataclass(frozen=True)
class ShdcConfig:
    """Hyperparameters of one hybrid encoder block."""

    channels: int
    split_ratio: float = 0.5
    dilation_rates: tuple[int, ...] = (1, 2, 3)
    attn_dim: int | None = None
    ffn_ratio: float = 4.0
    use_fusion: bool = True
    use_dyt: bool = True

    def __post_init__(self):
        if self.channels < 2:
            raise ConfigurationError(f"channels must be >= 2, got {self.channels}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError(
                f"split_ratio must lie in (0,1), got {self.split_ratio}"
            )
        if not self.dilation_rates or any(r < 1 for r in self.dilation_rates):
            raise ConfigurationError(
                f"dilation_rates must be positive, got {self.dilation_rates}"
            )
        if self.use_fusion and not 0 < self.global_channels < self.channels:
            raise ConfigurationError(
                f"split {self.split_ratio} of {self.channels} channels leaves "
                f"an empty branch"
            )

    @property
    def global_channels(self) -> int:
        return int(math.floor(self.split_ratio * self.channels + 0.5))


class ShdcBlock(Module):
    """Hybrid encoder block.

    A residual depthwise 3x3 conv feeds (when fusion is enabled) a
    channel split into a global attention path and a local multi-scale
    dilated path, whose concatenation passes a 1x1 fusion conv with a
    residual add; a feed-forward stage closes the block. With fusion
    disabled only the depthwise conv and the feed-forward stage remain.
    """

    def __init__(
        self, name: str, cfg: ShdcConfig, rng: np.random.Generator, dtype: str = "f32"
    ):
        c = cfg.channels
        self.cfg = cfg
        self.pre = Conv2d(f"{name}.pre", c, c, 3, rng, dtype, padding=1, groups=c)
        if cfg.use_fusion:
            cg = cfg.global_channels
            self.attn = SingleHeadAttention(
                f"{name}.attn", cg, rng, dtype, dim=cfg.attn_dim, use_dyt=cfg.use_dyt
            )
            self.local = MultiScaleDilatedConv(
                f"{name}.local", c - cg, rng, dtype, cfg.dilation_rates
            )
            self.fuse = Conv2d(f"{name}.fuse", c, c, 1, rng, dtype)
        self.ffn = FeedForward(f"{name}.ffn", c, rng, dtype, cfg.ffn_ratio)

    def __call__(self, x: Value, training: bool = False) -> Value:
        if x.tensor.shape[1] != self.cfg.channels:
            raise DimensionError(
                f"block expects {self.cfg.channels} channels, got {x.tensor.shape}"
            )
        h = ad.add(x, self.pre(x))
        if self.cfg.use_fusion:
            cg = self.cfg.global_channels
            g_in, l_in = ad.split(h, 1, [cg, self.cfg.channels - cg])
            g_out = self.attn(g_in, training)
            l_out = self.local(l_in, training)
            h = ad.add(h, self.fuse(ad.concat([g_out, l_out], 1)))
        return self.ffn(h, training)


def init_offsets(groups: int, scale: int) -> Tensor:
    """Constant sub-pixel offset lattice for a 2x upsampler.

    Returns [groups, scale*scale, 2] with rows (dx, dy) ordered so row
    k serves output sub-pixel (a, b) = (k % scale, k // scale): output
    pixel (2i + a, 2j + b) samples source coordinate
    (j + dx_k, i + dy_k) when learned offsets are zero.
    """
    if scale != 2:
        raise UnsupportedScaleError(f"only scale factor 2 is supported, got {scale}")
    if groups < 1:
        raise ConfigurationError(f"groups must be >= 1, got {groups}")
    rows = []
    for k in range(scale * scale):
        b, a = divmod(k, scale)
        rows.append(
            [(b + 0.5) / scale - 0.5, (a + 0.5) / scale - 0.5]
        )
    return Tensor(np.tile(np.asarray(rows, dtype=np.float64), (groups, 1, 1)))


_UPSAMPLE_MODES = ("dynamic", "zero_offset", "bilinear")


@dataclass(frozen=True)
class DyFusionUpConfig:
    """Hyperparameters of one dynamic 2x upsampling stage."""

    in_channels: int
    skip_channels: int
    groups: int = 4
    scale: int = 2
    offset_range: float = 0.25
    fuse_dilations: tuple[int, ...] = (1, 2, 3)
    mode: str = "dynamic"

    def __post_init__(self):
        if self.scale != 2:
            raise UnsupportedScaleError(
                f"only scale factor 2 is supported, got {self.scale}"
            )
        if self.groups < 1 or self.in_channels % self.groups:
            raise ConfigurationError(
                f"groups {self.groups} must divide in_channels {self.in_channels}"
            )
        if self.skip_channels < 1:
            raise ConfigurationError("skip_channels must be >= 1")
        if self.mode not in _UPSAMPLE_MODES:
            raise ConfigurationError(
                f"mode must be one of {_UPSAMPLE_MODES}, got {self.mode!r}"
            )

    @property
    def offset_channels(self) -> int:
        return 2 * self.groups * self.scale * self.scale


def _base_lattice(h2: int, w2: int, scale: int, dtype: np.dtype):
    """Pixel-space source coordinates of the static quarter-pixel grid."""
    off = init_offsets(1, scale).data[0]
    jj = np.arange(w2)
    ii = np.arange(h2)
    ux = (jj // scale + off[(jj % scale) * scale, 0]).astype(dtype)
    uy = (ii // scale + off[ii % scale, 1]).astype(dtype)
    grid_x = np.broadcast_to(ux[None, :], (h2, w2))
    grid_y = np.broadcast_to(uy[:, None], (h2, w2))
    return grid_x.reshape(-1), grid_y.reshape(-1)


class DyFusionUp(Module):
    """Dynamic 2x upsampler with skip fusion.

    Pipeline: a zero-initialized 1x1 conv on the low-resolution input
    predicts per-group sub-pixel offsets (rearranged depth-to-space to
    the doubled lattice and scaled by ``offset_range``); each channel
    group is bilinearly sampled at quarter-pixel-plus-offset positions;
    a 1x1 conv aligns the result to the skip width; the skip is
    concatenated in front; a multi-scale dilated stage plus a 3x3 conv
    fuse the pair down to ``skip_channels``.

    With zero offsets the sampling stage equals static 2x bilinear
    upsampling exactly. Modes: "dynamic" learns offsets,
    "zero_offset" keeps the static lattice with no predictor, and
    "bilinear" replaces the sampler with a plain resize.
    """

    def __init__(
        self,
        name: str,
        cfg: DyFusionUpConfig,
        rng: np.random.Generator,
        dtype: str = "f32",
    ):
        self.cfg = cfg
        if cfg.mode == "dynamic":
            # Offset conv output channel (2g + coord)*s*s + a*s + b holds
            # sub-pixel (a, b) of group g's x (coord 0) or y (coord 1) field.
            self.offset = Conv2d(
                f"{name}.offset", cfg.in_channels, cfg.offset_channels, 1,
                rng, dtype, zero_init=True,
            )
        self.align = Conv2d(
            f"{name}.align", cfg.in_channels, cfg.skip_channels, 1, rng, dtype
        )
        self.fuse = MultiScaleDilatedConv(
            f"{name}.fuse", 2 * cfg.skip_channels, rng, dtype, cfg.fuse_dilations
        )
        self.out = Conv2d(
            f"{name}.out", 2 * cfg.skip_channels, cfg.skip_channels, 3, rng, dtype,
            padding=1,
        )

    def offset_fields(self, x_low: Value) -> list[tuple[Value, Value]] | None:
        """Scaled per-group (dx, dy) offset fields on the doubled lattice."""
        if self.cfg.mode != "dynamic":
            return None
        n, _, h, w = x_low.tensor.shape
        s = self.cfg.scale
        raw = self.offset(x_low)  # [n, 2g*s*s, h, w]
        planes = ad.depth_to_space(raw, s)  # [n, 2g, s*h, s*w]
        scaled = ad.scale(planes, self.cfg.offset_range)
        fields = []
        for g in range(self.cfg.groups):
            dx = ad.reshape(ad.narrow(scaled, 1, 2 * g, 1), (n, s * h * s * w))
            dy = ad.reshape(ad.narrow(scaled, 1, 2 * g + 1, 1), (n, s * h * s * w))
            fields.append((dx, dy))
        return fields

    def upsample(self, x_low: Value) -> Value:
        """The sampling stage alone: [N,C',h,w] -> [N,C',2h,2w]."""
        n, c, h, w = x_low.tensor.shape
        s = self.cfg.scale
        h2, w2 = s * h, s * w
        if self.cfg.mode == "bilinear":
            return ad.resize_bilinear(x_low, h2, w2)
        dt = x_low.tensor.data.dtype
        bx, by = _base_lattice(h2, w2, s, dt)
        base_x = np.ascontiguousarray(np.broadcast_to(bx[None, :], (n, h2 * w2)))
        base_y = np.ascontiguousarray(np.broadcast_to(by[None, :], (n, h2 * w2)))
        fields = self.offset_fields(x_low)
        cg = c // self.cfg.groups
        parts = []
        for g in range(self.cfg.groups):
            xg = ad.narrow(x_low, 1, g * cg, cg)
            if fields is None:
                ux = ad.constant(Tensor._wrap(base_x))
                uy = ad.constant(Tensor._wrap(base_y))
            else:
                dx, dy = fields[g]
                ux = ad.add(dx, ad.constant(Tensor._wrap(base_x)))
                uy = ad.add(dy, ad.constant(Tensor._wrap(base_y)))
            sampled = ad.pixel_sample(xg, ux, uy)  # [n, cg, h2*w2]
            parts.append(ad.reshape(sampled, (n, cg, h2, w2)))
        return parts[0] if len(parts) == 1 else ad.concat(parts, 1)

    def __call__(self, x_low: Value, x_skip: Value, training: bool = False) -> Value:
        n, c, h, w = x_low.tensor.shape
        s = self.cfg.scale
        if c != self.cfg.in_channels:
            raise DimensionError(
                f"expected {self.cfg.in_channels} input channels, got {c}"
            )
        expected = (n, self.cfg.skip_channels, s * h, s * w)
        if x_skip.tensor.shape != expected:
            raise DimensionError(
                f"skip shape {x_skip.tensor.shape} != required {expected}"
            )
        up = self.upsample(x_low)
        aligned = self.align(up)
        cat = ad.concat([x_skip, aligned], 1)
        fused = self.fuse(cat, training)
        return self.out(fused)
