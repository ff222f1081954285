"""Dense CPU tensors and the numeric kernels behind every layer.

Tensors are immutable rank-1..4 float arrays; feature maps use NCHW
layout. Kernels are vectorized with numpy but keep a shape discipline
that mirrors the obvious loop nest: convolution walks kernel taps over
strided views, bilinear sampling gathers four neighbours per point.
All operations are deterministic, never mutate their inputs, and
reject non-finite values at construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractError,
    DegenerateStatisticsError,
    DimensionError,
    NumericError,
)

_DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def _np_dtype(dtype: str) -> np.dtype:
    if dtype not in _DTYPES:
        raise ContractError(f"unknown dtype {dtype!r}; expected 'f32' or 'f64'")
    return np.dtype(_DTYPES[dtype])


class Tensor:
    """Immutable dense array, rank 1 to 4, float32 or float64.

    Scalars are represented as shape ``(1,)``. The backing buffer is
    C-contiguous and marked read-only; operations return new tensors.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dtype: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.array(arr, dtype=_np_dtype(dtype), order="C", copy=True)
        elif arr.dtype in (np.float32, np.float64):
            arr = np.array(arr, order="C", copy=True)
        else:
            arr = np.array(arr, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self._data = _validated(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Trusted path for freshly computed kernel outputs: skips the
        # defensive copy but still enforces every invariant.
        t = object.__new__(cls)
        t._data = _validated(np.ascontiguousarray(arr))
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self._data.dtype]

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def astype(self, dtype: str) -> "Tensor":
        return Tensor._wrap(self._data.astype(_np_dtype(dtype)))

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def _validated(arr: np.ndarray) -> np.ndarray:
    if not 1 <= arr.ndim <= 4:
        raise DimensionError(f"rank {arr.ndim} outside supported range 1..4")
    if arr.size == 0:
        raise DimensionError(f"every extent must be >= 1, got shape {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {arr.dtype}")
    if not np.isfinite(arr).all():
        raise NumericError("tensor contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def assert_finite(x: Tensor) -> Tensor:
    """Validation op: returns ``x`` unchanged, raising if non-finite."""
    if not np.isfinite(x.data).all():
        raise NumericError("tensor contains NaN or Inf")
    return x


def zeros(shape: tuple[int, ...], dtype: str = "f32") -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=_np_dtype(dtype)))


def full(shape: tuple[int, ...], value: float, dtype: str = "f32") -> Tensor:
    return Tensor._wrap(np.full(shape, value, dtype=_np_dtype(dtype)))


def _check_same_dtype(*arrays: np.ndarray) -> None:
    first = arrays[0].dtype
    for a in arrays[1:]:
        if a.dtype != first:
            raise ContractError(f"mixed dtypes {first} and {a.dtype}")


# ---------------------------------------------------------------------------
# Convolution


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-d convolution (cross-correlation, no kernel flip)."""

    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise ContractError(f"stride/dilation/groups must be >= 1, got {self}")
        if self.padding < 0:
            raise ContractError(f"padding must be >= 0, got {self}")

    def out_size(self, size: int, k: int) -> int:
        eff = self.dilation * (k - 1) + 1
        out = (size + 2 * self.padding - eff) // self.stride + 1
        if out < 1:
            raise DimensionError(
                f"kernel {k} (dilation {self.dilation}) does not fit input "
                f"extent {size} with padding {self.padding}"
            )
        return out


def _conv2d_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec
) -> np.ndarray:
    n, cin, h, wid = x.shape
    cout, cin_g, kh, kw = w.shape
    g = spec.groups
    ho = spec.out_size(h, kh)
    wo = spec.out_size(wid, kw)
    cout_g = cout // g
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    xg = xp.reshape(n, g, cin_g, xp.shape[2], xp.shape[3])
    wg = w.reshape(g, cout_g, cin_g, kh, kw)
    acc = np.zeros((n, g, ho * wo, cout_g), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            hi = i * spec.dilation
            wi = j * spec.dilation
            patch = xg[
                :,
                :,
                :,
                hi : hi + spec.stride * (ho - 1) + 1 : spec.stride,
                wi : wi + spec.stride * (wo - 1) + 1 : spec.stride,
            ]
            # [n,g,P,cin_g] @ [g,cin_g,cout_g] -> [n,g,P,cout_g]
            pm = patch.reshape(n, g, cin_g, ho * wo).transpose(0, 1, 3, 2)
            acc += np.matmul(pm, wg[:, :, :, i, j].transpose(0, 2, 1))
    y = acc.transpose(0, 1, 3, 2).reshape(n, cout, ho, wo)
    if b is not None:
        y = y + b.reshape(1, cout, 1, 1)
    return y


def _conv2d_vjp(
    x: np.ndarray,
    w: np.ndarray,
    spec: ConvSpec,
    gy: np.ndarray,
    with_bias: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    n, cin, h, wid = x.shape
    cout, cin_g, kh, kw = w.shape
    g = spec.groups
    cout_g = cout // g
    _, _, ho, wo = gy.shape
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    xg = xp.reshape(n, g, cin_g, xp.shape[2], xp.shape[3])
    wg = w.reshape(g, cout_g, cin_g, kh, kw)
    gyg = gy.reshape(n, g, cout_g, ho * wo).transpose(0, 1, 3, 2)  # [n,g,P,cout_g]
    gxp = np.zeros_like(xp).reshape(n, g, cin_g, xp.shape[2], xp.shape[3])
    gw = np.zeros_like(w).reshape(g, cout_g, cin_g, kh, kw)
    for i in range(kh):
        for j in range(kw):
            hi = i * spec.dilation
            wi = j * spec.dilation
            sl_h = slice(hi, hi + spec.stride * (ho - 1) + 1, spec.stride)
            sl_w = slice(wi, wi + spec.stride * (wo - 1) + 1, spec.stride)
            patch = xg[:, :, :, sl_h, sl_w]
            pm = patch.reshape(n, g, cin_g, ho * wo)  # [n,g,cin_g,P]
            # weight grad: sum_n  [g,cin_g,P] @ [g,P,cout_g]
            gw[:, :, :, i, j] += np.matmul(pm, gyg).sum(axis=0).transpose(0, 2, 1)
            # input grad: [n,g,P,cout_g] @ [g,cout_g,cin_g] -> [n,g,P,cin_g]
            gpatch = np.matmul(gyg, wg[:, :, :, i, j])
            gxp[:, :, :, sl_h, sl_w] += gpatch.transpose(0, 1, 3, 2).reshape(
                n, g, cin_g, ho, wo
            )
    gxp = gxp.reshape(n, cin, xp.shape[2], xp.shape[3])
    gx = gxp[:, :, p : p + h, p : p + wid] if p else gxp
    gb = gy.sum(axis=(0, 2, 3)) if with_bias else None
    return np.ascontiguousarray(gx), gw.reshape(cout, cin_g, kh, kw), gb


def conv2d(
    x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec
) -> Tensor:
    """Grouped, dilated 2-d cross-correlation over an NCHW batch.

    ``weight`` has shape [out_channels, in_channels/groups, kh, kw];
    ``bias`` is per-output-channel or None.
    """
    _check_conv_args(x, weight, bias, spec)
    b = bias.data if bias is not None else None
    return Tensor._wrap(_conv2d_forward(x.data, weight.data, b, spec))


def _check_conv_args(
    x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec
) -> None:
    if x.rank != 4:
        raise DimensionError(f"conv2d input must be rank 4, got {x.shape}")
    if weight.rank != 4:
        raise DimensionError(f"conv2d weight must be rank 4, got {weight.shape}")
    cout, cin_g, _, _ = weight.shape
    cin = x.shape[1]
    if cin % spec.groups or cout % spec.groups:
        raise DimensionError(
            f"channels in={cin} out={cout} not divisible by groups {spec.groups}"
        )
    if cin_g != cin // spec.groups:
        raise DimensionError(
            f"weight expects {cin_g} channels per group, input provides "
            f"{cin // spec.groups}"
        )
    arrays = [x.data, weight.data]
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
        arrays.append(bias.data)
    _check_same_dtype(*arrays)


# ---------------------------------------------------------------------------
# Matmul / softmax


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of rank-2 or batched rank-3 operands."""
    _check_matmul_args(a, b)
    return Tensor._wrap(np.matmul(a.data, b.data))


def _check_matmul_args(a: Tensor, b: Tensor) -> None:
    if a.rank not in (2, 3) or b.rank not in (2, 3):
        raise DimensionError(f"matmul supports rank 2/3, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dims differ: {a.shape} @ {b.shape}")
    if a.rank == 3 and b.rank == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"batch dims differ: {a.shape} @ {b.shape}")
    _check_same_dtype(a.data, b.data)


def _softmax_forward(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=axis, keepdims=True, dtype=np.float64)
    return (e / s).astype(x.dtype)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis (max-subtracted)."""
    if not -x.rank <= axis < x.rank:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return Tensor._wrap(_softmax_forward(x.data, axis))


# ---------------------------------------------------------------------------
# Batch normalization


def _bn_batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    var = np.square(x - mean.reshape(1, -1, 1, 1)).mean(axis=(0, 2, 3), dtype=np.float64)
    return mean.astype(x.dtype), var.astype(x.dtype), m


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple[Tensor, Tensor, Tensor]:
    """Per-channel batch normalization over an NCHW batch.

    Training mode normalizes with biased batch statistics and returns
    running statistics advanced by ``(1-momentum)*old + momentum*new``
    (the running variance uses the unbiased estimate). Eval mode
    normalizes with the running statistics and returns them unchanged.
    """
    if x.rank != 4:
        raise DimensionError(f"batchnorm2d input must be rank 4, got {x.shape}")
    c = x.shape[1]
    for name, t in (
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ):
        if t.shape != (c,):
            raise DimensionError(f"{name} shape {t.shape} != ({c},)")
    _check_same_dtype(x.data, gamma.data, beta.data, running_mean.data, running_var.data)
    if training:
        mean, var, m = _bn_batch_stats(x.data)
        if m == 1:
            raise DegenerateStatisticsError(
                "batch statistics over a single element (N*H*W == 1)"
            )
        xhat = (x.data - mean.reshape(1, c, 1, 1)) / np.sqrt(
            var.reshape(1, c, 1, 1) + x.data.dtype.type(eps)
        )
        unbiased = var * (m / (m - 1))
        new_mean = (1.0 - momentum) * running_mean.data + momentum * mean
        new_var = (1.0 - momentum) * running_var.data + momentum * unbiased
        y = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
        return (
            Tensor._wrap(y.astype(x.data.dtype)),
            Tensor._wrap(new_mean.astype(x.data.dtype)),
            Tensor._wrap(new_var.astype(x.data.dtype)),
        )
    xhat = (x.data - running_mean.data.reshape(1, c, 1, 1)) / np.sqrt(
        running_var.data.reshape(1, c, 1, 1) + x.data.dtype.type(eps)
    )
    y = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    return Tensor._wrap(y.astype(x.data.dtype)), running_mean, running_var


# ---------------------------------------------------------------------------
# Bilinear sampling

# Convention: pixel i of an extent-S axis sits at continuous coordinate i,
# and normalized coordinate (2*i + 1)/S - 1, so the normalized range [-1, 1]
# spans the outer pixel edges. Out-of-range points clamp to the border and
# contribute zero gradient to the coordinates.


def _pixel_coords(g: np.ndarray, size: int) -> np.ndarray:
    return (g + 1.0) * (size / 2.0) - 0.5


def _gather(x3: np.ndarray, yy: np.ndarray, xx: np.ndarray, w: int) -> np.ndarray:
    # x3: [n, c, h*w]; yy/xx: [n, p] int -> [n, c, p]
    idx = (yy * w + xx)[:, None, :]
    return np.take_along_axis(x3, np.broadcast_to(idx, (x3.shape[0], x3.shape[1], idx.shape[2])), axis=2)


def _sample_setup(ux: np.ndarray, uy: np.ndarray, h: int, w: int):
    ucx = np.clip(ux, 0.0, w - 1.0)
    ucy = np.clip(uy, 0.0, h - 1.0)
    x0 = np.clip(np.floor(ucx), 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(ucy), 0, max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (ucx - x0).astype(ux.dtype)
    fy = (ucy - y0).astype(uy.dtype)
    return x0, x1, y0, y1, fx, fy


def _sample_pixel_forward(
    x: np.ndarray, ux: np.ndarray, uy: np.ndarray
) -> np.ndarray:
    """Bilinear gather. x: [n,c,h,w]; ux/uy: [n,p] pixel coords -> [n,c,p]."""
    n, c, h, w = x.shape
    x0, x1, y0, y1, fx, fy = _sample_setup(ux, uy, h, w)
    x3 = x.reshape(n, c, h * w)
    v00 = _gather(x3, y0, x0, w)
    v01 = _gather(x3, y0, x1, w)
    v10 = _gather(x3, y1, x0, w)
    v11 = _gather(x3, y1, x1, w)
    fx = fx[:, None, :]
    fy = fy[:, None, :]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def _scatter_add_2d(gx3: np.ndarray, yy: np.ndarray, xx: np.ndarray, vals: np.ndarray, w: int) -> None:
    # gx3: [n, c, h*w] writable; vals: [n, c, p]
    n, c, hw = gx3.shape
    p = yy.shape[1]
    flat_pos = (yy * w + xx)[:, None, :]  # [n,1,p]
    base = (np.arange(n * c, dtype=np.int64) * hw).reshape(n, c, 1)
    idx = (base + flat_pos).ravel()
    acc = np.bincount(idx, weights=vals.ravel(), minlength=n * c * hw)
    gx3 += acc.reshape(n, c, hw).astype(gx3.dtype)


def _sample_pixel_vjp(
    x: np.ndarray, ux: np.ndarray, uy: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, c, h, w = x.shape
    x0, x1, y0, y1, fx, fy = _sample_setup(ux, uy, h, w)
    x3 = x.reshape(n, c, h * w)
    fxb = fx[:, None, :]
    fyb = fy[:, None, :]
    w00 = (1.0 - fxb) * (1.0 - fyb)
    w01 = fxb * (1.0 - fyb)
    w10 = (1.0 - fxb) * fyb
    w11 = fxb * fyb
    gx = np.zeros_like(x3)
    _scatter_add_2d(gx, y0, x0, gy * w00, w)
    _scatter_add_2d(gx, y0, x1, gy * w01, w)
    _scatter_add_2d(gx, y1, x0, gy * w10, w)
    _scatter_add_2d(gx, y1, x1, gy * w11, w)
    v00 = _gather(x3, y0, x0, w)
    v01 = _gather(x3, y0, x1, w)
    v10 = _gather(x3, y1, x0, w)
    v11 = _gather(x3, y1, x1, w)
    dval_du = (1.0 - fyb) * (v01 - v00) + fyb * (v11 - v10)
    dval_dv = (1.0 - fxb) * (v10 - v00) + fxb * (v11 - v01)
    in_x = ((ux >= 0.0) & (ux <= w - 1.0)).astype(x.dtype)
    in_y = ((uy >= 0.0) & (uy <= h - 1.0)).astype(x.dtype)
    gux = (gy * dval_du).sum(axis=1) * in_x
    guy = (gy * dval_dv).sum(axis=1) * in_y
    return gx.reshape(n, c, h, w), gux, guy


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Sample ``x`` at normalized grid points.

    ``grid`` has shape [N, H', W', 2] with (gx, gy) in [-1, 1] mapping to
    the outer pixel edges; returns [N, C, H', W'].
    """
    _check_sample_args(x, grid)
    n, c, h, w = x.shape
    oh, ow = grid.shape[1], grid.shape[2]
    g2 = grid.data.reshape(n, oh * ow, 2)
    ux = np.ascontiguousarray(_pixel_coords(g2[:, :, 0], w))
    uy = np.ascontiguousarray(_pixel_coords(g2[:, :, 1], h))
    y = _sample_pixel_forward(x.data, ux, uy)
    return Tensor._wrap(y.reshape(n, c, oh, ow))


def _check_sample_args(x: Tensor, grid: Tensor) -> None:
    if x.rank != 4:
        raise DimensionError(f"sample input must be rank 4, got {x.shape}")
    if grid.rank != 4 or grid.shape[3] != 2:
        raise DimensionError(f"grid must be [N,H',W',2], got {grid.shape}")
    if grid.shape[0] != x.shape[0]:
        raise DimensionError(
            f"grid batch {grid.shape[0]} != input batch {x.shape[0]}"
        )
    _check_same_dtype(x.data, grid.data)


def _resize_coords(out_size: int, in_size: int, dtype: np.dtype) -> np.ndarray:
    j = np.arange(out_size, dtype=dtype)
    return (j + dtype.type(0.5)) * (in_size / out_size) - dtype.type(0.5)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize an NCHW batch with edge-aligned-to-pixel-centers bilinear."""
    if x.rank != 4:
        raise DimensionError(f"resize input must be rank 4, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output extents must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return Tensor._wrap(x.data.copy())
    ux1 = _resize_coords(out_w, w, x.data.dtype)
    uy1 = _resize_coords(out_h, h, x.data.dtype)
    ux = np.broadcast_to(ux1[None, None, :], (n, out_h, out_w)).reshape(n, -1)
    uy = np.broadcast_to(uy1[None, :, None], (n, out_h, out_w)).reshape(n, -1)
    y = _sample_pixel_forward(x.data, np.ascontiguousarray(ux), np.ascontiguousarray(uy))
    return Tensor._wrap(y.reshape(n, c, out_h, out_w))


# ---------------------------------------------------------------------------
# Channel/space rearrangement


def _depth_to_space_forward(x: np.ndarray, s: int) -> np.ndarray:
    n, cs2, h, w = x.shape
    c = cs2 // (s * s)
    return (
        x.reshape(n, c, s, s, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c, h * s, w * s)
    )


def _space_to_depth_forward(y: np.ndarray, s: int) -> np.ndarray:
    n, c, hs, ws = y.shape
    h, w = hs // s, ws // s
    return (
        y.reshape(n, c, h, s, w, s)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * s * s, h, w)
    )


def depth_to_space(x: Tensor, s: int) -> Tensor:
    """Rearrange [N, C*s*s, H, W] to [N, C, s*H, s*W].

    Output pixel (s*i + a, s*j + b) of channel c reads input channel
    c*s*s + a*s + b at (i, j).
    """
    if x.rank != 4:
        raise DimensionError(f"depth_to_space input must be rank 4, got {x.shape}")
    if s < 1 or x.shape[1] % (s * s):
        raise DimensionError(
            f"channel count {x.shape[1]} not divisible by {s}*{s}"
        )
    return Tensor._wrap(_depth_to_space_forward(x.data, s))


# ---------------------------------------------------------------------------
# Elementwise ops

# Binary ops accept a same-shape tensor, a scalar tensor of shape (1,), a
# per-channel vector [C] against an NCHW operand, or a Python number.


def _broadcast_other(x: np.ndarray, other) -> np.ndarray:
    if isinstance(other, Tensor):
        o = other.data
        if o.shape == x.shape or o.shape == (1,):
            _check_same_dtype(x, o)
            return o
        if x.ndim == 4 and o.ndim == 1 and o.shape[0] == x.shape[1]:
            _check_same_dtype(x, o)
            return o.reshape(1, -1, 1, 1)
        raise DimensionError(
            f"cannot broadcast operand {o.shape} against {x.shape}"
        )
    if isinstance(other, (int, float)):
        return x.dtype.type(other)
    raise ContractError(f"unsupported operand type {type(other).__name__}")


def add(x: Tensor, other) -> Tensor:
    return Tensor._wrap(x.data + _broadcast_other(x.data, other))


def sub(x: Tensor, other) -> Tensor:
    return Tensor._wrap(x.data - _broadcast_other(x.data, other))


def mul(x: Tensor, other) -> Tensor:
    return Tensor._wrap(x.data * _broadcast_other(x.data, other))


def scale(x: Tensor, s: float) -> Tensor:
    return Tensor._wrap(x.data * x.data.dtype.type(s))


def tanh(x: Tensor) -> Tensor:
    return Tensor._wrap(np.tanh(x.data))


def _sigmoid_forward(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)


def sigmoid(x: Tensor) -> Tensor:
    return Tensor._wrap(_sigmoid_forward(x.data))


def relu(x: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(x.data, 0))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(x: Tensor, op: str, other=None) -> Tensor:
    """Dispatch an elementwise op by name; see the named functions."""
    if op not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise op {op!r}")
    fn = _ELEMENTWISE[op]
    if op in ("add", "sub", "mul", "scale"):
        return fn(x, other)
    if other is not None:
        raise ContractError(f"op {op!r} takes no second operand")
    return fn(x)


# ---------------------------------------------------------------------------
# Structure ops


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ContractError("concat of zero tensors")
    rank = parts[0].rank
    if not -rank <= axis < rank:
        raise DimensionError(f"axis {axis} out of range for rank {rank}")
    axis %= rank
    for t in parts[1:]:
        if t.rank != rank:
            raise DimensionError("concat operands differ in rank")
        for ax in range(rank):
            if ax != axis and t.shape[ax] != parts[0].shape[ax]:
                raise DimensionError(
                    f"concat shapes {parts[0].shape} and {t.shape} differ off-axis"
                )
    _check_same_dtype(*[t.data for t in parts])
    return Tensor._wrap(np.concatenate([t.data for t in parts], axis=axis))


def narrow(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of ``size`` entries from ``start`` along ``axis``."""
    if not -x.rank <= axis < x.rank:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    axis %= x.rank
    if start < 0 or size < 1 or start + size > x.shape[axis]:
        raise DimensionError(
            f"slice [{start}:{start + size}) exceeds extent {x.shape[axis]}"
        )
    sl = [slice(None)] * x.rank
    sl[axis] = slice(start, start + size)
    return Tensor._wrap(x.data[tuple(sl)].copy())


def split(x: Tensor, axis: int, sizes: list[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(
            f"split sizes {sizes} do not sum to extent {x.shape[axis]}"
        )
    out = []
    start = 0
    for s in sizes:
        out.append(narrow(x, axis, start, s))
        start += s
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.size or any(s < 1 for s in shape):
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    return Tensor._wrap(x.data.reshape(shape))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(x.rank)):
        raise DimensionError(f"axes {axes} is not a permutation of rank {x.rank}")
    return Tensor._wrap(np.ascontiguousarray(x.data.transpose(axes)))


def sum_all(x: Tensor) -> Tensor:
    return Tensor._wrap(
        np.asarray([np.sum(x.data, dtype=np.float64)], dtype=x.data.dtype)
    )


def mean_all(x: Tensor) -> Tensor:
    return Tensor._wrap(
        np.asarray([np.sum(x.data, dtype=np.float64) / x.size], dtype=x.data.dtype)
    )
