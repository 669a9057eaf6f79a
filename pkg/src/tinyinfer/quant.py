"""Asymmetric affine 8-bit quantization and the integer convolution kernel.

Real value represented by a code q is ``scale * (q - zero_point)``. The
calibration range is always widened to include zero, so the conv kernel's
zero padding is exactly representable (a padded position is code
zero_point and contributes nothing to the accumulator).

All rounding is round-half-to-even, everywhere, so results are identical
across platforms and runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError
from .ops import ConvParams, _run_chunked, _valid_out_range
from .tensor import DType, Shape, TensorLike, tensor_new

INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class QuantParams:
    """Affine map between u8 codes and reals: real = scale * (q - zero_point)."""

    scale: float
    zero_point: int

    def __post_init__(self) -> None:
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ArgumentError(f"scale {self.scale} must be positive and finite")
        if not 0 <= self.zero_point <= 255:
            raise ArgumentError(f"zero_point {self.zero_point} outside [0, 255]")

    @property
    def range_lo(self) -> float:
        return self.scale * (0 - self.zero_point)

    @property
    def range_hi(self) -> float:
        return self.scale * (255 - self.zero_point)


@dataclass
class QTensor:
    """An 8-bit tensor plus the affine params that give its codes meaning.

    The storage may be a ChannelSliceView (a fire module's expand branches
    quantize straight into disjoint slices of one shared buffer).
    """

    tensor: TensorLike
    params: QuantParams

    @property
    def shape(self) -> Shape:
        return self.tensor.shape

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def params_for_range(lo: float, hi: float) -> QuantParams:
    """Affine params covering [min(lo,0), max(hi,0)].

    scale = width / 255, zero_point = round(-lo / scale) clamped to [0, 255].
    A zero-width (all-constant-zero) range falls back to scale 1.0 so the
    map stays well defined.
    """
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    width = hi - lo
    if width == 0.0:
        return QuantParams(1.0, int(np.clip(np.rint(-lo), 0, 255)))
    scale = width / 255.0
    zp = int(np.clip(np.rint(-lo / scale), 0, 255))
    return QuantParams(scale, zp)


def choose_quant_params(t: TensorLike) -> QuantParams:
    """Calibrate params from a tensor's own min/max (range widened to hold 0)."""
    if t.dtype is not DType.F32:
        raise ShapeError("calibration runs on F32 tensors")
    data = t.data
    if not np.all(np.isfinite(data)):
        raise ArgumentError("cannot calibrate a tensor with non-finite elements")
    return params_for_range(float(data.min()), float(data.max()))


def quantize_tensor(t: TensorLike, p: QuantParams, out: TensorLike | None = None) -> QTensor:
    """q = clamp(round_half_even(x / scale) + zero_point, 0, 255)."""
    if out is None:
        out = tensor_new(t.shape, DType.U8)
    codes = np.rint(t.data.astype(np.float64) / p.scale) + p.zero_point
    np.clip(codes, 0, 255, out=codes)
    out.data[...] = codes.astype(np.uint8)
    return QTensor(out, p)


def dequantize_tensor(q: QTensor, out: TensorLike | None = None) -> TensorLike:
    """x = scale * (q - zero_point), as F32."""
    if out is None:
        out = tensor_new(q.shape, DType.F32)
    out.data[...] = (
        (q.data.astype(np.float64) - q.params.zero_point) * q.params.scale
    ).astype(np.float32)
    return out


def requantize_tensor(
    q: QTensor, new_params: QuantParams, out: TensorLike | None = None
) -> QTensor:
    """Re-express u8 codes under different affine params.

    q' = clamp(round_half_even(scale*(q - zp) / scale') + zp', 0, 255).
    This is the standalone conversion stage that sits between consecutive
    integer layers; it is deliberately never fused into the convolution.
    """
    if out is None:
        out = tensor_new(q.shape, DType.U8)
    p, np_ = q.params, new_params
    codes = np.rint((q.data.astype(np.float64) - p.zero_point) * (p.scale / np_.scale))
    codes += np_.zero_point
    np.clip(codes, 0, 255, out=codes)
    out.data[...] = codes.astype(np.uint8)
    return QTensor(out, np_)


def qrelu(q: QTensor, in_place: bool = True) -> QTensor:
    """ReLU in the quantized domain: clamp codes at the zero_point."""
    if in_place:
        np.maximum(q.data, np.uint8(q.params.zero_point), out=q.data)
        return q
    out = tensor_new(q.shape, DType.U8)
    np.maximum(q.data, np.uint8(q.params.zero_point), out=out.data)
    return QTensor(out, q.params)


def conv_accumulator_bound(in_channels: int, kernel_h: int, kernel_w: int) -> int:
    """Worst-case |accumulator| before bias: every product at full magnitude."""
    return in_channels * kernel_h * kernel_w * 255 * 255


def check_no_accumulator_overflow(in_channels: int, kernel_h: int, kernel_w: int) -> None:
    """Graph build-time guard: SqueezeNet shapes never get near 2^31."""
    bound = conv_accumulator_bound(in_channels, kernel_h, kernel_w)
    if bound >= INT32_MAX:
        raise ShapeError(
            f"i32 accumulator could overflow: {in_channels}x{kernel_h}x{kernel_w} "
            f"reduction bound {bound} >= 2^31"
        )


def qconv2d(
    input: QTensor,
    weights: QTensor,
    bias: np.ndarray,
    p: ConvParams,
    out_params: QuantParams,
    out: TensorLike | None = None,
    workers: int = 1,
) -> QTensor:
    """Integer convolution: exact i32 accumulation, then requantize to u8.

    acc[o,y,x] = bias[o] + sum (q_in - zp_in)(q_w - zp_w); the output code is
    round_half_even(acc * (scale_in*scale_w/scale_out)) + zp_out, clamped.
    Integer addition is associative, so any worker split is bit-identical.
    """
    if input.tensor.dtype is not DType.U8 or weights.tensor.dtype is not DType.U8:
        raise ShapeError("qconv2d operates on U8 tensors")
    wshape = weights.shape
    if wshape.h != p.kernel_h or wshape.w != p.kernel_w:
        raise ShapeError(f"weight kernel {wshape.h}x{wshape.w} != params {p.kernel_h}x{p.kernel_w}")
    if wshape.c != input.shape.c:
        raise ShapeError(f"weight expects {wshape.c} input channels, got {input.shape.c}")
    check_no_accumulator_overflow(wshape.c, p.kernel_h, p.kernel_w)
    bias = np.asarray(bias, dtype=np.int32).reshape(-1)
    if bias.shape[0] != wshape.n:
        raise ShapeError(f"bias length {bias.shape[0]} != {wshape.n} output channels")
    expected = p.out_shape(input.shape, wshape.n)
    if out is None:
        out = tensor_new(expected, DType.U8)
    elif out.shape.as_tuple() != expected.as_tuple():
        raise ShapeError(f"out shape {out.shape.as_tuple()} != computed {expected.as_tuple()}")

    zp_in = np.int32(input.params.zero_point)
    zp_w = np.int32(weights.params.zero_point)
    multiplier = float(input.params.scale) * float(weights.params.scale) / float(out_params.scale)
    w_i32 = weights.data.astype(np.int32) - zp_w  # (O, C, kh, kw), centered once

    for n in range(input.shape.n):
        x = input.data[n].astype(np.int32) - zp_in  # (C, H, W), centered once
        dst = out.data[n]

        def body(o_lo: int, o_hi: int, x=x, dst=dst) -> None:
            acc = _qconv_accumulate(x, w_i32[o_lo:o_hi], bias[o_lo:o_hi], p, dst.shape[1:])
            codes = np.rint(acc.astype(np.float64) * multiplier) + out_params.zero_point
            np.clip(codes, 0, 255, out=codes)
            dst[o_lo:o_hi] = codes.astype(np.uint8)

        _run_chunked(wshape.n, workers, body)

    return QTensor(out, out_params)


def _qconv_accumulate(
    x: np.ndarray, w: np.ndarray, bias: np.ndarray, p: ConvParams, out_hw: tuple[int, int]
) -> np.ndarray:
    """Exact i32 accumulation for one batch item / output-channel block."""
    C, H, W = x.shape
    OH, OW = out_hw
    s, pad = p.stride, p.pad
    acc = np.empty((w.shape[0], OH, OW), dtype=np.int32)
    acc[:] = bias[:, None, None]
    for c in range(C):
        xc = x[c]
        for i in range(p.kernel_h):
            y0, y1 = _valid_out_range(i, pad, s, H, OH)
            if y1 < y0:
                continue
            ry = slice(y0 * s + i - pad, y1 * s + i - pad + 1, s)
            for j in range(p.kernel_w):
                x0, x1 = _valid_out_range(j, pad, s, W, OW)
                if x1 < x0:
                    continue
                rx = slice(x0 * s + j - pad, x1 * s + j - pad + 1, s)
                acc[:, y0 : y1 + 1, x0 : x1 + 1] += w[:, c, i, j, None, None] * xc[ry, rx]
    return acc


@dataclass
class QConvBinding:
    """Everything a quantized conv layer needs, precomputed at build time:
    u8 weight codes, i32 bias in accumulator units, and the activation
    params on both sides."""

    weights: QTensor
    bias: np.ndarray
    in_params: QuantParams
    out_params: QuantParams


def quantize_weights(w_f32: np.ndarray) -> tuple[np.ndarray, QuantParams]:
    """Per-tensor affine quantization of a weight array."""
    params = params_for_range(float(w_f32.min()), float(w_f32.max()))
    codes = np.rint(w_f32.astype(np.float64) / params.scale) + params.zero_point
    return np.clip(codes, 0, 255).astype(np.uint8), params


def quantize_bias(bias_f32: np.ndarray, scale_in: float, scale_w: float) -> np.ndarray:
    """Bias in accumulator units: round_half_even(b / (scale_in * scale_w))."""
    q = np.rint(bias_f32.astype(np.float64) / (scale_in * scale_w))
    if np.any(np.abs(q) > INT32_MAX):
        raise ShapeError("bias does not fit the i32 accumulator")
    return q.astype(np.int32)
