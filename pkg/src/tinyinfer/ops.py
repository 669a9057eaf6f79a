"""Compute primitives: direct convolution, ReLU, pooling, softmax, top-k.

The convolution is a direct kernel (no im2col/GEMM lowering): python loops
run over (input-channel, kernel-row, kernel-col) in that fixed order and a
vectorized multiply-accumulate covers all output channels and the full
spatial extent. Every output element therefore accumulates its terms
c-major, then kernel row, then kernel col, the same sequence no matter how
many workers are used, which is what makes threaded runs bit-identical.

Workers parallelize over disjoint output-channel ranges only.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ArgumentError, ShapeError
from .tensor import DType, Shape, Tensor, TensorLike, tensor_new


@dataclass(frozen=True)
class ConvParams:
    """Stride / symmetric zero padding / kernel extents for one convolution."""

    stride: int = 1
    pad: int = 0
    kernel_h: int = 1
    kernel_w: int = 1

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ShapeError(f"stride {self.stride} must be >= 1")
        if self.pad < 0:
            raise ShapeError(f"pad {self.pad} must be >= 0")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError(f"kernel {self.kernel_h}x{self.kernel_w} must be >= 1x1")

    def out_extent(self, in_extent: int, kernel: int) -> int:
        ext = (in_extent + 2 * self.pad - kernel) // self.stride + 1
        if ext < 1:
            raise ShapeError(
                f"kernel {kernel} (stride {self.stride}, pad {self.pad}) leaves "
                f"no output for input extent {in_extent}"
            )
        return ext

    def out_shape(self, in_shape: Shape, out_channels: int) -> Shape:
        return Shape(
            in_shape.n,
            out_channels,
            self.out_extent(in_shape.h, self.kernel_h),
            self.out_extent(in_shape.w, self.kernel_w),
        )


@dataclass
class WeightTensor:
    """Convolution weights (out_ch, in_ch, kh, kw) plus a bias vector."""

    tensor: Tensor
    bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if self.bias.shape[0] != self.out_channels:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != {self.out_channels} output channels"
            )

    @property
    def out_channels(self) -> int:
        return self.tensor.shape.n

    @property
    def in_channels(self) -> int:
        return self.tensor.shape.c


# ---------------------------------------------------------------------------
# worker pool

_pools: dict[int, ThreadPoolExecutor] = {}
_pools_lock = threading.Lock()


def _pool(workers: int) -> ThreadPoolExecutor:
    with _pools_lock:
        pool = _pools.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="tinyinfer")
            _pools[workers] = pool
        return pool


def _channel_chunks(total: int, workers: int) -> list[tuple[int, int]]:
    n = min(workers, total)
    base, extra = divmod(total, n)
    chunks, lo = [], 0
    for k in range(n):
        hi = lo + base + (1 if k < extra else 0)
        chunks.append((lo, hi))
        lo = hi
    return chunks


def _run_chunked(total: int, workers: int, body: Callable[[int, int], None]) -> None:
    """Run body(lo, hi) over disjoint channel ranges, possibly on threads."""
    if workers <= 1 or total == 1:
        body(0, total)
        return
    futures = [_pool(workers).submit(body, lo, hi) for lo, hi in _channel_chunks(total, workers)]
    for f in futures:
        f.result()


# ---------------------------------------------------------------------------
# convolution

def _valid_out_range(k_off: int, pad: int, stride: int, in_extent: int, out_extent: int):
    """Output index range whose input read (y*stride + k_off - pad) is in bounds."""
    lo = max(0, -((pad - k_off) // -stride))  # ceil((pad - k_off) / stride)
    hi = min(out_extent - 1, (in_extent - 1 - k_off + pad) // stride)
    return lo, hi


def conv2d(
    input: TensorLike,
    w: WeightTensor,
    p: ConvParams,
    out: TensorLike,
    workers: int = 1,
) -> None:
    """Direct 2-D convolution with symmetric zero padding, written into ``out``.

    ``out`` may be a ChannelSliceView, in which case only that channel range
    of the underlying buffer is touched (the zero-copy concat path).
    """
    if input.dtype is not DType.F32 or out.dtype is not DType.F32:
        raise ShapeError("conv2d operates on F32 tensors")
    if w.tensor.shape.h != p.kernel_h or w.tensor.shape.w != p.kernel_w:
        raise ShapeError(
            f"weight kernel {w.tensor.shape.h}x{w.tensor.shape.w} != "
            f"params {p.kernel_h}x{p.kernel_w}"
        )
    if w.in_channels != input.shape.c:
        raise ShapeError(f"weight expects {w.in_channels} input channels, got {input.shape.c}")
    expected = p.out_shape(input.shape, w.out_channels)
    if out.shape.as_tuple() != expected.as_tuple():
        raise ShapeError(f"out shape {out.shape.as_tuple()} != computed {expected.as_tuple()}")

    wdata = w.tensor.data  # (O, C, kh, kw)
    bias = w.bias

    for n in range(input.shape.n):
        x = input.data[n]
        dst = out.data[n]

        def body(o_lo: int, o_hi: int, x=x, dst=dst) -> None:
            _conv_plane(x, wdata[o_lo:o_hi], bias[o_lo:o_hi], p, dst[o_lo:o_hi])

        _run_chunked(w.out_channels, workers, body)


def _conv_plane(x: np.ndarray, w: np.ndarray, bias: np.ndarray, p: ConvParams,
                out: np.ndarray) -> None:
    """Accumulate one batch item for a contiguous output-channel block."""
    C, H, W = x.shape
    OH, OW = out.shape[1:]
    s, pad = p.stride, p.pad
    out[:] = bias[:, None, None]
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
                out[:, y0 : y1 + 1, x0 : x1 + 1] += w[:, c, i, j, None, None] * xc[ry, rx]


# ---------------------------------------------------------------------------
# elementwise / pooling / head ops

def relu(t: TensorLike, in_place: bool = False) -> TensorLike:
    """max(x, 0) elementwise; F32 only (the quantized path has its own clamp)."""
    if t.dtype is not DType.F32:
        raise ShapeError("relu operates on F32 tensors")
    if in_place:
        np.maximum(t.data, 0, out=t.data)
        return t
    result = tensor_new(t.shape, DType.F32)
    np.maximum(t.data, 0, out=result.data)
    return result


def maxpool2d(
    input: TensorLike,
    kernel: int,
    stride: int,
    pad: int = 0,
    out: TensorLike | None = None,
    workers: int = 1,
) -> TensorLike:
    """Window max; padded positions never participate in the max.

    Works on F32 and U8 tensors (u8 codes are order-preserving, so pooling
    quantized activations directly is exact).
    """
    if kernel < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"bad pooling params kernel={kernel} stride={stride} pad={pad}")
    if pad >= kernel:
        raise ShapeError(f"pool pad {pad} must be smaller than window {kernel}")
    s = input.shape
    oh = (s.h + 2 * pad - kernel) // stride + 1
    ow = (s.w + 2 * pad - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"pool window {kernel} larger than padded input {s.h}x{s.w}+{pad}")
    out_shape = Shape(s.n, s.c, oh, ow)
    if out is None:
        out = tensor_new(out_shape, input.dtype)
    elif out.shape.as_tuple() != out_shape.as_tuple() or out.dtype is not input.dtype:
        raise ShapeError(f"pool out shape {out.shape.as_tuple()} != {out_shape.as_tuple()}")

    lowest = -np.inf if input.dtype is DType.F32 else 0
    for n in range(s.n):
        x = input.data[n]
        dst = out.data[n]

        def body(c_lo: int, c_hi: int, x=x, dst=dst) -> None:
            blk = dst[c_lo:c_hi]
            blk[:] = lowest
            for i in range(kernel):
                y0, y1 = _valid_out_range(i, pad, stride, s.h, oh)
                if y1 < y0:
                    continue
                ry = slice(y0 * stride + i - pad, y1 * stride + i - pad + 1, stride)
                for j in range(kernel):
                    x0, x1 = _valid_out_range(j, pad, stride, s.w, ow)
                    if x1 < x0:
                        continue
                    rx = slice(x0 * stride + j - pad, x1 * stride + j - pad + 1, stride)
                    np.maximum(
                        blk[:, y0 : y1 + 1, x0 : x1 + 1],
                        x[c_lo:c_hi, ry, rx],
                        out=blk[:, y0 : y1 + 1, x0 : x1 + 1],
                    )

        _run_chunked(s.c, workers, body)
    return out


def global_avgpool(input: TensorLike, out: TensorLike | None = None) -> TensorLike:
    """Mean over the full spatial extent, one value per channel.

    Accumulates in F32 with numpy's fixed pairwise reduction order.
    """
    if input.dtype is not DType.F32:
        raise ShapeError("global_avgpool operates on F32 tensors")
    s = input.shape
    out_shape = Shape(s.n, s.c, 1, 1)
    if out is None:
        out = tensor_new(out_shape, DType.F32)
    elif out.shape.as_tuple() != out_shape.as_tuple():
        raise ShapeError(f"avgpool out shape {out.shape.as_tuple()} != {out_shape.as_tuple()}")
    area = np.float32(s.h * s.w)
    sums = input.data.reshape(s.n, s.c, -1).sum(axis=2, dtype=np.float32)
    out.data[:, :, 0, 0] = sums / area
    return out


def scale(t: TensorLike, coeff: float, out: TensorLike | None = None) -> TensorLike:
    """Multiply every element by a constant coefficient."""
    if not math.isfinite(coeff):
        raise ArgumentError(f"scale coefficient {coeff} must be finite")
    if out is None:
        out = tensor_new(t.shape, t.dtype)
    np.multiply(t.data, np.float32(coeff), out=out.data)
    return out


def softmax(logits: TensorLike, out: TensorLike | None = None) -> TensorLike:
    """Numerically safe softmax over channels of an (n, c, 1, 1) tensor.

    The max logit is subtracted before exponentiation (mandatory; this is
    what makes the op overflow-proof and shift-invariant). Internals run in
    f64; the result is cast to f32.
    """
    s = logits.shape
    if s.h != 1 or s.w != 1:
        raise ShapeError(f"softmax expects (n, c, 1, 1), got {s.as_tuple()}")
    if out is None:
        out = tensor_new(s, DType.F32)
    elif out.shape.as_tuple() != s.as_tuple():
        raise ShapeError(f"softmax out shape {out.shape.as_tuple()} != {s.as_tuple()}")
    for n in range(s.n):
        v = logits.data[n, :, 0, 0].astype(np.float64)
        v -= v.max()
        np.exp(v, out=v)
        v /= v.sum()
        out.data[n, :, 0, 0] = v.astype(np.float32)
    return out


def top_k(probs: TensorLike, k: int) -> list[tuple[int, float]]:
    """Top-k (class_index, prob) pairs, descending; ties go to the lower index."""
    if k < 1:
        raise ArgumentError(f"k={k} must be >= 1")
    s = probs.shape
    if s.h != 1 or s.w != 1:
        raise ShapeError(f"top_k expects (n, c, 1, 1), got {s.as_tuple()}")
    if k > s.c:
        raise ArgumentError(f"k={k} exceeds {s.c} classes")
    v = probs.data[0, :, 0, 0]
    order = np.argsort(-v, kind="stable")[:k]
    return [(int(i), float(v[i])) for i in order]
