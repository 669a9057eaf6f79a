"""Independent reference implementations used as oracles by the test suite.

Each optimized kernel in ops/quant has a counterpart here that computes the
same quantity a structurally different way (explicit nested loops, f64 GEMM
lowering, Python big-int accumulation). Nothing in this module shares code
with the kernels it checks.
"""

from __future__ import annotations

import numpy as np

from .ops import ConvParams, WeightTensor
from .tensor import DType, Shape, Tensor, TensorLike, slice_channels, tensor_new


def conv2d_naive(input: TensorLike, w: WeightTensor, p: ConvParams) -> np.ndarray:
    """Brute-force six-loop direct convolution in f64. Slow; small shapes only."""
    n_, C, H, W = input.shape.as_tuple()
    O = w.out_channels
    OH = (H + 2 * p.pad - p.kernel_h) // p.stride + 1
    OW = (W + 2 * p.pad - p.kernel_w) // p.stride + 1
    x = input.data
    wt = w.tensor.data
    out = np.zeros((n_, O, OH, OW), dtype=np.float64)
    for n in range(n_):
        for o in range(O):
            for y in range(OH):
                for xx in range(OW):
                    acc = float(w.bias[o])
                    for c in range(C):
                        for i in range(p.kernel_h):
                            yy = y * p.stride - p.pad + i
                            if yy < 0 or yy >= H:
                                continue
                            for j in range(p.kernel_w):
                                xj = xx * p.stride - p.pad + j
                                if xj < 0 or xj >= W:
                                    continue
                                acc += float(x[n, c, yy, xj]) * float(wt[o, c, i, j])
                    out[n, o, y, xx] = acc
    return out


def conv2d_matmul(input: TensorLike, w: WeightTensor, p: ConvParams) -> np.ndarray:
    """im2col + f64 matrix multiply. Scales to real layer shapes."""
    n_, C, H, W = input.shape.as_tuple()
    O = w.out_channels
    OH = (H + 2 * p.pad - p.kernel_h) // p.stride + 1
    OW = (W + 2 * p.pad - p.kernel_w) // p.stride + 1
    out = np.empty((n_, O, OH, OW), dtype=np.float64)
    wmat = w.tensor.data.reshape(O, -1).astype(np.float64)
    for n in range(n_):
        xp = np.zeros((C, H + 2 * p.pad, W + 2 * p.pad), dtype=np.float64)
        xp[:, p.pad : p.pad + H, p.pad : p.pad + W] = input.data[n]
        cols = np.empty((C * p.kernel_h * p.kernel_w, OH * OW), dtype=np.float64)
        r = 0
        for c in range(C):
            for i in range(p.kernel_h):
                for j in range(p.kernel_w):
                    cols[r] = xp[
                        c, i : i + OH * p.stride : p.stride, j : j + OW * p.stride : p.stride
                    ].ravel()
                    r += 1
        out[n] = (wmat @ cols + w.bias.astype(np.float64)[:, None]).reshape(O, OH, OW)
    return out


def maxpool2d_naive(input: TensorLike, kernel: int, stride: int, pad: int = 0) -> np.ndarray:
    """Window-scan max pooling; padded positions are skipped, never read."""
    n_, C, H, W = input.shape.as_tuple()
    OH = (H + 2 * pad - kernel) // stride + 1
    OW = (W + 2 * pad - kernel) // stride + 1
    out = np.empty((n_, C, OH, OW), dtype=input.data.dtype)
    for n in range(n_):
        for c in range(C):
            for y in range(OH):
                for x in range(OW):
                    vals = []
                    for i in range(kernel):
                        yy = y * stride - pad + i
                        if yy < 0 or yy >= H:
                            continue
                        for j in range(kernel):
                            xj = x * stride - pad + j
                            if xj < 0 or xj >= W:
                                continue
                            vals.append(input.data[n, c, yy, xj])
                    out[n, c, y, x] = max(vals)
    return out


def global_avgpool_f64(input: TensorLike) -> np.ndarray:
    """Extended-precision channel means, shape (n, c)."""
    n_, C = input.shape.n, input.shape.c
    return input.data.reshape(n_, C, -1).astype(np.float64).mean(axis=2)


def softmax_f64(logits: np.ndarray) -> np.ndarray:
    """Extended-precision softmax of a 1-D logit vector."""
    v = np.asarray(logits, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def top_k_by_sort(probs: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Full stable sort of (prob, index) pairs, then take the head."""
    pairs = sorted(enumerate(np.asarray(probs).tolist()), key=lambda t: (-t[1], t[0]))
    return [(i, p) for i, p in pairs[:k]]


def qconv2d_bigint(
    q_in: np.ndarray,
    zp_in: int,
    q_w: np.ndarray,
    zp_w: int,
    bias: np.ndarray,
    p: ConvParams,
) -> np.ndarray:
    """Integer accumulators via Python big ints (no overflow possible).

    Returns the exact (n, O, OH, OW) sum of (q_in - zp_in)(q_w - zp_w)
    products plus bias, as an object array of ints.
    """
    n_, C, H, W = q_in.shape
    O = q_w.shape[0]
    OH = (H + 2 * p.pad - p.kernel_h) // p.stride + 1
    OW = (W + 2 * p.pad - p.kernel_w) // p.stride + 1
    out = np.empty((n_, O, OH, OW), dtype=object)
    for n in range(n_):
        for o in range(O):
            for y in range(OH):
                for x in range(OW):
                    acc = int(bias[o])
                    for c in range(C):
                        for i in range(p.kernel_h):
                            yy = y * p.stride - p.pad + i
                            if yy < 0 or yy >= H:
                                continue  # padded row: real value 0 == code zp_in, adds nothing
                            for j in range(p.kernel_w):
                                xj = x * p.stride - p.pad + j
                                if xj < 0 or xj >= W:
                                    continue
                                d = int(q_in[n, c, yy, xj]) - zp_in
                                acc += d * (int(q_w[o, c, i, j]) - zp_w)
                    out[n, o, y, x] = acc
    return out


def fire_concat_copy(
    input: TensorLike,
    squeeze_w: WeightTensor,
    expand1_w: WeightTensor,
    expand3_w: WeightTensor,
) -> Tensor:
    """Fire module that materializes both expand outputs and copies them
    into a fresh concat buffer: the memory-copy baseline the zero-copy
    implementation is measured against."""
    from .ops import conv2d, relu  # local import keeps module load light

    s = input.shape
    e1, e3 = expand1_w.out_channels, expand3_w.out_channels
    squeezed = tensor_new(Shape(s.n, squeeze_w.out_channels, s.h, s.w), DType.F32)
    conv2d(input, squeeze_w, ConvParams(1, 0, 1, 1), squeezed)
    relu(squeezed, in_place=True)

    branch1 = tensor_new(Shape(s.n, e1, s.h, s.w), DType.F32)
    conv2d(squeezed, expand1_w, ConvParams(1, 0, 1, 1), branch1)
    relu(branch1, in_place=True)
    branch3 = tensor_new(Shape(s.n, e3, s.h, s.w), DType.F32)
    conv2d(squeezed, expand3_w, ConvParams(1, 1, 3, 3), branch3)
    relu(branch3, in_place=True)

    merged = tensor_new(Shape(s.n, e1 + e3, s.h, s.w), DType.F32)
    np.copyto(slice_channels(merged, 0, e1).data, branch1.data)
    np.copyto(slice_channels(merged, e1, e3).data, branch3.data)
    return merged
