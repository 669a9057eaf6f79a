"""Dense N-C-H-W tensors and zero-copy channel-slice views.

Layout is channel-major (N-C-H-W) on purpose: a fire module's two expand
branches can then write disjoint channel ranges of one output buffer, which
is what makes concatenation free. Buffers are numpy arrays; a view never
owns memory and never counts against the allocation tally.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, SizeError

# Anything a compute kernel accepts as a destination.
MAX_ELEMENTS = 2**62


class DType(enum.Enum):
    F32 = "f32"
    U8 = "u8"
    I32 = "i32"

    @property
    def np_dtype(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def itemsize(self) -> int:
        return self.np_dtype.itemsize


_NP_DTYPES = {
    DType.F32: np.dtype("<f4"),
    DType.U8: np.dtype("u1"),
    DType.I32: np.dtype("<i4"),
}


@dataclass(frozen=True)
class Shape:
    """4-D extents: batch, channels, rows, cols. All extents >= 1."""

    n: int
    c: int
    h: int
    w: int

    def __post_init__(self) -> None:
        for name, extent in (("n", self.n), ("c", self.c), ("h", self.h), ("w", self.w)):
            if not isinstance(extent, int) or extent < 1:
                raise SizeError(f"shape extent {name}={extent!r} must be an integer >= 1")
        if self.element_count > MAX_ELEMENTS:
            raise SizeError(f"element count {self.element_count} exceeds index range")

    @property
    def element_count(self) -> int:
        return self.n * self.c * self.h * self.w

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n, self.c, self.h, self.w)


_tally_lock = threading.Lock()
_allocations = 0


def allocation_count() -> int:
    """Number of fresh buffer allocations made via tensor_new so far.

    Slice views and arena views never increment this; the zero-copy and
    zero-allocation claims in the test suite are asserted against it.
    """
    return _allocations


def _count_allocation() -> None:
    global _allocations
    with _tally_lock:
        _allocations += 1


class Tensor:
    """A dense 4-D array plus its dtype tag.

    ``data`` is always a numpy array of shape (n, c, h, w). When
    constructed without a backing array a zeroed buffer is allocated and
    the allocation tally is incremented; wrapping an existing array (the
    arena/view path) is free.
    """

    __slots__ = ("shape", "dtype", "data")

    def __init__(self, shape: Shape, dtype: DType, data: np.ndarray | None = None):
        self.shape = shape
        self.dtype = dtype
        if data is None:
            self.data = np.zeros(shape.as_tuple(), dtype=dtype.np_dtype)
            _count_allocation()
        else:
            if data.shape != shape.as_tuple():
                raise SizeError(f"backing array shape {data.shape} != {shape.as_tuple()}")
            if data.dtype != dtype.np_dtype:
                raise SizeError(f"backing array dtype {data.dtype} != {dtype.np_dtype}")
            self.data = data

    @property
    def stride_c(self) -> int:
        """Element offset between consecutive channels in the owning buffer."""
        return self.data.strides[1] // self.data.itemsize

    def get(self, n: int, c: int, h: int, w: int) -> float | int:
        self._check_index(n, c, h, w)
        return self.data[n, c, h, w].item()

    def set(self, n: int, c: int, h: int, w: int, value: float | int) -> None:
        self._check_index(n, c, h, w)
        self.data[n, c, h, w] = value

    def _check_index(self, n: int, c: int, h: int, w: int) -> None:
        s = self.shape
        if not (0 <= n < s.n and 0 <= c < s.c and 0 <= h < s.h and 0 <= w < s.w):
            raise BoundsError(f"index ({n},{c},{h},{w}) outside shape {s.as_tuple()}")

    def copy(self) -> "Tensor":
        """Materialize an owning copy (counts as an allocation)."""
        t = Tensor(self.shape, self.dtype)
        np.copyto(t.data, self.data)
        return t

    def __repr__(self) -> str:
        return f"Tensor{self.shape.as_tuple()}:{self.dtype.value}"


class ChannelSliceView:
    """A window onto a channel range [offset, offset+count) of a parent tensor.

    Shares the parent's buffer; writes through the view land in the parent.
    """

    __slots__ = ("parent", "channel_offset", "channel_count", "shape", "dtype", "data")

    def __init__(self, parent: Tensor, channel_offset: int, channel_count: int):
        if channel_count < 1 or channel_offset < 0:
            raise BoundsError(
                f"slice ({channel_offset},{channel_count}) must have offset >= 0, count >= 1"
            )
        if channel_offset + channel_count > parent.shape.c:
            raise BoundsError(
                f"slice ({channel_offset},{channel_count}) exceeds "
                f"{parent.shape.c} parent channels"
            )
        self.parent = parent
        self.channel_offset = channel_offset
        self.channel_count = channel_count
        p = parent.shape
        self.shape = Shape(p.n, channel_count, p.h, p.w)
        self.dtype = parent.dtype
        # numpy basic slicing: no copy, no allocation
        self.data = parent.data[:, channel_offset : channel_offset + channel_count]

    @property
    def stride_c(self) -> int:
        return self.data.strides[1] // self.data.itemsize

    def get(self, n: int, c: int, h: int, w: int) -> float | int:
        self._check_index(n, c, h, w)
        return self.data[n, c, h, w].item()

    def set(self, n: int, c: int, h: int, w: int, value: float | int) -> None:
        self._check_index(n, c, h, w)
        self.data[n, c, h, w] = value

    def _check_index(self, n: int, c: int, h: int, w: int) -> None:
        s = self.shape
        if not (0 <= n < s.n and 0 <= c < s.c and 0 <= h < s.h and 0 <= w < s.w):
            raise BoundsError(f"index ({n},{c},{h},{w}) outside view shape {s.as_tuple()}")

    def __repr__(self) -> str:
        return (
            f"ChannelSliceView[{self.channel_offset}:"
            f"{self.channel_offset + self.channel_count}] of {self.parent!r}"
        )


TensorLike = Tensor | ChannelSliceView


def tensor_new(shape: Shape | tuple[int, int, int, int], dtype: DType = DType.F32) -> Tensor:
    """Allocate a zero-initialized tensor. Counted by the allocation tally."""
    if not isinstance(shape, Shape):
        shape = Shape(*shape)
    return Tensor(shape, dtype)


def slice_channels(t: Tensor, offset: int, count: int) -> ChannelSliceView:
    """View channels [offset, offset+count) of ``t`` without copying."""
    return ChannelSliceView(t, offset, count)


def wrap(array: np.ndarray, dtype: DType) -> Tensor:
    """Wrap an existing (n,c,h,w) array as a Tensor without allocating."""
    if array.ndim != 4:
        raise SizeError(f"expected 4-D array, got ndim={array.ndim}")
    return Tensor(Shape(*array.shape), dtype, data=array)
