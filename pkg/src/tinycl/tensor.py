"""Dense FP32 tensors, deterministic matmul, im2col/col2im, and file format.

Tensors are plain C-contiguous ``numpy.ndarray`` of float32; every routine
here validates that instead of wrapping arrays in a class. Layout is row-major
NCHW throughout the package.

Concurrency model: only ``matmul`` is parallel. Workers split the M (output
row) dimension into contiguous blocks; each output element is written by
exactly one worker and accumulated in ascending k, so the result is
bit-identical for every worker count, including 1.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels

DTYPE = np.float32
TENSOR_MAGIC = b"TCLT0001"

_workers = 1
_pool = None


def set_workers(n: int) -> None:
    """Set the matmul row-split worker count (>= 1). Results do not depend on it."""
    global _workers, _pool
    n = int(n)
    if n < 1:
        raise ValueError("worker count must be >= 1")
    if _pool is not None and n != _workers:
        _pool.shutdown(wait=True)
        _pool = None
    _workers = n


def get_workers() -> int:
    return _workers


def _get_pool() -> ThreadPoolExecutor:
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_workers)
    return _pool


def as_f32c(x, name="array") -> np.ndarray:
    """Validate/convert to C-contiguous float32."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[m, n] = sum_k a[m, k] * b[k, n], float32, ascending-k accumulation.

    The k loop order is part of the contract (bit-reproducibility); see
    kernels.matmul_acc. The current worker count splits rows of ``a``.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    a = np.ascontiguousarray(a, DTYPE)
    b = np.ascontiguousarray(b, DTYPE)
    out = np.zeros((a.shape[0], b.shape[1]), DTYPE)
    m_dim = a.shape[0]
    if _workers == 1 or m_dim < 2 * _workers:
        kernels.matmul_acc(a, b, out)
        return out
    # Contiguous row blocks, one per worker; nogil kernels run concurrently.
    bounds = np.linspace(0, m_dim, _workers + 1).astype(int)
    pool = _get_pool()
    futures = [
        pool.submit(kernels.matmul_acc, a[lo:hi], b, out[lo:hi])
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    for f in futures:
        f.result()
    return out


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def pad_sample(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing spatial dims of (..., H, W)."""
    if pad == 0:
        return np.ascontiguousarray(x, DTYPE)
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, widths).astype(DTYPE, copy=False)


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """Patches of one sample x (C, H, W) as columns (C*k*k, Ho*Wo).

    Row index is (c * k + ki) * k + kj; column index is oy * Wo + ox.
    """
    if x.ndim != 3:
        raise ValueError("im2col expects a single (C, H, W) sample")
    c_dim, h, w = x.shape
    ho = conv_out_size(h, kernel, stride, pad)
    wo = conv_out_size(w, kernel, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ValueError("kernel/stride/pad leave no output positions")
    xp = pad_sample(np.ascontiguousarray(x, DTYPE), pad)
    cols = np.empty((c_dim * kernel * kernel, ho * wo), DTYPE)
    kernels.im2col_gather(xp, kernel, stride, ho, wo, cols)
    return cols


def col2im(cols: np.ndarray, c_dim: int, h: int, w: int, kernel: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: overlapping contributions are summed (fixed order)."""
    ho = conv_out_size(h, kernel, stride, pad)
    wo = conv_out_size(w, kernel, stride, pad)
    if cols.shape != (c_dim * kernel * kernel, ho * wo):
        raise ValueError(f"cols shape {cols.shape} does not match geometry")
    xp = np.zeros((c_dim, h + 2 * pad, w + 2 * pad), DTYPE)
    kernels.col2im_scatter(np.ascontiguousarray(cols, DTYPE), kernel, stride, ho, wo, xp)
    if pad == 0:
        return xp
    return np.ascontiguousarray(xp[:, pad:pad + h, pad:pad + w])


# ---------------------------------------------------------------------------
# On-disk tensor container: 8-byte magic, u32 rank, u32 extents, then the
# payload as little-endian float32 in row-major order.
# ---------------------------------------------------------------------------

def save_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, DTYPE)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        if rank == 0 or rank > 8:
            raise ValueError(f"{path}: unsupported rank {rank}")
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes")
    return np.frombuffer(payload, "<f4").reshape(shape).astype(DTYPE)
