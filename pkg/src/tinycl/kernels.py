"""Compiled numeric kernels.

These loops define the arithmetic of the whole package, so their iteration
order is part of the contract, not an implementation detail:

* ``matmul_acc`` accumulates strictly in ascending k for every output element.
  That makes results bit-reproducible across runs, across row-split workers,
  and across tilings that never split the contraction dimension.
* the depthwise kernels accumulate in ascending (ki, kj) kernel order, and the
  scatter kernels (col2im, depthwise backward-error) add overlapping
  contributions in one fixed traversal order.

numba's default IEEE settings are required here: no fastmath, so LLVM cannot
reassociate the sums or contract mul+add into FMA, both of which would change
results in the last bit.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def matmul_acc(a, b, out):
    """out += a @ b, float32, ascending-k accumulation per element."""
    m_dim, k_dim = a.shape
    n_dim = b.shape[1]
    for m in range(m_dim):
        for k in range(k_dim):
            v = a[m, k]
            for n in range(n_dim):
                out[m, n] += v * b[k, n]


@njit(**_JIT)
def im2col_gather(xp, kernel, stride, ho, wo, cols):
    """Gather padded sample xp (C, Hp, Wp) into cols (C*k*k, ho*wo)."""
    c_dim = xp.shape[0]
    for c in range(c_dim):
        for ki in range(kernel):
            for kj in range(kernel):
                row = (c * kernel + ki) * kernel + kj
                for oy in range(ho):
                    ybase = oy * stride + ki
                    for ox in range(wo):
                        cols[row, oy * wo + ox] = xp[c, ybase, ox * stride + kj]


@njit(**_JIT)
def col2im_scatter(cols, kernel, stride, ho, wo, xp):
    """Adjoint of im2col_gather: xp += scatter(cols), fixed traversal order."""
    c_dim = xp.shape[0]
    for c in range(c_dim):
        for ki in range(kernel):
            for kj in range(kernel):
                row = (c * kernel + ki) * kernel + kj
                for oy in range(ho):
                    ybase = oy * stride + ki
                    for ox in range(wo):
                        xp[c, ybase, ox * stride + kj] += cols[row, oy * wo + ox]


@njit(**_JIT)
def dw_forward(xp, w, b, stride, y):
    """Per-channel kxk correlation. xp is (B, C, Hp, Wp) padded, y is (B, C, Ho, Wo)."""
    batch, c_dim, ho, wo = y.shape
    kernel = w.shape[1]
    for s in range(batch):
        for c in range(c_dim):
            for oy in range(ho):
                for ox in range(wo):
                    acc = b[c]
                    for ki in range(kernel):
                        for kj in range(kernel):
                            acc += w[c, ki, kj] * xp[s, c, oy * stride + ki, ox * stride + kj]
                    y[s, c, oy, ox] = acc


@njit(**_JIT)
def dw_backward_error(gy, w, stride, gxp):
    """gxp += scatter of w * gy (adjoint of dw_forward w.r.t. the input)."""
    batch, c_dim, ho, wo = gy.shape
    kernel = w.shape[1]
    for s in range(batch):
        for c in range(c_dim):
            for oy in range(ho):
                for ox in range(wo):
                    g = gy[s, c, oy, ox]
                    for ki in range(kernel):
                        for kj in range(kernel):
                            gxp[s, c, oy * stride + ki, ox * stride + kj] += w[c, ki, kj] * g


@njit(**_JIT)
def dw_backward_grad(gy, xp, stride, dw):
    """dw[c, ki, kj] = sum over batch and output positions, ascending order."""
    batch, c_dim, ho, wo = gy.shape
    kernel = dw.shape[1]
    for c in range(c_dim):
        for ki in range(kernel):
            for kj in range(kernel):
                acc = np.float32(0.0)
                for s in range(batch):
                    for oy in range(ho):
                        for ox in range(wo):
                            acc += gy[s, c, oy, ox] * xp[s, c, oy * stride + ki, ox * stride + kj]
                dw[c, ki, kj] = acc


@njit(**_JIT)
def pack_bits(codes, q_bits, out):
    """Pack non-negative codes (< 2**q_bits) into a little-endian bitstream."""
    bitpos = 0
    for i in range(codes.shape[0]):
        v = np.uint32(codes[i])
        byte = bitpos >> 3
        shift = bitpos & 7
        out[byte] |= np.uint8((v << shift) & 0xFF)
        spill = q_bits + shift - 8
        k = 1
        while spill > 0:
            out[byte + k] |= np.uint8((v >> (8 * k - shift)) & 0xFF)
            spill -= 8
            k += 1
        bitpos += q_bits
    return (bitpos + 7) >> 3


@njit(**_JIT)
def unpack_bits(buf, q_bits, n, codes):
    """Inverse of pack_bits into codes (uint8, length n)."""
    mask = np.uint32((1 << q_bits) - 1)
    bitpos = 0
    for i in range(n):
        byte = bitpos >> 3
        shift = bitpos & 7
        v = np.uint32(buf[byte]) >> shift
        got = 8 - shift
        k = 1
        while got < q_bits:
            v |= np.uint32(buf[byte + k]) << got
            got += 8
            k += 1
        codes[i] = np.uint8(v & mask)
        bitpos += q_bits
