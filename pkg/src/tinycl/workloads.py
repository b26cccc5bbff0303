"""Layer-step workloads for the tile planner and cost model.

Each trainable layer contributes three steps (forward, backward-error,
backward-grad), and each step is described as a tileable computation with a
row axis (output channels), a column axis (spatial positions or input
channels), and a contraction axis that the planner never splits. The same
descriptor drives byte/MAC pricing and the per-tile numerical execution used
to prove tiled == untiled.

The module also carries the reference network: the tail of a width-1.0
depthwise-separable ImageNet-style backbone on 128x128 inputs, whose replay
point choices (layer 19 through 27) are the shapes the cost model prices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import DTYPE, matmul, pad_sample

STEPS = ("fw", "bw_err", "bw_grad")


@dataclass(frozen=True)
class LayerStepWork:
    """One layer-step: tiling domain (rows x cols), byte and MAC pricing.

    pw/linear steps are matmuls with contraction k; dw steps tile channels
    only (the spatial extent stays whole, cols == 1).
    """

    name: str
    kind: str
    step: str
    rows: int
    cols: int
    k: int = 0
    channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    h_in: int = 0
    w_in: int = 0
    h_out: int = 0
    w_out: int = 0

    def macs(self, mt: int, nt: int) -> int:
        if self.kind == "dw":
            return mt * self.kernel * self.kernel * self.h_out * self.w_out
        return mt * nt * self.k

    def total_macs(self) -> int:
        return self.macs(self.rows, self.cols)

    def read_bytes(self, mt: int, nt: int) -> int:
        if self.kind == "dw":
            per = {
                "fw": self.h_in * self.w_in + self.kernel ** 2 + 1,
                "bw_err": self.h_out * self.w_out + self.kernel ** 2,
                "bw_grad": self.h_out * self.w_out + self.h_in * self.w_in,
            }[self.step]
            return 4 * mt * per
        bias = mt if (self.kind in ("pw", "linear") and self.step == "fw") else 0
        return 4 * (mt * self.k + self.k * nt + bias)

    def write_bytes(self, mt: int, nt: int) -> int:
        if self.kind == "dw":
            per = {
                "fw": self.h_out * self.w_out,
                "bw_err": self.h_in * self.w_in,
                "bw_grad": self.kernel ** 2 + 1,
            }[self.step]
            return 4 * mt * per
        db = mt if self.step == "bw_grad" else 0
        return 4 * (mt * nt + db)

    def footprints(self, mt: int, nt: int, strided_dma: bool = True) -> dict:
        """L1 bytes of each operand for one tile. DW maps sit padded in L1;
        without 2D-strided DMA an explicit im2col buffer joins the patch-
        gathering steps (fw, bw_grad)."""
        if self.kind == "dw":
            padded = (self.h_in + 2 * self.pad) * (self.w_in + 2 * self.pad)
            out = self.h_out * self.w_out
            ksq = self.kernel ** 2
            f = {
                "fw": {"input map": padded, "weights": ksq + 1, "output map": out},
                "bw_err": {"gradient map": out, "weights": ksq, "output map": padded},
                "bw_grad": {"gradient map": out, "input map": padded,
                            "weight gradient": ksq + 1},
            }[self.step]
            f = {name: 4 * mt * v for name, v in f.items()}
            if not strided_dma and self.step in ("fw", "bw_grad"):
                f["im2col buffer"] = 4 * mt * ksq * out
            return f
        if self.step == "fw":
            return {"weights": 4 * mt * self.k, "input": 4 * self.k * nt,
                    "bias": 4 * mt, "output": 4 * mt * nt}
        if self.step == "bw_err":
            return {"weights": 4 * mt * self.k, "gradient": 4 * self.k * nt,
                    "output": 4 * mt * nt}
        return {"gradient": 4 * mt * self.k, "input": 4 * nt * self.k,
                "weight gradient": 4 * (mt * nt + mt)}

    def ws_bytes(self, mt: int, nt: int, strided_dma: bool = True) -> int:
        """Total L1 working set of one tile in bytes."""
        return sum(self.footprints(mt, nt, strided_dma).values())


def _spatial(h: int, w: int, kernel: int, stride: int, pad: int):
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    return ho, wo


def pw_works(name, cin, cout, h, w):
    p = h * w
    return [
        LayerStepWork(f"{name}.fw", "pw", "fw", cout, p, cin),
        LayerStepWork(f"{name}.bw_err", "pw", "bw_err", cin, p, cout),
        LayerStepWork(f"{name}.bw_grad", "pw", "bw_grad", cout, cin, p),
    ]


def dw_works(name, channels, h, w, kernel=3, stride=1, pad=1):
    ho, wo = _spatial(h, w, kernel, stride, pad)
    common = dict(channels=channels, kernel=kernel, stride=stride, pad=pad,
                  h_in=h, w_in=w, h_out=ho, w_out=wo)
    return [
        LayerStepWork(f"{name}.{s}", "dw", s, channels, 1, **common)
        for s in STEPS
    ]


def linear_works(name, cin, cout):
    return [
        LayerStepWork(f"{name}.fw", "linear", "fw", cout, 1, cin),
        LayerStepWork(f"{name}.bw_err", "linear", "bw_err", cin, 1, cout),
        LayerStepWork(f"{name}.bw_grad", "linear", "bw_grad", cout, cin, 1),
    ]


# ---------------------------------------------------------------------------
# Reference tail: layers 19..27 of the width-1.0 backbone on 128x128 inputs.
# Feature maps are 8x8 deep in the network, halving to 4x4 at layer 23.
# ---------------------------------------------------------------------------

TAIL_SHAPES = {
    19: ("dw", 512, 512, 8, 8, 1),
    20: ("pw", 512, 512, 8, 8, 1),
    21: ("dw", 512, 512, 8, 8, 1),
    22: ("pw", 512, 512, 8, 8, 1),
    23: ("dw", 512, 512, 8, 8, 2),
    24: ("pw", 512, 1024, 4, 4, 1),
    25: ("dw", 1024, 1024, 4, 4, 1),
    26: ("pw", 1024, 1024, 4, 4, 1),
    27: ("linear", 1024, 50, 1, 1, 1),
}

# Latent vector elements when the replay point is set to each layer: the
# stage output for 19..26, the pooled feature vector ahead of the classifier
# for 27.
LR_ELEMS = {
    19: 32768, 20: 32768, 21: 32768, 22: 32768,
    23: 8192, 24: 16384, 25: 16384, 26: 16384, 27: 1024,
}

# Per-layer coefficient counts (weights + biases) of the full backbone,
# indexed 0 (stem conv) through 27 (classifier); used for frozen-stage
# memory accounting at 1 B per 8-bit coefficient.
BACKBONE_COEFFS = {
    0: 896,
    1: 320, 2: 2112,
    3: 640, 4: 8320,
    5: 1280, 6: 16512,
    7: 1280, 8: 33024,
    9: 2560, 10: 65792,
    11: 2560, 12: 131584,
    13: 5120, 14: 262656,
    15: 5120, 16: 262656,
    17: 5120, 18: 262656,
    19: 5120, 20: 262656,
    21: 5120, 22: 262656,
    23: 5120, 24: 525312,
    25: 10240, 26: 1049600,
    27: 51250,
}


def tail_layer_works(index: int) -> list:
    kind, cin, cout, h, w, stride = TAIL_SHAPES[index]
    name = f"l{index}"
    if kind == "pw":
        return pw_works(name, cin, cout, h, w)
    if kind == "dw":
        return dw_works(name, cin, h, w, stride=stride)
    return linear_works(name, cin, cout)


def adaptive_layer_indices(lr_layer: int) -> list:
    """Layers retrained when the replay point is lr_layer: everything after
    it, or just the classifier when the replay point is the classifier's own
    input."""
    if lr_layer not in TAIL_SHAPES:
        raise ValueError(f"replay point {lr_layer} outside the priced tail")
    return [27] if lr_layer == 27 else list(range(lr_layer + 1, 28))


def adaptive_stage_works(lr_layer: int) -> list:
    works = []
    for idx in adaptive_layer_indices(lr_layer):
        works.extend(tail_layer_works(idx))
    return works


def adaptive_stage_coeffs(lr_layer: int) -> int:
    return sum(BACKBONE_COEFFS[i] for i in adaptive_layer_indices(lr_layer))


def frozen_stage_coeffs(lr_layer: int) -> int:
    first = adaptive_layer_indices(lr_layer)[0]
    return sum(v for i, v in BACKBONE_COEFFS.items() if i < first)


def adaptive_activation_elems(lr_layer: int) -> int:
    """Feature-map elements cached for backprop: each retrained layer's
    input, batch 1."""
    total = 0
    for idx in adaptive_layer_indices(lr_layer):
        kind, cin, cout, h, w, stride = TAIL_SHAPES[idx]
        total += cin * h * w
    return total


def works_from_specs(specs, input_chw, start: int = 0) -> list:
    """Price the trainable layers of a spec list (e.g. the desk model's
    adaptive stage). input_chw is the shape fed to specs[0]; shapes are
    propagated through the walk."""
    c, h, w = input_chw
    works = []
    for i, spec in enumerate(specs):
        if spec.kind == "relu":
            continue
        if spec.kind == "pw":
            if i >= start:
                works.extend(pw_works(f"l{i}", spec.cin, spec.cout, h, w))
            c = spec.cout
        elif spec.kind == "dw":
            if i >= start:
                works.extend(dw_works(f"l{i}", spec.cin, h, w,
                                      kernel=spec.kernel, stride=spec.stride,
                                      pad=spec.pad))
            h, w = _spatial(h, w, spec.kernel, spec.stride, spec.pad)
        else:
            if i >= start:
                works.extend(linear_works(f"l{i}", spec.cin, spec.cout))
            c, h, w = spec.cout, 1, 1
    return works


# ---------------------------------------------------------------------------
# Numerical execution of a work, whole or per-tile. Used to show that any
# feasible plan reproduces the untiled result bit for bit: tiles never split
# the contraction axis, and channel tiles of dw kernels are independent.
# ---------------------------------------------------------------------------

def make_operands(work: LayerStepWork, rng) -> dict:
    if work.kind == "dw":
        c, hi, wi = work.channels, work.h_in, work.w_in
        return {
            "x": rng.normal((1, c, hi, wi)),
            "w": rng.normal((c, work.kernel, work.kernel)),
            "b": rng.normal((c,)),
            "gy": rng.normal((1, c, work.h_out, work.w_out)),
        }
    m, n, k = work.rows, work.cols, work.k
    if work.step == "fw":
        return {"w": rng.normal((m, k)), "x": rng.normal((k, n)),
                "b": rng.normal((m,))}
    if work.step == "bw_err":
        # rows are input channels; the stored weight is (cout=k, cin=m)
        return {"w": rng.normal((k, m)), "gy": rng.normal((k, n))}
    if work.kind == "pw":  # bw_grad: gy (cout, P) x input (cin, P)
        return {"gy": rng.normal((m, k)), "x": rng.normal((n, k))}
    return {"gy": rng.normal((m, 1)), "x": rng.normal((n, 1))}  # linear outer


def run_untiled(work: LayerStepWork, ops: dict) -> np.ndarray:
    return run_tile(work, ops, 0, work.rows, 0, work.cols)


def run_tile(work: LayerStepWork, ops: dict, m0: int, m1: int,
             n0: int, n1: int) -> np.ndarray:
    """Execute one tile of the work on float32 operand slices."""
    if work.kind == "dw":
        return _run_dw_tile(work, ops, m0, m1)
    if work.step == "fw":
        return matmul(ops["w"][m0:m1], np.ascontiguousarray(ops["x"][:, n0:n1])) \
            + ops["b"][m0:m1, None]
    if work.step == "bw_err":
        wt = np.ascontiguousarray(ops["w"].T[m0:m1])
        return matmul(wt, np.ascontiguousarray(ops["gy"][:, n0:n1]))
    # bw_grad: contraction over the stored axis of both operands
    return matmul(np.ascontiguousarray(ops["gy"][m0:m1]),
                  np.ascontiguousarray(ops["x"][n0:n1].T))


def _run_dw_tile(work, ops, c0, c1):
    stride = work.stride
    x = np.ascontiguousarray(ops["x"][:, c0:c1])
    w = np.ascontiguousarray(ops["w"][c0:c1])
    xp = pad_sample(x, work.pad)
    if work.step == "fw":
        y = np.empty((1, c1 - c0, work.h_out, work.w_out), DTYPE)
        kernels.dw_forward(xp, w, np.ascontiguousarray(ops["b"][c0:c1]), stride, y)
        return y
    gy = np.ascontiguousarray(ops["gy"][:, c0:c1])
    if work.step == "bw_err":
        gxp = np.zeros(xp.shape, DTYPE)
        kernels.dw_backward_error(gy, w, stride, gxp)
        if work.pad:
            gxp = np.ascontiguousarray(
                gxp[:, :, work.pad:work.pad + work.h_in,
                    work.pad:work.pad + work.w_in])
        return gxp
    dw = np.empty((c1 - c0, work.kernel, work.kernel), DTYPE)
    kernels.dw_backward_grad(gy, xp, stride, dw)
    return dw


def stitch_tiles(work: LayerStepWork, plan_tiles, pieces) -> np.ndarray:
    """Reassemble per-tile outputs into the untiled output layout."""
    if work.kind == "dw":
        return np.concatenate(pieces, axis=0 if work.step == "bw_grad" else 1)
    out = None
    for tile, piece in zip(plan_tiles, pieces):
        if out is None:
            shape = (work.rows, work.cols) if piece.ndim == 2 else (work.rows,)
            out = np.empty(shape, DTYPE)
        out[tile.m0:tile.m1, tile.n0:tile.n1] = piece
    return out
