"""Layer specs, forward/backward steps, loss, and SGD.

Supported layer kinds are the four needed by a depthwise-separable conv
network: pointwise 1x1 conv ("pw"), depthwise kxk conv ("dw", cin == cout),
fully connected ("linear"), and "relu". Convolutions lower onto the
deterministic matmul/im2col kernels; each backward pass is split into the
same two steps the cost simulator prices separately: backward-error
(gradient w.r.t. the layer input) and backward-grad (gradient w.r.t. the
parameters).

A NetworkModel carries an ordered layer list plus ``split_index``: layers
before it form the frozen stage (never trained, no gradients allocated),
layers from it onward are the adaptive stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .rng import Rng
from .tensor import DTYPE, load_tensor, matmul, pad_sample, save_tensor

KINDS = ("pw", "dw", "linear", "relu")


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer. Spatial params only matter for dw."""

    kind: str
    cin: int = 0
    cout: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "pw":
            if self.kernel != 1 or self.stride != 1 or self.pad != 0:
                raise ValueError("pw layers are 1x1, stride 1, pad 0")
        if self.kind == "dw":
            if self.cin != self.cout:
                raise ValueError("dw layers require cin == cout")
            if self.stride not in (1, 2):
                raise ValueError("dw stride must be 1 or 2")
        if self.kind in ("pw", "dw", "linear") and (self.cin <= 0 or self.cout <= 0):
            raise ValueError(f"{self.kind} layer needs positive cin/cout")

    @property
    def trainable(self) -> bool:
        return self.kind != "relu"

    def param_count(self) -> int:
        if self.kind == "pw":
            return self.cout * self.cin + self.cout
        if self.kind == "dw":
            return self.cout * self.kernel * self.kernel + self.cout
        if self.kind == "linear":
            return self.cout * self.cin + self.cout
        return 0


def init_layer_params(spec: LayerSpec, rng: Rng):
    """He-style init: std = sqrt(2 / fan_in), zero bias."""
    if not spec.trainable:
        return None
    if spec.kind == "pw":
        fan_in, shape = spec.cin, (spec.cout, spec.cin)
    elif spec.kind == "dw":
        fan_in, shape = spec.kernel * spec.kernel, (spec.cout, spec.kernel, spec.kernel)
    else:
        fan_in, shape = spec.cin, (spec.cout, spec.cin)
    w = rng.normal(shape, scale=float(np.sqrt(2.0 / fan_in)))
    return {"w": w, "b": np.zeros(spec.cout, DTYPE)}


# ---------------------------------------------------------------------------
# Per-layer steps. x batches are (B, C, H, W) for conv layers, (B, F) for
# linear. The matmul orientations below match the workloads the tile planner
# prices, so tiled execution can reuse them slice-for-slice.
# ---------------------------------------------------------------------------

def _to_cmat(x):
    # (B, C, H, W) -> (C, B*H*W), columns ordered (sample, row, col)
    b, c, h, w = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3).reshape(c, b * h * w))


def _from_cmat(mat, batch, h, w):
    c = mat.shape[0]
    return np.ascontiguousarray(mat.reshape(c, batch, h, w).transpose(1, 0, 2, 3))


def forward_layer(spec: LayerSpec, params, x):
    if spec.kind == "relu":
        return np.maximum(x, np.float32(0.0))
    w, b = params["w"], params["b"]
    if spec.kind == "pw":
        batch, _, h, wd = x.shape
        y = matmul(w, _to_cmat(x)) + b[:, None]
        return _from_cmat(y, batch, h, wd)
    if spec.kind == "dw":
        batch, c, h, wd = x.shape
        ho = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
        wo = (wd + 2 * spec.pad - spec.kernel) // spec.stride + 1
        xp = pad_sample(x, spec.pad)
        y = np.empty((batch, c, ho, wo), DTYPE)
        kernels.dw_forward(xp, w, b, spec.stride, y)
        return y
    # linear
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    yt = matmul(w, np.ascontiguousarray(x.T)) + b[:, None]
    return np.ascontiguousarray(yt.T)


def backward_error_layer(spec: LayerSpec, params, x, gy):
    """Gradient w.r.t. the layer input, given cached input x and upstream gy."""
    if spec.kind == "relu":
        return np.where(x > 0, gy, np.float32(0.0)).astype(DTYPE, copy=False)
    w = params["w"]
    if spec.kind == "pw":
        batch, _, h, wd = x.shape
        gx = matmul(np.ascontiguousarray(w.T), _to_cmat(gy))
        return _from_cmat(gx, batch, h, wd)
    if spec.kind == "dw":
        gxp = np.zeros(pad_sample(x, spec.pad).shape, DTYPE)
        kernels.dw_backward_error(np.ascontiguousarray(gy), w, spec.stride, gxp)
        if spec.pad:
            h, wd = x.shape[2], x.shape[3]
            gxp = np.ascontiguousarray(gxp[:, :, spec.pad:spec.pad + h, spec.pad:spec.pad + wd])
        return gxp
    # linear
    gxt = matmul(np.ascontiguousarray(w.T), np.ascontiguousarray(gy.T))
    return np.ascontiguousarray(gxt.T).reshape(x.shape)


def backward_grad_layer(spec: LayerSpec, x, gy):
    """Parameter gradients (dw, db) from cached input x and upstream gy."""
    if spec.kind == "pw":
        dw = matmul(_to_cmat(gy), np.ascontiguousarray(_to_cmat(x).T))
        db = gy.sum(axis=(0, 2, 3), dtype=DTYPE)
        return dw, db
    if spec.kind == "dw":
        dw = np.empty((spec.cout, spec.kernel, spec.kernel), DTYPE)
        kernels.dw_backward_grad(np.ascontiguousarray(gy), pad_sample(x, spec.pad), spec.stride, dw)
        db = gy.sum(axis=(0, 2, 3), dtype=DTYPE)
        return dw, db
    if spec.kind == "linear":
        xf = x.reshape(x.shape[0], -1)
        dw = matmul(np.ascontiguousarray(gy.T), np.ascontiguousarray(xf))
        db = gy.sum(axis=0, dtype=DTYPE)
        return dw, db
    raise ValueError(f"{spec.kind} has no parameters")


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    The loss itself is reduced in float64 (it feeds finite-difference checks);
    the returned gradient is float32: (softmax - onehot) / B.
    """
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    batch = logits.shape[0]
    idx = np.arange(batch)
    loss = float(np.mean(np.log(sez[:, 0]) - z[idx, labels]))
    probs = ez / sez
    probs[idx, labels] -= 1.0
    grad = (probs / batch).astype(DTYPE)
    return loss, grad


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------

@dataclass
class NetworkModel:
    layers: list
    split_index: int
    params: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.split_index < len(self.layers):
            raise ValueError("split_index out of range")

    @classmethod
    def create(cls, layers, split_index, rng: Rng) -> "NetworkModel":
        model = cls(list(layers), split_index, [])
        model.params = [init_layer_params(spec, rng.child(f"layer{i}"))
                        for i, spec in enumerate(model.layers)]
        return model

    def param_count(self, start=0, stop=None) -> int:
        stop = len(self.layers) if stop is None else stop
        return sum(spec.param_count() for spec in self.layers[start:stop])

    def adaptive_indices(self):
        return [i for i in range(self.split_index, len(self.layers))
                if self.layers[i].trainable]

    def forward(self, x, start=0, stop=None, caches=None):
        """Run layers[start:stop); if caches is a list, record each layer input."""
        stop = len(self.layers) if stop is None else stop
        act = x
        for i in range(start, stop):
            if caches is not None:
                caches.append(act)
            act = forward_layer(self.layers[i], self.params[i], act)
        return act

    def loss_and_grads(self, x, labels, start=None):
        """Forward from ``start`` (default: split_index), then backprop.

        Returns (loss, GradientSet). backward-error is skipped for the first
        layer of the range since nothing upstream consumes it.
        """
        start = self.split_index if start is None else start
        caches = []
        logits = self.forward(x, start=start, caches=caches)
        loss, gy = softmax_xent(logits, labels)
        grads = {}
        for i in range(len(self.layers) - 1, start - 1, -1):
            spec = self.layers[i]
            cache = caches[i - start]
            if spec.trainable:
                dw, db = backward_grad_layer(spec, cache, gy)
                grads[i] = {"w": dw, "b": db}
            if i > start:
                gy = backward_error_layer(spec, self.params[i], cache, gy)
        return loss, grads


def sgd_step(model: NetworkModel, grads, velocity, lr: float, momentum: float = 0.0):
    """Heavy-ball SGD, in place: v <- g + momentum * v ; w <- w - lr * v."""
    lr = np.float32(lr)
    momentum = np.float32(momentum)
    for i, g in grads.items():
        if i < model.split_index:
            raise ValueError(f"gradient for frozen layer {i}")
        if i not in velocity:
            velocity[i] = {k: np.zeros_like(v) for k, v in g.items()}
        for key in g:
            v = velocity[i][key]
            v *= momentum
            v += g[key]
            model.params[i][key] -= lr * v


def predict(model: NetworkModel, x, start=0, batch_size=256):
    """Class predictions, evaluated in fixed-size chunks."""
    outs = []
    for lo in range(0, len(x), batch_size):
        logits = model.forward(x[lo:lo + batch_size], start=start)
        outs.append(np.argmax(logits, axis=1))
    return np.concatenate(outs) if outs else np.zeros(0, np.int64)


def accuracy(model: NetworkModel, x, labels, start=0) -> float:
    return float(np.mean(predict(model, x, start=start) == labels))


# ---------------------------------------------------------------------------
# Checkpoints: a JSON manifest next to one tensor container per parameter.
# ---------------------------------------------------------------------------

def save_model(model: NetworkModel, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "tinycl-model-v1",
        "split_index": model.split_index,
        "layers": [vars(spec) for spec in model.layers],
        "tensors": {},
    }
    for i, p in enumerate(model.params):
        if p is None:
            continue
        for key, arr in p.items():
            name = f"{key}{i}.bin"
            save_tensor(path / name, arr)
            manifest["tensors"][f"{key}{i}"] = name
    (path / "model.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_model(path) -> NetworkModel:
    path = Path(path)
    manifest = json.loads((path / "model.json").read_text())
    if manifest.get("format") != "tinycl-model-v1":
        raise ValueError(f"{path}: not a model checkpoint")
    layers = [LayerSpec(**entry) for entry in manifest["layers"]]
    model = NetworkModel(layers, manifest["split_index"], [None] * len(layers))
    for i, spec in enumerate(layers):
        if not spec.trainable:
            continue
        model.params[i] = {
            "w": load_tensor(path / manifest["tensors"][f"w{i}"]),
            "b": load_tensor(path / manifest["tensors"][f"b{i}"]),
        }
    return model
