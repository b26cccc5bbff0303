"""Post-training quantization of the frozen stage and of stored latents.

Two per-tensor affine schemes, both with zero point 0:

* weights: signed INT-Q codes with scale S_w = (w_max - w_min) / (2**Q - 1)
* activations: unsigned UINT-Q codes with scale S_a = a_max / (2**Q - 1);
  activation ranges are clamped below at 0, which folds the following ReLU
  into the requantization step.

Rounding is half away from zero, codes are clamped to the legal code range,
and execution stays in float32 fake-quant form: dequantized values lie exactly
on the Q-bit grid, while byte accounting uses the packed INT-Q width.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .layers import NetworkModel, forward_layer
from .tensor import DTYPE, load_tensor, save_tensor


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor scheme: code = clamp(round(x / scale)); x_hat = scale * code."""

    q_bits: int
    scale: float
    signed: bool
    degenerate: bool = False

    def __post_init__(self):
        if not 2 <= self.q_bits <= 8:
            raise ValueError("q_bits must be in [2, 8]")
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ValueError("scale must be positive and finite")

    @property
    def code_min(self) -> int:
        return -(1 << (self.q_bits - 1)) if self.signed else 0

    @property
    def code_max(self) -> int:
        return (1 << (self.q_bits - 1)) - 1 if self.signed else (1 << self.q_bits) - 1

    @property
    def value_min(self) -> float:
        return self.scale * self.code_min

    @property
    def value_max(self) -> float:
        return self.scale * self.code_max


def weight_params(w, q_bits: int) -> QuantParams:
    """Signed scheme from the observed weight range: S = (max - min) / (2**Q - 1)."""
    w_min = float(np.min(w))
    w_max = float(np.max(w))
    if w_max == w_min:
        warnings.warn("degenerate weight range (max == min); emitting all-zero codes")
        return QuantParams(q_bits, 1.0, True, degenerate=True)
    scale = (w_max - w_min) / float((1 << q_bits) - 1)
    return QuantParams(q_bits, scale, True)


def act_params(a_max: float, q_bits: int) -> QuantParams:
    """Unsigned scheme from the calibrated activation max: S = a_max / (2**Q - 1)."""
    a_max = float(a_max)
    if a_max <= 0.0:
        warnings.warn("degenerate activation range (max <= 0); emitting all-zero codes")
        return QuantParams(q_bits, 1.0, False, degenerate=True)
    return QuantParams(q_bits, a_max / float((1 << q_bits) - 1), False)


def quantize(x, params: QuantParams) -> np.ndarray:
    """Codes as int8 (signed) or uint8 (unsigned), byte-aligned in memory."""
    dtype = np.int8 if params.signed else np.uint8
    if params.degenerate:
        return np.zeros(np.shape(x), dtype)
    t = np.asarray(x, np.float64) / params.scale
    codes = np.floor(np.abs(t) + 0.5) * np.sign(t)  # half away from zero
    codes = np.clip(codes, params.code_min, params.code_max)
    return codes.astype(dtype)


def dequantize(codes, params: QuantParams) -> np.ndarray:
    return (np.asarray(codes, DTYPE) * np.float32(params.scale)).astype(DTYPE)


def fake_quant(x, params: QuantParams) -> np.ndarray:
    """quantize then dequantize: float32 values exactly on the Q-bit grid."""
    return dequantize(quantize(x, params), params)


@dataclass
class QuantizedTensor:
    """Integer codes plus their scheme. Codes keep the logical array shape."""

    codes: np.ndarray
    params: QuantParams

    @property
    def shape(self):
        return self.codes.shape

    def dequantize(self) -> np.ndarray:
        return dequantize(self.codes, self.params)

    def packed_nbytes(self) -> int:
        """Payload bytes once bit-packed: ceil(n * Q / 8)."""
        return (self.codes.size * self.params.q_bits + 7) // 8

    def total_nbytes(self) -> int:
        """Packed payload plus the one float32 scale."""
        return self.packed_nbytes() + 4


# ---------------------------------------------------------------------------
# Bit packing (little-endian bitstream) for on-disk buffers.
# ---------------------------------------------------------------------------

def pack_codes(codes: np.ndarray, q_bits: int) -> np.ndarray:
    flat = np.ascontiguousarray(codes, np.uint8).reshape(-1)
    if flat.size and int(flat.max()) >= (1 << q_bits):
        raise ValueError("code out of range for q_bits")
    out = np.zeros((flat.size * q_bits + 7) // 8, np.uint8)
    if flat.size:
        kernels.pack_bits(flat, q_bits, out)
    return out


def unpack_codes(buf: np.ndarray, n: int, q_bits: int) -> np.ndarray:
    need = (n * q_bits + 7) // 8
    buf = np.ascontiguousarray(buf, np.uint8)
    if buf.size != need:
        raise ValueError(f"packed buffer is {buf.size} bytes, expected {need}")
    codes = np.empty(n, np.uint8)
    if n:
        kernels.unpack_bits(buf, q_bits, n, codes)
    return codes


# ---------------------------------------------------------------------------
# Calibration and freezing
# ---------------------------------------------------------------------------

@dataclass
class CalibrationStats:
    """Observed FP32 ranges: weight (min, max) and post-layer activation maxima
    for every trainable layer of the frozen stage, plus the input range and the
    latent (stage output) max."""

    weight_ranges: dict
    act_maxima: dict
    input_max: float
    latent_max: float

    def to_json(self) -> str:
        return json.dumps({
            "format": "tinycl-calib-v1",
            "weight_ranges": {str(k): list(v) for k, v in self.weight_ranges.items()},
            "act_maxima": {str(k): v for k, v in self.act_maxima.items()},
            "input_max": self.input_max,
            "latent_max": self.latent_max,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationStats":
        raw = json.loads(text)
        if raw.get("format") != "tinycl-calib-v1":
            raise ValueError("not a calibration stats file")
        return cls(
            weight_ranges={int(k): tuple(v) for k, v in raw["weight_ranges"].items()},
            act_maxima={int(k): float(v) for k, v in raw["act_maxima"].items()},
            input_max=float(raw["input_max"]),
            latent_max=float(raw["latent_max"]),
        )


def calibrate(model: NetworkModel, x, batch_size: int = 256) -> CalibrationStats:
    """Collect FP32 ranges for the frozen stage (layers before split_index).

    Activation maxima are taken after each trainable layer, clamped below at
    0 to match the unsigned scheme (negative outputs are removed by the ReLU
    that the requantization folds in).
    """
    split = model.split_index
    weight_ranges = {}
    for i in range(split):
        spec = model.layers[i]
        if spec.trainable:
            w = model.params[i]["w"]
            weight_ranges[i] = (float(w.min()), float(w.max()))
    act_maxima = {i: 0.0 for i in weight_ranges}
    input_max = 0.0
    latent_max = 0.0
    for lo in range(0, len(x), batch_size):
        act = x[lo:lo + batch_size]
        input_max = max(input_max, float(act.max(initial=0.0)))
        for i in range(split):
            act = forward_layer(model.layers[i], model.params[i], act)
            if model.layers[i].trainable:
                act_maxima[i] = max(act_maxima[i], float(act.max(initial=0.0)))
        latent_max = max(latent_max, float(act.max(initial=0.0)))
    return CalibrationStats(weight_ranges, act_maxima, input_max, latent_max)


@dataclass
class FrozenStage:
    """Quantized inference copy of layers [0, split_index).

    Weights are stored as float32 values on the signed Q-bit grid; every
    trainable layer output is requantized with the unsigned scheme before the
    next layer sees it. The stage output (the latent) is emitted either as a
    QuantizedTensor at the requested replay width or as raw float32.
    """

    specs: list
    params: list
    split_index: int
    q_bits: int
    input_params: QuantParams
    act_qparams: dict
    latent_max: float

    def latent_params(self, q_bits: int) -> QuantParams:
        return act_params(self.latent_max, q_bits)

    def latent_shape(self, input_shape) -> tuple:
        probe = np.zeros((1,) + tuple(input_shape), DTYPE)
        return tuple(self._run(probe).shape[1:])

    def _run(self, x) -> np.ndarray:
        act = fake_quant(x, self.input_params)
        for i in range(self.split_index):
            act = forward_layer(self.specs[i], self.params[i], act)
            if self.specs[i].trainable:
                act = fake_quant(act, self.act_qparams[i])
        return act

    def latent_f32(self, x) -> np.ndarray:
        """Float32 latents (replay width 'fp32'): no final requantization."""
        return self._run(x)

    def latent_quant(self, x, q_bits: int) -> QuantizedTensor:
        """Latents quantized at the replay width q_bits."""
        params = self.latent_params(q_bits)
        return QuantizedTensor(quantize(self._run(x), params), params)


def freeze_and_quantize(model: NetworkModel, stats: CalibrationStats, q_bits: int) -> FrozenStage:
    """Quantize the frozen stage of ``model`` at q_bits using calibrated stats.

    Weight tensors move onto the signed grid; biases stay float32 (they are
    added after the integer accumulator in the deployment this models).
    """
    split = model.split_index
    params = []
    for i in range(split):
        spec = model.layers[i]
        if not spec.trainable:
            params.append(None)
            continue
        if (i not in stats.weight_ranges) or (i not in stats.act_maxima):
            raise ValueError(f"calibration stats missing layer {i}")
        # Ranges come from calibration, not from the live weights.
        wp = weight_params_from_range(stats.weight_ranges[i], q_bits)
        params.append({
            "w": fake_quant(model.params[i]["w"], wp),
            "b": model.params[i]["b"].copy(),
        })
    act_qparams = {i: act_params(m, q_bits) for i, m in stats.act_maxima.items()}
    input_params = act_params(stats.input_max, q_bits)
    return FrozenStage(
        specs=list(model.layers[:split]),
        params=params,
        split_index=split,
        q_bits=q_bits,
        input_params=input_params,
        act_qparams=act_qparams,
        latent_max=stats.latent_max,
    )


def weight_params_from_range(w_range, q_bits: int) -> QuantParams:
    w_min, w_max = float(w_range[0]), float(w_range[1])
    if w_max == w_min:
        warnings.warn("degenerate weight range (max == min); emitting all-zero codes")
        return QuantParams(q_bits, 1.0, True, degenerate=True)
    return QuantParams(q_bits, (w_max - w_min) / float((1 << q_bits) - 1), True)


# ---------------------------------------------------------------------------
# Frozen stage checkpoint
# ---------------------------------------------------------------------------

def save_frozen(stage: FrozenStage, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "tinycl-frozen-v1",
        "split_index": stage.split_index,
        "q_bits": stage.q_bits,
        "layers": [vars(s) for s in stage.specs],
        "input_scale": stage.input_params.scale,
        "input_degenerate": stage.input_params.degenerate,
        "act_scales": {str(i): [p.scale, p.degenerate] for i, p in stage.act_qparams.items()},
        "latent_max": stage.latent_max,
        "tensors": {},
    }
    for i, p in enumerate(stage.params):
        if p is None:
            continue
        for key, arr in p.items():
            name = f"{key}{i}.bin"
            save_tensor(path / name, arr)
            manifest["tensors"][f"{key}{i}"] = name
    (path / "frozen.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_frozen(path) -> FrozenStage:
    from .layers import LayerSpec  # local import to avoid cycle at module load

    path = Path(path)
    manifest = json.loads((path / "frozen.json").read_text())
    if manifest.get("format") != "tinycl-frozen-v1":
        raise ValueError(f"{path}: not a frozen stage checkpoint")
    specs = [LayerSpec(**entry) for entry in manifest["layers"]]
    q_bits = int(manifest["q_bits"])
    params = []
    for i, spec in enumerate(specs):
        if not spec.trainable:
            params.append(None)
            continue
        params.append({
            "w": load_tensor(path / manifest["tensors"][f"w{i}"]),
            "b": load_tensor(path / manifest["tensors"][f"b{i}"]),
        })
    act_qparams = {
        int(i): QuantParams(q_bits, s, False, degenerate=bool(d))
        for i, (s, d) in manifest["act_scales"].items()
    }
    return FrozenStage(
        specs=specs,
        params=params,
        split_index=int(manifest["split_index"]),
        q_bits=q_bits,
        input_params=QuantParams(q_bits, float(manifest["input_scale"]), False,
                                 degenerate=bool(manifest["input_degenerate"])),
        act_qparams=act_qparams,
        latent_max=float(manifest["latent_max"]),
    )
