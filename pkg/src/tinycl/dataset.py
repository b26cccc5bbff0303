"""Synthetic desk-scale class-incremental task and its reference model.

Ten texture classes on 32x32 grayscale images. Each class is a fixed
band-limited prototype pattern; a sample is a circularly shifted copy of the
prototype with pixel noise mixed in, mapped to nonnegative intensities and
multiplied by a per-sample gain drawn log-uniformly from [gain_lo, gain_hi].
The classifier's job (which pattern?) is invariant to the gain, but the gain
spreads the latent dynamic range over ~an order of magnitude, so coarse
replay bitwidths run out of levels on dim samples first. That makes replay
bitwidth a controlled, measurable knob on this task, matching its role at
full scale.

The companion model is a depthwise-separable stack whose tail mirrors the
shapes the cost simulator prices: pw/dw trunk down to an 8x8x64 feature map
(the replay point), then one more dw/pw block and a linear head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import LayerSpec, NetworkModel
from .rng import Rng
from .tensor import DTYPE

DESK_SPLIT_INDEX = 14


def desk_layer_specs() -> list:
    return [
        LayerSpec("pw", 1, 16),
        LayerSpec("relu"),
        LayerSpec("dw", 16, 16, kernel=3, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("pw", 16, 32),
        LayerSpec("relu"),
        LayerSpec("dw", 32, 32, kernel=3, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("pw", 32, 64),
        LayerSpec("relu"),
        LayerSpec("dw", 64, 64, kernel=3, stride=1, pad=1),
        LayerSpec("relu"),
        LayerSpec("pw", 64, 64),
        LayerSpec("relu"),
        # adaptive stage starts here (index 14)
        LayerSpec("dw", 64, 64, kernel=3, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("pw", 64, 128),
        LayerSpec("relu"),
        LayerSpec("linear", 128 * 4 * 4, 10),
    ]


def make_desk_model(rng: Rng, split_index: int = DESK_SPLIT_INDEX) -> NetworkModel:
    """Fresh desk-task model; the latent at the default split is 64x8x8."""
    return NetworkModel.create(desk_layer_specs(), split_index, rng)


@dataclass(frozen=True)
class DeskTaskConfig:
    num_classes: int = 10
    initial_classes: int = 4
    image_size: int = 32
    events: int = 30
    samples_per_event: int = 40
    initial_per_class: int = 100
    test_per_class: int = 40
    noise_std: float = 0.25
    gain_lo: float = 0.2
    gain_hi: float = 2.0
    max_shift: int = 2
    initial_similarity: float = 0.0
    # heavy-tailed brightness: rare bright samples latch the calibrated
    # activation maxima, so the quantization step for typical samples is
    # outlier_factor times coarser than the bright end alone would give
    outlier_prob: float = 0.02
    outlier_factor: float = 6.0

    def __post_init__(self):
        if not 0 < self.initial_classes < self.num_classes:
            raise ValueError("initial_classes must be in (0, num_classes)")
        if self.events % (self.num_classes - self.initial_classes) != 0:
            raise ValueError("events must cycle the non-initial classes evenly")
        if not 0.0 < self.gain_lo <= self.gain_hi:
            raise ValueError("need 0 < gain_lo <= gain_hi")
        if not 0.0 <= self.initial_similarity < 1.0:
            raise ValueError("initial_similarity must be in [0, 1)")


def _bandlimited(n: int, rng: Rng) -> np.ndarray:
    """One random pattern with 2..5 cycles per image, zero mean, unit RMS."""
    freq = np.fft.fftfreq(n)
    fx, fy = np.meshgrid(freq, freq)
    mask = ((np.hypot(fx, fy) * n) >= 1.5) & ((np.hypot(fx, fy) * n) <= 5.5)
    spec = rng.gen.standard_normal((n, n)) + 1j * rng.gen.standard_normal((n, n))
    img = np.fft.ifft2(spec * mask).real
    img -= img.mean()
    img /= np.sqrt(np.mean(img * img))
    return img


def _prototypes(cfg: DeskTaskConfig, rng: Rng) -> np.ndarray:
    """One pattern per class, unit RMS.

    The initial classes share a common base with energy fraction
    initial_similarity, so the classes held only by replays sit close
    together; later classes are independent patterns. Thin margins between
    the replayed classes are what let the replay bitwidth show up in the
    accuracy trace.
    """
    n = cfg.image_size
    base = _bandlimited(n, rng.child("base"))
    w_base = np.sqrt(cfg.initial_similarity)
    w_uniq = np.sqrt(1.0 - cfg.initial_similarity)
    protos = np.empty((cfg.num_classes, n, n), DTYPE)
    for c in range(cfg.num_classes):
        if c < cfg.initial_classes:
            img = w_base * base + w_uniq * _bandlimited(n, rng.child(f"class{c}"))
            img /= np.sqrt(np.mean(img * img))
        else:
            img = _bandlimited(n, rng.child(f"class{c}"))
        protos[c] = img.astype(DTYPE)
    return protos


def _draw_samples(protos, labels, cfg: DeskTaskConfig, rng: Rng) -> np.ndarray:
    """(gain, shift, noise) realization per label; output (N, 1, H, W) >= 0."""
    n = cfg.image_size
    out = np.empty((len(labels), 1, n, n), DTYPE)
    shifts = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=(len(labels), 2))
    gains = np.exp(rng.uniform(np.log(cfg.gain_lo), np.log(cfg.gain_hi), len(labels)))
    gains[rng.uniform(0.0, 1.0, len(labels)) < cfg.outlier_prob] *= cfg.outlier_factor
    for i, lab in enumerate(labels):
        img = np.roll(protos[lab], (shifts[i, 0], shifts[i, 1]), axis=(0, 1))
        img = img + cfg.noise_std * rng.gen.standard_normal((n, n))
        # map to intensities: nonnegative, so the unsigned input scheme applies
        img = np.maximum(0.5 + 0.35 * img, 0.0)
        out[i, 0] = (gains[i] * img).astype(DTYPE)
    return out


@dataclass
class DeskDataset:
    """Partitioned task: initial set, per-event stream, held-out test set."""

    config: DeskTaskConfig
    seed: int
    initial_x: np.ndarray = field(repr=False, default=None)
    initial_y: np.ndarray = field(repr=False, default=None)
    test_x: np.ndarray = field(repr=False, default=None)
    test_y: np.ndarray = field(repr=False, default=None)
    event_x: list = field(repr=False, default=None)
    event_y: list = field(repr=False, default=None)

    def event_class(self, index: int) -> int:
        cfg = self.config
        return cfg.initial_classes + index % (cfg.num_classes - cfg.initial_classes)

    def num_events(self) -> int:
        return self.config.events


def make_desk_dataset(seed: int, cfg: DeskTaskConfig = DeskTaskConfig()) -> DeskDataset:
    rng = Rng(seed, "desk-dataset")
    protos = _prototypes(cfg, rng.child("prototypes"))
    ds = DeskDataset(cfg, seed)

    init_y = np.repeat(np.arange(cfg.initial_classes), cfg.initial_per_class)
    ds.initial_y = init_y.astype(np.int64)
    ds.initial_x = _draw_samples(protos, ds.initial_y, cfg, rng.child("initial"))

    test_y = np.repeat(np.arange(cfg.num_classes), cfg.test_per_class)
    ds.test_y = test_y.astype(np.int64)
    ds.test_x = _draw_samples(protos, ds.test_y, cfg, rng.child("test"))

    ds.event_x, ds.event_y = [], []
    for e in range(cfg.events):
        y = np.full(cfg.samples_per_event, ds.event_class(e), np.int64)
        ds.event_x.append(_draw_samples(protos, y, cfg, rng.child(f"event{e}")))
        ds.event_y.append(y)
    return ds
