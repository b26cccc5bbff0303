"""Latent replay buffer, mixed mini-batches, and the protocol runner.

The buffer is filled once, right after the frozen stage is quantized, with
the latent activations of a class-stratified draw from the initial training
set. During every later learning event each mini-batch combines a fixed
number of fresh latents (new class data pushed through the frozen stage)
with replays dequantized from the buffer, and only the adaptive stage is
updated. The buffer is read-only during events unless the optional
class-balanced refresh policy is switched on.
"""

from __future__ import annotations

import json
import struct
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import NetworkModel, predict, sgd_step
from .quantize import (FrozenStage, QuantParams, calibrate, dequantize,
                       freeze_and_quantize, pack_codes, quantize, unpack_codes)
from .rng import Rng
from .tensor import DTYPE

BUFFER_MAGIC = b"TCLLRB01"


@dataclass
class ReplayBuffer:
    """N latent vectors, all sharing one shape and one quantization scheme.

    ``q_bits is None`` means raw float32 storage (``values``); otherwise the
    codes array holds unsigned Q-bit codes and ``qparams`` their scheme.
    """

    lr_layer: int
    vector_shape: tuple
    labels: np.ndarray
    q_bits: int | None = None
    qparams: QuantParams | None = None
    codes: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        store = self.values if self.q_bits is None else self.codes
        if self.q_bits is not None and self.qparams is None:
            raise ValueError("quantized buffer needs qparams")
        if store is None or store.shape != (n, self.elems):
            raise ValueError("entry store must be (len(labels), prod(vector_shape))")

    @property
    def elems(self) -> int:
        return int(np.prod(self.vector_shape))

    def __len__(self) -> int:
        return len(self.labels)

    def entry_nbytes(self) -> int:
        if self.q_bits is None:
            return self.elems * 4
        return (self.elems * self.q_bits + 7) // 8

    def payload_nbytes(self) -> int:
        return len(self) * self.entry_nbytes()

    def total_nbytes(self) -> int:
        # payload + the one shared scale + the label array
        return self.payload_nbytes() + 4 + self.labels.nbytes

    def fetch(self, idx) -> np.ndarray:
        """Dequantized float32 vectors, reshaped to (len(idx), *vector_shape)."""
        if self.q_bits is None:
            flat = self.values[idx]
        else:
            flat = dequantize(self.codes[idx], self.qparams)
        return flat.reshape((len(idx),) + self.vector_shape)


def build_replay_buffer(frozen: FrozenStage, x, labels, n_lr: int,
                        q_lr: int | None, rng: Rng) -> ReplayBuffer:
    """Fill a buffer with n_lr latents drawn from (x, labels) without
    replacement, stratified by class (largest-remainder allocation)."""
    if n_lr > len(x):
        raise ValueError(f"n_lr={n_lr} exceeds the {len(x)} available samples")
    if len(x) == 0:
        raise ValueError("cannot size a buffer from an empty sample set")
    labels = np.asarray(labels, np.int64)

    classes, counts = np.unique(labels, return_counts=True)
    exact = n_lr * counts / counts.sum()
    alloc = np.floor(exact).astype(int)
    rem = np.argsort(-(exact - alloc), kind="stable")
    alloc[rem[:n_lr - alloc.sum()]] += 1

    picked = []
    for cls, take in zip(classes, alloc):
        pool = np.flatnonzero(labels == cls)
        sel = rng.choice(len(pool), size=take, replace=False)
        picked.append(pool[np.sort(sel)])
    picked = np.concatenate(picked) if picked else np.zeros(0, np.int64)

    shape = frozen.latent_shape(x.shape[1:])
    elems = int(np.prod(shape))
    if q_lr is None:
        values = np.empty((len(picked), elems), DTYPE)
        for lo in range(0, len(picked), 256):
            sel = picked[lo:lo + 256]
            values[lo:lo + len(sel)] = frozen.latent_f32(x[sel]).reshape(len(sel), elems)
        return ReplayBuffer(frozen.split_index, shape, labels[picked], values=values)
    qparams = frozen.latent_params(q_lr)
    codes = np.empty((len(picked), elems), np.uint8)
    for lo in range(0, len(picked), 256):
        sel = picked[lo:lo + 256]
        lat = frozen.latent_f32(x[sel]).reshape(len(sel), elems)
        codes[lo:lo + len(sel)] = quantize(lat, qparams)
    return ReplayBuffer(frozen.split_index, shape, labels[picked],
                        q_bits=q_lr, qparams=qparams, codes=codes)


def sample_minibatch(buffer: ReplayBuffer, new_latents, new_labels, rng: Rng,
                     batch_size: int = 128, n_new: int = 21):
    """One training batch: exactly n_new new latents + (batch_size - n_new)
    replays, all float32. An empty buffer degrades to a new-only batch."""
    pool = len(new_latents)
    if pool == 0:
        raise ValueError("event supplied no new latents")
    if pool >= n_new:
        pick = rng.choice(pool, size=n_new, replace=False)
    else:
        pick = rng.integers(0, pool, size=n_new)
    x_new = new_latents[pick]
    y_new = np.asarray(new_labels, np.int64)[pick]
    if len(buffer) == 0:
        if batch_size > n_new:
            warnings.warn("replay buffer is empty; training on new data only")
        return x_new, y_new
    ridx = rng.integers(0, len(buffer), size=batch_size - n_new)
    x = np.concatenate([x_new, buffer.fetch(ridx)], axis=0)
    y = np.concatenate([y_new, buffer.labels[ridx]])
    return x, y


@dataclass(frozen=True)
class LearningEvent:
    """One arrival of labeled data from a single class (or class group)."""

    index: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) == 0 or len(self.x) != len(self.y):
            raise ValueError("event needs a non-empty, aligned sample set")


@dataclass(frozen=True)
class ProtocolConfig:
    """Knobs of the class-incremental run. Replay share is
    (minibatch_size - new_per_batch) / minibatch_size, about 5/6 at the
    defaults."""

    lr: float
    initial_classes: int = 4
    total_classes: int = 10
    events: int = 30
    samples_per_event: int = 40
    minibatch_size: int = 128
    new_per_batch: int = 21
    epochs: int = 4
    momentum: float = 0.0
    seed: int = 0
    q_bits: int = 8
    q_lr: int | None = 8
    n_lr: int = 200
    epochs_initial: int = 12
    lr_initial: float | None = None
    refresh_buffer: bool = False

    def __post_init__(self):
        if not 0 < self.new_per_batch < self.minibatch_size:
            raise ValueError("need 0 < new_per_batch < minibatch_size")
        if not 0 < self.initial_classes < self.total_classes:
            raise ValueError("initial_classes must be in (0, total_classes)")
        if self.lr < 0 or self.epochs < 0 or self.events < 0 or self.n_lr < 0:
            raise ValueError("lr, epochs, events, n_lr must be nonnegative")


def run_learning_event(model: NetworkModel, frozen: FrozenStage,
                       buffer: ReplayBuffer, event: LearningEvent,
                       config: ProtocolConfig, rng: Rng, velocity: dict,
                       test_latents=None, test_labels=None) -> dict:
    """Train the adaptive stage for config.epochs on mixed batches.

    Frozen parameters and buffer contents are untouched. Returns the loss
    curve plus (when a test set is supplied) post-event test accuracy.
    """
    if buffer.lr_layer != model.split_index or frozen.split_index != model.split_index:
        raise ValueError("buffer/frozen stage split does not match the model")
    if event.y.min() < 0 or event.y.max() >= config.total_classes:
        raise ValueError("event labels outside the declared protocol classes")

    new_latents = frozen.latent_f32(event.x)
    if new_latents.shape[1:] != buffer.vector_shape:
        raise ValueError("latent shape does not match the buffer")

    losses = []
    batches = -(-len(event.x) // config.new_per_batch)
    for _ in range(config.epochs):
        for _ in range(batches):
            x, y = sample_minibatch(buffer, new_latents, event.y, rng,
                                    config.minibatch_size, config.new_per_batch)
            loss, grads = model.loss_and_grads(x, y)
            sgd_step(model, grads, velocity, config.lr, config.momentum)
            losses.append(loss)

    metrics = {
        "loss_curve": losses,
        "loss_mean": float(np.mean(losses)) if losses else float("nan"),
    }
    if test_latents is not None:
        preds = predict(model, test_latents, start=model.split_index)
        metrics["test_accuracy"] = float(np.mean(preds == test_labels))
    return metrics


def refresh_buffer_class_balanced(buffer: ReplayBuffer, frozen: FrozenStage,
                                  event: LearningEvent, seen_classes, rng: Rng):
    """Optional policy (off by default): evict entries of over-represented
    classes and insert latents of the event's class, keeping len(buffer)
    fixed and classes roughly balanced."""
    if len(buffer) == 0:
        return
    target = len(buffer) // len(seen_classes)
    if target == 0:
        return
    current = int(np.sum(buffer.labels == event.y[0]))
    take = min(target - current, len(event.x))
    if take <= 0:
        return
    donors = []
    for _ in range(take):
        cls_arr, cnt = np.unique(buffer.labels, return_counts=True)
        others = cls_arr != event.y[0]
        if not others.any():
            break
        cls = cls_arr[others][cnt[others].argmax()]
        pool = np.flatnonzero(buffer.labels == cls)
        pos = pool[int(rng.integers(0, len(pool)))]
        donors.append(pos)
        buffer.labels[pos] = event.y[0]
    take = len(donors)
    if take == 0:
        return
    sel = rng.choice(len(event.x), size=take, replace=False)
    lat = frozen.latent_f32(event.x[sel]).reshape(take, buffer.elems)
    if buffer.q_bits is None:
        buffer.values[donors] = lat
    else:
        buffer.codes[donors] = quantize(lat, buffer.qparams)


@dataclass
class ProtocolResult:
    rows: list
    final_accuracy: float
    per_class_accuracy: np.ndarray
    old_class_accuracy: float
    model: NetworkModel
    frozen: FrozenStage
    buffer: ReplayBuffer


def train_initial_phase(model: NetworkModel, x, y, config: ProtocolConfig,
                        rng: Rng) -> None:
    """Plain SGD over the whole network on the initial classes."""
    saved_split = model.split_index
    model.split_index = 0
    lr = config.lr if config.lr_initial is None else config.lr_initial
    velocity = {}
    try:
        for _ in range(config.epochs_initial):
            order = rng.permutation(len(x))
            for lo in range(0, len(order), config.minibatch_size):
                sel = order[lo:lo + config.minibatch_size]
                loss, grads = model.loss_and_grads(x[sel], y[sel], start=0)
                sgd_step(model, grads, velocity, lr, config.momentum)
    finally:
        model.split_index = saved_split


def _latents_chunked(frozen: FrozenStage, x, chunk: int = 256) -> np.ndarray:
    parts = [frozen.latent_f32(x[lo:lo + chunk]) for lo in range(0, len(x), chunk)]
    return np.concatenate(parts, axis=0)


def run_protocol(model: NetworkModel, dataset, config: ProtocolConfig,
                 record_wallclock: bool = False) -> ProtocolResult:
    """Full class-incremental run on a partitioned dataset.

    Phases: train the whole net on the initial classes, calibrate and freeze
    the front stage, fill the replay buffer, then iterate the learning
    events, evaluating on the held-out test set after each one.

    ``record_wallclock`` fills the trace's wallclock column with per-event
    seconds; it is off by default so reruns stay byte-identical.
    """
    rng = Rng(config.seed, "protocol")
    train_initial_phase(model, dataset.initial_x, dataset.initial_y, config,
                        rng.child("initial"))
    stats = calibrate(model, dataset.initial_x)
    frozen = freeze_and_quantize(model, stats, config.q_bits)
    buffer = build_replay_buffer(frozen, dataset.initial_x, dataset.initial_y,
                                 config.n_lr, config.q_lr, rng.child("buffer"))
    test_latents = _latents_chunked(frozen, dataset.test_x)
    rows, _ = run_event_phase(model, frozen, buffer, dataset, config,
                              rng.child("events"), test_latents,
                              record_wallclock=record_wallclock)
    per_class = per_class_accuracy(model, test_latents, dataset.test_y,
                                   config.total_classes)
    old = float(np.mean(per_class[:config.initial_classes]))
    return ProtocolResult(
        rows=rows,
        final_accuracy=rows[-1]["test_accuracy"] if rows else float("nan"),
        per_class_accuracy=per_class,
        old_class_accuracy=old,
        model=model,
        frozen=frozen,
        buffer=buffer,
    )


def run_event_phase(model: NetworkModel, frozen: FrozenStage,
                    buffer: ReplayBuffer, dataset, config: ProtocolConfig,
                    rng: Rng, test_latents, record_wallclock: bool = False):
    """The event loop of run_protocol, reusable on a prepared base model."""
    velocity = {}
    seen = set(range(config.initial_classes))
    rows = []
    for e in range(config.events):
        event = LearningEvent(e, dataset.event_x[e], dataset.event_y[e])
        t0 = time.perf_counter()
        metrics = run_learning_event(model, frozen, buffer, event, config,
                                     rng.child(f"event{e}"), velocity,
                                     test_latents, dataset.test_y)
        elapsed = time.perf_counter() - t0
        seen.update(int(v) for v in np.unique(event.y))
        if config.refresh_buffer:
            refresh_buffer_class_balanced(buffer, frozen, event, seen,
                                          rng.child(f"refresh{e}"))
        rows.append({
            "event_index": e,
            "seen_classes": len(seen),
            "test_accuracy": metrics["test_accuracy"],
            "loss_mean": metrics["loss_mean"],
            "wallclock": f"{elapsed:.3f}" if record_wallclock else "",
        })
    return rows, velocity


def per_class_accuracy(model: NetworkModel, test_latents, test_labels,
                       num_classes: int) -> np.ndarray:
    preds = predict(model, test_latents, start=model.split_index)
    acc = np.zeros(num_classes)
    for c in range(num_classes):
        mask = test_labels == c
        acc[c] = float(np.mean(preds[mask] == c)) if mask.any() else float("nan")
    return acc


def trace_to_csv(rows) -> str:
    lines = ["event_index,seen_classes,test_accuracy,loss_mean,wallclock"]
    for r in rows:
        lines.append("%d,%d,%.6f,%.6f,%s" % (
            r["event_index"], r["seen_classes"], r["test_accuracy"],
            r["loss_mean"], r["wallclock"]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Buffer file format: magic, u32 header length, JSON header, then per-entry
# payloads (bit-packed codes, or little-endian float32 in fp32 mode).
# ---------------------------------------------------------------------------

def save_buffer(buffer: ReplayBuffer, path) -> None:
    header = {
        "format": "tinycl-replay-v1",
        "lr_layer": buffer.lr_layer,
        "vector_shape": list(buffer.vector_shape),
        "count": len(buffer),
        "q_bits": buffer.q_bits,
        "scale": None if buffer.qparams is None else buffer.qparams.scale,
        "labels": [int(v) for v in buffer.labels],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(BUFFER_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        if buffer.q_bits is None:
            fh.write(np.ascontiguousarray(buffer.values, "<f4").tobytes())
        else:
            for row in buffer.codes:
                fh.write(pack_codes(row, buffer.q_bits).tobytes())


def load_buffer(path) -> ReplayBuffer:
    raw = Path(path).read_bytes()
    if raw[:8] != BUFFER_MAGIC:
        raise ValueError(f"{path}: not a replay buffer file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode())
    if header.get("format") != "tinycl-replay-v1":
        raise ValueError(f"{path}: unsupported buffer format")
    shape = tuple(header["vector_shape"])
    count = int(header["count"])
    labels = np.asarray(header["labels"], np.int64)
    elems = int(np.prod(shape))
    body = raw[12 + hlen:]
    q_bits = header["q_bits"]
    if q_bits is None:
        need = count * elems * 4
        if len(body) != need:
            raise ValueError(f"{path}: payload is {len(body)} bytes, expected {need}")
        values = np.frombuffer(body, "<f4").astype(DTYPE).reshape(count, elems)
        return ReplayBuffer(int(header["lr_layer"]), shape, labels, values=values)
    q_bits = int(q_bits)
    entry = (elems * q_bits + 7) // 8
    if len(body) != count * entry:
        raise ValueError(f"{path}: payload is {len(body)} bytes, expected {count * entry}")
    codes = np.empty((count, elems), np.uint8)
    for i in range(count):
        chunk = np.frombuffer(body[i * entry:(i + 1) * entry], np.uint8)
        codes[i] = unpack_codes(chunk, elems, q_bits)
    qparams = QuantParams(q_bits, float(header["scale"]), False)
    return ReplayBuffer(int(header["lr_layer"]), shape, labels,
                        q_bits=q_bits, qparams=qparams, codes=codes)
