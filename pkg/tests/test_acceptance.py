"""Acceptance suite: the nine shipped guarantees, one test per criterion.

Run `pytest tests/test_acceptance.py -v` to get one pass/fail line per
criterion. Criterion 8 trains a 5-seed x 5-variant continual-learning
matrix at desk scale (shared initial phase per seed) and dominates the
runtime at roughly 80 seconds; everything else finishes in seconds.
"""

import copy
import json
import math
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from tinycl import cli, memsim, tensor
from tinycl.dataset import make_desk_dataset, make_desk_model
from tinycl.layers import LayerSpec, NetworkModel, backward_error_layer, softmax_xent
from tinycl.memsim import HierarchyConfig, default_efficiency_table
from tinycl.quantize import act_params, dequantize, fake_quant, quantize, weight_params
from tinycl.replay import ProtocolConfig, run_protocol, train_initial_phase
from tinycl.rng import Rng
from tinycl.workloads import LR_ELEMS, adaptive_stage_works, make_operands, run_untiled

import oracles


# ---------------------------------------------------------------------------
# 1. Gradient correctness
# ---------------------------------------------------------------------------

_NETS = [
    ([LayerSpec("pw", 3, 5), LayerSpec("relu"),
      LayerSpec("linear", cin=5 * 16, cout=3)], (2, 3, 4, 4)),
    ([LayerSpec("dw", 3, 3, kernel=3, stride=1, pad=1), LayerSpec("relu"),
      LayerSpec("linear", cin=3 * 16, cout=3)], (2, 3, 4, 4)),
    ([LayerSpec("dw", 4, 4, kernel=3, stride=2, pad=1), LayerSpec("relu"),
      LayerSpec("linear", cin=4 * 4 * 4, cout=3)], (2, 4, 7, 7)),
    ([LayerSpec("linear", cin=10, cout=6), LayerSpec("relu"),
      LayerSpec("linear", cin=6, cout=4)], (3, 10)),
]


def _kink_free_instance(specs, x_shape, seed):
    # Central differences are invalid across ReLU kinks; reject instances
    # (deterministically) until every pre-activation clears 10x the FD step.
    for attempt in range(50):
        model = NetworkModel.create(specs, 0, Rng(seed + 91 * attempt, "m"))
        rng = Rng(seed + 91 * attempt, "data")
        x = rng.normal(x_shape)
        caches = []
        model.forward(x, caches=caches)
        margins = [np.abs(caches[i]).min()
                   for i, s in enumerate(model.layers) if s.kind == "relu"]
        if min(margins) > 1e-2:
            return model, x, rng
    pytest.fail("no kink-free instance found")


def test_criterion_1_gradient_correctness():
    # >= 20 random instances spanning pw, dw stride 1, dw stride 2, and
    # linear layers; parameter and input gradients both checked against
    # float64 central differences (step 1e-3) at rel err <= 1e-3, in < 1 min.
    t0 = time.monotonic()
    tensors_checked = 0
    for case in range(20):
        specs, x_shape = _NETS[case % 4]
        model, x, rng = _kink_free_instance(specs, x_shape, seed=4000 + case)
        labels = rng.integers(0, specs[-1].cout, size=x_shape[0]).astype(np.int64)
        loss, grads = model.loss_and_grads(x, labels, start=0)
        ref = oracles.ref_loss(specs, model.params, x, labels, start=0)
        assert abs(loss - ref) <= 1e-5 * max(1.0, abs(ref))
        for i, g in grads.items():
            for name in ("w", "b"):
                fd = oracles.fd_param_grad(specs, model.params, x, labels, i, name)
                err = oracles.rel_err(fd, g[name])
                assert err <= 1e-3, f"case {case} layer {i} {name}: rel err {err:.2e}"
                tensors_checked += 1
        # input gradient through the whole stack; the training path never
        # needs the first layer's bw_err, so chain it explicitly here
        caches = []
        logits = model.forward(x, caches=caches)
        _, gy = softmax_xent(logits, labels)
        for i in range(len(specs) - 1, -1, -1):
            gy = backward_error_layer(specs[i], model.params[i], caches[i], gy)
        err = oracles.rel_err(oracles.fd_input_grad(specs, model.params, x, labels), gy)
        assert err <= 1e-3, f"case {case} input grad: rel err {err:.2e}"
    assert tensors_checked == 80  # w and b for both trainable layers, 20 cases
    assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# 2. Quantization bounds
# ---------------------------------------------------------------------------

def test_criterion_2_quantization_bounds():
    # 1e5 random in-range values per grid and width: round-trip error within
    # half a step, re-quantization idempotent, zero and endpoint codes exact.
    rng = Rng(11, "acceptance-quant")
    n = 100_000
    for q in (6, 7, 8):
        a_max = 3.7
        pa = act_params(a_max, q)
        xs = rng.uniform(0.0, a_max, (n,))
        assert np.abs(fake_quant(xs, pa) - xs).max() <= pa.scale / 2 + 1e-6
        codes = quantize(xs, pa)
        assert np.array_equal(quantize(dequantize(codes, pa), pa), codes)
        assert int(quantize(np.float32(0.0), pa)) == 0
        assert int(quantize(np.float32(a_max), pa)) == 2 ** q - 1

        w = rng.normal((4096,), scale=0.2)
        pw = weight_params(w, q)
        assert pw.scale == pytest.approx(
            (float(w.max()) - float(w.min())) / (2 ** q - 1), rel=1e-6)
        ws = rng.uniform(pw.value_min, pw.value_max, (n,))
        assert np.abs(fake_quant(ws, pw) - ws).max() <= pw.scale / 2 + 1e-6
        cw = quantize(ws, pw)
        assert np.array_equal(quantize(dequantize(cw, pw), pw), cw)
        assert int(quantize(np.float32(0.0), pw)) == 0
        assert int(quantize(np.float32(pw.value_max), pw)) == 2 ** (q - 1) - 1

        # every representable code survives a dequantize/quantize cycle
        all_u = np.arange(0, 2 ** q, dtype=np.uint8)
        assert np.array_equal(quantize(dequantize(all_u, pa), pa), all_u)
        all_s = np.arange(pw.code_min, pw.code_max + 1, dtype=np.int8)
        assert np.array_equal(quantize(dequantize(all_s, pw), pw), all_s)


# ---------------------------------------------------------------------------
# 3. Tiled execution matches untiled bit for bit
# ---------------------------------------------------------------------------

def test_criterion_3_tiled_matches_untiled():
    # Every benchmark tail workload (all three steps per layer), under each
    # supported L1 size: identical bits, and every tile double-buffers.
    rng = Rng(5, "acceptance-tiles")
    works = adaptive_stage_works(19)
    for l1 in memsim.L1_SIZES:
        hier = HierarchyConfig(l1_bytes=l1)
        for work in works:
            plan = memsim.plan_tiles(work, hier)
            assert 2 * max(t.ws_bytes for t in plan.tiles) <= l1
            ops = make_operands(work, rng.child(f"{work.name}.{work.step}.{l1}"))
            ref = run_untiled(work, ops)
            got = memsim.execute_plan(plan, ops)
            assert got.dtype == ref.dtype
            assert np.array_equal(got, ref), f"{work.name} {work.step} @ L1={l1}"


# ---------------------------------------------------------------------------
# 4. Memory accounting
# ---------------------------------------------------------------------------

def test_criterion_4_memory_accounting():
    # Exact byte counts for the two published buffer configurations, and the
    # exact 4x float32-vs-8-bit storage ratio.
    assert memsim.replay_entry_bytes(LR_ELEMS[27], 8) == 1024
    assert memsim.tail_memory_report(27, 3000, 8)["replay_bytes"] == 3_072_000
    assert 3_072_000 <= 4 * 2 ** 20

    assert memsim.tail_memory_report(19, 1500, 8)["replay_bytes"] == 49_152_000
    assert 49_152_000 < 128 * 2 ** 20

    q8 = memsim.tail_memory_report(19, 1500, 8)["replay_bytes"]
    fp32 = memsim.tail_memory_report(19, 1500, None)["replay_bytes"]
    assert fp32 == 4 * q8


# ---------------------------------------------------------------------------
# 5. Cost-model operating points
# ---------------------------------------------------------------------------

def test_criterion_5_cost_model_operating_points():
    table = default_efficiency_table()
    works = adaptive_stage_works(19)

    # 8 cores / 128 kB: plateau from 64 bit/cycle at ~0.52 MAC/cycle
    sweep = memsim.sweep_bandwidth(works, table, HierarchyConfig(cores=8))
    effs = {r["bandwidth_bits_per_cycle"]: r["effective_mac_per_cycle"]
            for r in sweep}
    assert effs[64.0] == pytest.approx(0.52, rel=0.15)
    assert effs[64.0] >= 0.99 * effs[128.0]

    # bandwidth sweet spots per core count
    spots = {
        cores: memsim.bandwidth_sweet_spot(
            memsim.sweep_bandwidth(works, table, HierarchyConfig(cores=cores)))
        for cores in (2, 4, 8)
    }
    assert spots == {2: 16.0, 4: 32.0, 8: 64.0}

    # single-core throughput does not depend on L1 capacity
    one_core = []
    for l1 in memsim.L1_SIZES:
        hier = HierarchyConfig(cores=1, l1_bytes=l1)
        rep = memsim.simulate(memsim.plan_stage(works, hier), table, hier)
        one_core.append(rep.effective_mac_per_cycle)
    assert max(one_core) / min(one_core) < 1.005

    # double-buffered pipeline keeps tiling overhead within the 10% budget
    hier = HierarchyConfig()
    rep = memsim.simulate(memsim.plan_stage(works, hier), table, hier)
    assert 0.0 <= rep.tiling_overhead() <= 0.10


# ---------------------------------------------------------------------------
# 6. Deployment comparison constants
# ---------------------------------------------------------------------------

def test_criterion_6_comparison_constants():
    cmp23 = memsim.reference_comparison(23)["baselines"]["mcu"]
    assert cmp23["speedup"] == pytest.approx(66.8, rel=0.01)
    assert cmp23["energy_ratio"] == pytest.approx(37.2, rel=0.01)
    # the split-point average stays in the published "about 66x" band
    speedups = [memsim.reference_comparison(l)["baselines"]["mcu"]["speedup"]
                for l in memsim.REFERENCE_RESULTS]
    assert np.mean(speedups) == pytest.approx(66.0, abs=2.0)


# ---------------------------------------------------------------------------
# 7. Battery-lifetime model
# ---------------------------------------------------------------------------

def test_criterion_7_lifetime_model():
    base = memsim.report_lifetime(0.13, 1080.0)
    hours = base["hours"]
    assert hours == pytest.approx(3.3 * 1.8 * 3600 / (0.13 * 1080), rel=1e-12)
    assert hours == pytest.approx(152.31, abs=0.05)
    # within a quarter of the published week-long figure; the residual gap is
    # the unstated battery voltage, recorded in the report's note field
    assert abs(hours - 175.0) / 175.0 <= 0.25
    assert "voltage" in base["note"]

    # exact proportionality in every operand
    half = memsim.report_lifetime(0.26, 1080.0)["hours"]
    assert half == pytest.approx(hours / 2, rel=1e-12)
    assert memsim.report_lifetime(0.13, 2160.0)["hours"] == pytest.approx(
        hours / 2, rel=1e-12)
    assert memsim.report_lifetime(0.13, 1080.0, battery_mah=6600.0)["hours"] == \
        pytest.approx(2 * hours, rel=1e-12)
    assert memsim.report_lifetime(0.13, 1080.0, battery_v=3.6)["hours"] == \
        pytest.approx(2 * hours, rel=1e-12)
    assert math.isinf(memsim.report_lifetime(0.13, 0.0)["hours"])


# ---------------------------------------------------------------------------
# 8. Continual-learning behavior at desk scale
# ---------------------------------------------------------------------------

_SEEDS = (0, 1, 2, 3, 4)
_VARIANTS = {
    "naive": dict(q_lr=8, n_lr=0),    # fine-tuning, no rehearsal
    "fp32": dict(q_lr=None, n_lr=200),
    "q8": dict(q_lr=8, n_lr=200),
    "q7": dict(q_lr=7, n_lr=200),
    "q6": dict(q_lr=6, n_lr=200),
}


@pytest.fixture(scope="module")
def desk_matrix():
    # One shared initial phase per seed (identical across variants by
    # construction: rng streams are keyed by (seed, path), so the event
    # phase draws the same numbers whether or not the initial phase ran in
    # the same process), then each replay variant trains from a deep copy.
    base = ProtocolConfig(lr=0.1)
    out = {name: {"finals": [], "olds": []} for name in _VARIANTS}
    for seed in _SEEDS:
        data = make_desk_dataset(seed)
        model0 = make_desk_model(Rng(seed, "model"))
        train_initial_phase(model0, data.initial_x, data.initial_y,
                            replace(base, seed=seed),
                            Rng(seed, "protocol").child("initial"))
        for name, kw in _VARIANTS.items():
            model = copy.deepcopy(model0)
            cfg = replace(base, seed=seed, epochs_initial=0, **kw)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # n_lr=0 deliberately warns
                res = run_protocol(model, data, cfg)
            out[name]["finals"].append(res.final_accuracy)
            out[name]["olds"].append(res.old_class_accuracy)
    return out


def test_criterion_8_continual_learning(desk_matrix):
    mean = {name: {k: float(np.mean(v)) for k, v in d.items()}
            for name, d in desk_matrix.items()}

    # (a) rehearsal rescues previously seen classes by far more than 10 points
    assert mean["naive"]["olds"] == 0.0
    assert mean["q8"]["olds"] - mean["naive"]["olds"] > 0.10
    # (b) 8-bit replays within 2 points of float32; with the shared
    # inference grid they are in fact bit-identical run for run
    assert abs(mean["q8"]["finals"] - mean["fp32"]["finals"]) <= 0.02
    assert desk_matrix["q8"]["finals"] == desk_matrix["fp32"]["finals"]
    assert desk_matrix["q8"]["olds"] == desk_matrix["fp32"]["olds"]
    # (c) 7-bit replays cost at most 6 points
    assert mean["fp32"]["finals"] - mean["q7"]["finals"] <= 0.06
    # (d) accuracy is monotone in stored replay precision (seed-averaged)
    assert (mean["fp32"]["finals"] >= mean["q8"]["finals"]
            >= mean["q7"]["finals"] >= mean["q6"]["finals"])

    # pinned deterministic 5-seed means
    assert mean["fp32"]["finals"] == pytest.approx(0.9465, abs=1e-6)
    assert mean["q7"]["finals"] == pytest.approx(0.9400, abs=1e-6)
    assert mean["q6"]["finals"] == pytest.approx(0.9315, abs=1e-6)
    assert mean["fp32"]["olds"] == pytest.approx(0.98125, abs=1e-6)
    assert mean["q7"]["olds"] == pytest.approx(0.9750, abs=1e-6)
    assert mean["q6"]["olds"] == pytest.approx(0.9500, abs=1e-6)


# ---------------------------------------------------------------------------
# 9. Determinism
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    # Re-running a command with the same config and seed is byte-identical,
    # even when the matmul kernel uses a different number of workers.
    config = {
        "seed": 3,
        "n_lr": 80,
        "dataset": {"initial_per_class": 40, "test_per_class": 10,
                    "samples_per_event": 20, "events": 6},
        "protocol": {"lr": 0.1, "events": 6, "samples_per_event": 20,
                     "epochs_initial": 8},
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(config))
    out1, out2 = tmp_path / "w1", tmp_path / "w3"

    saved = tensor.get_workers()
    try:
        a = Rng(9, "det").normal((37, 53))
        b = Rng(10, "det").normal((53, 29))
        tensor.set_workers(1)
        r1 = tensor.matmul(a, b)
        tensor.set_workers(4)
        assert np.array_equal(tensor.matmul(a, b), r1)

        tensor.set_workers(1)
        assert cli.main(["run-protocol", "--config", str(cfg_path),
                         "--out-dir", str(out1)]) == 0
        tensor.set_workers(3)
        assert cli.main(["run-protocol", "--config", str(cfg_path),
                         "--out-dir", str(out2)]) == 0
        first = {n: (out2 / n).read_bytes()
                 for n in ("trace.csv", "summary.json",
                           "run-protocol_manifest.json")}
        # rerun in place: every artifact, manifest included, is unchanged
        assert cli.main(["run-protocol", "--config", str(cfg_path),
                         "--out-dir", str(out2)]) == 0
    finally:
        tensor.set_workers(saved)

    for name in ("trace.csv", "summary.json"):
        assert (out1 / name).read_bytes() == first[name]
    for name, data in first.items():
        assert (out2 / name).read_bytes() == data
