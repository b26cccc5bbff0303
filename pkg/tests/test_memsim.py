"""Tile planner, cost model, and report tests.

Expected constants here were derived by hand from the workload shapes (tile
extents, byte counts, MAC counts) or are published figures the reports must
reproduce; sweep numbers are pinned after checking them against the quoted
plateau and sweet spots.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycl import memsim, workloads
from tinycl.dataset import desk_layer_specs
from tinycl.memsim import (
    HierarchyConfig,
    InfeasiblePlanError,
    KernelEfficiencyTable,
    default_efficiency_table,
)
from tinycl.rng import Rng
from tinycl.workloads import LayerStepWork, pw_works


@pytest.fixture(scope="module")
def table():
    return default_efficiency_table()


@pytest.fixture(scope="module")
def stage19():
    return workloads.adaptive_stage_works(19)


# ---------------------------------------------------------------------------
# Workload pricing oracles (hand-computed from the shapes)
# ---------------------------------------------------------------------------

def test_stage_structure():
    works = workloads.adaptive_stage_works(19)
    assert len(works) == 24  # layers 20..27, three steps each
    assert works[0].name == "l20.fw"
    assert works[-1].name == "l27.bw_grad"
    assert workloads.adaptive_layer_indices(27) == [27]
    assert workloads.adaptive_layer_indices(19) == list(range(20, 28))
    with pytest.raises(ValueError):
        workloads.adaptive_layer_indices(18)


def test_pw_pricing_hand_values():
    fw = workloads.tail_layer_works(20)[0]
    assert fw.total_macs() == 512 * 512 * 64
    # full-extent traffic: weights + input + bias, then the output write
    assert fw.read_bytes(512, 64) == 4 * (512 * 512 + 512 * 64 + 512)
    assert fw.write_bytes(512, 64) == 4 * 512 * 64


def test_dw_pricing_hand_values():
    fw19 = workloads.tail_layer_works(19)[0]
    assert fw19.total_macs() == 512 * 9 * 64
    fw23 = workloads.tail_layer_works(23)[0]
    assert (fw23.h_out, fw23.w_out) == (4, 4)  # stride 2 halves 8x8
    assert fw23.total_macs() == 512 * 9 * 16


def test_linear_pricing_hand_values():
    fw, bwe, bwg = workloads.tail_layer_works(27)
    assert fw.total_macs() == 50 * 1024
    assert bwe.total_macs() == 1024 * 50
    assert bwg.total_macs() == 50 * 1024  # outer product, k == 1


def test_latent_elems_match_layer_outputs():
    for idx in range(19, 27):
        kind, cin, cout, h, w, stride = workloads.TAIL_SHAPES[idx]
        ho, wo = (h // stride, w // stride) if kind == "dw" else (h, w)
        assert workloads.LR_ELEMS[idx] == cout * ho * wo
    assert workloads.LR_ELEMS[27] == 1024  # pooled vector ahead of the classifier


def test_backbone_coefficient_totals():
    total = sum(workloads.BACKBONE_COEFFS.values())
    assert total == 3247282
    assert workloads.adaptive_stage_coeffs(27) == 51250
    assert workloads.frozen_stage_coeffs(27) == total - 51250
    for l in range(19, 28):
        assert (workloads.frozen_stage_coeffs(l)
                + workloads.adaptive_stage_coeffs(l)) == total


def test_desk_spec_works():
    specs = desk_layer_specs()
    works = workloads.works_from_specs(specs, (1, 32, 32), start=14)
    names = [w.name for w in works]
    assert names[:3] == ["l14.fw", "l14.bw_err", "l14.bw_grad"]
    assert len(works) == 9  # dw, pw, linear tails of the desk net
    dw = works[0]
    assert (dw.h_in, dw.h_out) == (8, 4)  # stride-2 tail on the 8x8 latent


# ---------------------------------------------------------------------------
# Efficiency table
# ---------------------------------------------------------------------------

def test_default_table_published_anchors(table):
    assert table.lookup("pw", "fw", 8, 524288) == pytest.approx(1.91)
    # backward steps cost 22% / 46% more cycles than forward at best L1
    ratio_err = table.lookup("pw", "bw_err", 8, 524288) / 1.91
    ratio_grad = table.lookup("pw", "bw_grad", 8, 524288) / 1.91
    assert ratio_err == pytest.approx(0.78, abs=0.005)
    assert ratio_grad == pytest.approx(0.54, abs=0.005)
    assert table.lookup("dw", "fw", 8, 524288) == pytest.approx(1.0)
    table.validate()


def test_table_single_core_flat_and_monotone(table):
    for kind in memsim.KINDS:
        for step in workloads.STEPS:
            vals = [table.lookup(kind, step, 1, l1) for l1 in memsim.L1_SIZES]
            assert vals[0] == vals[1] == vals[2]
            for l1 in memsim.L1_SIZES:
                series = [table.lookup(kind, step, c, l1) for c in (1, 2, 4, 8)]
                assert series == sorted(series)


def test_table_json_round_trip(table):
    text = table.to_json()
    back = KernelEfficiencyTable.from_json(text)
    assert back.entries == table.entries
    assert back.provenance == table.provenance
    with pytest.raises(ValueError):
        KernelEfficiencyTable.from_json('{"format": "something-else"}')


def test_table_missing_entry_and_validation():
    table = default_efficiency_table()
    with pytest.raises(KeyError):
        table.lookup("pw", "fw", 8, 100000)
    bad = KernelEfficiencyTable()
    bad.set("pw", "fw", 1, 131072, 2.0)
    bad.set("pw", "fw", 8, 131072, 1.0)  # fewer MAC/cyc on more cores
    with pytest.raises(ValueError):
        bad.validate()
    zero = KernelEfficiencyTable()
    zero.set("pw", "fw", 1, 131072, 0.0)
    with pytest.raises(ValueError):
        zero.validate()


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------

def test_plan_pw_tile_extents():
    # 512x512 over 64 positions at 128 kB: rows capped by the half-L1
    # inequality m*(cin + 2) + cin <= 16384 floats -> 30 rows, 1 column.
    work = pw_works("l20", 512, 512, 8, 8)[0]
    plan = memsim.plan_tiles(work, HierarchyConfig())
    assert (plan.rows_per_tile, plan.cols_per_tile) == (30, 1)
    assert len(plan.tiles) == math.ceil(512 / 30) * 64
    for t in plan.tiles:
        assert 2 * t.ws_bytes <= plan.l1_bytes
    assert plan.total_macs() == work.total_macs()


def test_plan_grows_cols_after_rows():
    # all 8 output rows fit, so the spatial extent grows next:
    # 8*512 + 512n + 8 + 8n <= 16384 -> n = 23
    work = pw_works("small", 512, 8, 8, 8)[0]
    plan = memsim.plan_tiles(work, HierarchyConfig())
    assert (plan.rows_per_tile, plan.cols_per_tile) == (8, 23)


def test_plan_dw_tiles_channels_only(stage19):
    for work in stage19:
        if work.kind != "dw":
            continue
        plan = memsim.plan_tiles(work, HierarchyConfig())
        assert plan.cols_per_tile == 1 and work.cols == 1
        assert sum(t.m1 - t.m0 for t in plan.tiles) == work.channels


def test_infeasible_plan_names_operand():
    work = pw_works("huge", 40000, 512, 8, 8)[0]
    with pytest.raises(InfeasiblePlanError) as err:
        memsim.plan_tiles(work, HierarchyConfig())
    assert "weights" in str(err.value)
    assert "huge.fw" in str(err.value)


def test_explicit_im2col_shrinks_dw_tiles(stage19):
    dw_fw = next(w for w in stage19 if w.name == "l21.fw")
    strided = memsim.plan_tiles(dw_fw, HierarchyConfig())
    explicit = memsim.plan_tiles(dw_fw, HierarchyConfig(dma_2d_strided=False))
    assert explicit.rows_per_tile < strided.rows_per_tile


@settings(max_examples=40, deadline=None)
@given(
    cin=st.integers(4, 700),
    cout=st.integers(1, 700),
    side=st.integers(1, 12),
    l1=st.sampled_from(memsim.L1_SIZES),
)
def test_plan_partition_property(cin, cout, side, l1):
    work = pw_works("prop", cin, cout, side, side)[0]
    hier = HierarchyConfig(l1_bytes=l1)
    try:
        plan = memsim.plan_tiles(work, hier)
    except InfeasiblePlanError:
        assert work.ws_bytes(1, 1) > l1 // 2
        return
    area = sum((t.m1 - t.m0) * (t.n1 - t.n0) for t in plan.tiles)
    assert area == work.rows * work.cols
    assert plan.total_macs() == work.total_macs()
    assert max(2 * t.ws_bytes for t in plan.tiles) <= l1


# ---------------------------------------------------------------------------
# Bit-exact tiled execution
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("l1", memsim.L1_SIZES)
def test_tiled_execution_bit_exact(stage19, l1):
    hier = HierarchyConfig(l1_bytes=l1)
    rng = Rng(7, "tiled-exec")
    for work in stage19:
        ops = workloads.make_operands(work, rng.child(f"{work.name}-{l1}"))
        ref = workloads.run_untiled(work, ops)
        got = memsim.execute_plan(memsim.plan_tiles(work, hier), ops)
        assert got.shape == ref.shape
        assert np.array_equal(got, ref), work.name


def test_tiled_execution_matches_layer_module():
    # the pw fw work and the layers-module forward agree on the same operands
    from tinycl.layers import LayerSpec, forward_layer

    rng = Rng(11, "exec-vs-layer")
    work = pw_works("x", 64, 48, 4, 4)[0]
    ops = workloads.make_operands(work, rng)
    plan = memsim.plan_tiles(work, HierarchyConfig())
    tiled = memsim.execute_plan(plan, ops)
    spec = LayerSpec("pw", cin=64, cout=48)
    x = ops["x"].reshape(64, 1, 4, 4).transpose(1, 0, 2, 3)
    ref = forward_layer(spec, {"w": ops["w"], "b": ops["b"]},
                        np.ascontiguousarray(x))
    assert np.array_equal(tiled.reshape(48, 4, 4), ref[0])


# ---------------------------------------------------------------------------
# Cost simulation
# ---------------------------------------------------------------------------

def test_schedule_bounds(stage19, table):
    hier = HierarchyConfig()
    plans = memsim.plan_stage(stage19, hier)
    report = memsim.simulate(plans, table, hier)
    for plan, row in zip(plans, report.rows):
        eff = table.lookup(plan.work.kind, plan.work.step, hier.cores,
                           hier.l1_bytes)
        lower = serial = 0.0
        for t in plan.tiles:
            c = t.macs / eff
            r = math.ceil(t.read_bytes * 8 / hier.dma_read_bw)
            w = math.ceil(t.write_bytes * 8 / hier.dma_write_bw)
            lower += max(c, max(r, w))
            serial += c + r + w
        assert lower <= row.overlapped_cycles <= serial
        assert row.macs == plan.total_macs()


def test_tiling_overhead_small_at_reference_point(stage19, table):
    report = memsim.simulate(memsim.plan_stage(stage19, HierarchyConfig()),
                             table, HierarchyConfig())
    assert 0.0 <= report.tiling_overhead() <= 0.10


def test_single_tile_layer_has_prologue_epilogue_only(table):
    work = pw_works("tiny", 16, 16, 2, 2)[0]
    hier = HierarchyConfig()
    plan = memsim.plan_tiles(work, hier)
    assert len(plan.tiles) == 1
    report = memsim.simulate(plan, table, hier)
    t = plan.tiles[0]
    eff = table.lookup("pw", "fw", hier.cores, hier.l1_bytes)
    expect = (math.ceil(t.read_bytes * 8 / hier.dma_read_bw)
              + t.macs / eff
              + math.ceil(t.write_bytes * 8 / hier.dma_write_bw))
    assert report.cycles == pytest.approx(expect, rel=1e-12)


def test_im2col_derate_exact(stage19, table):
    dw_works_ = [w for w in stage19 if w.kind == "dw"]
    strided = HierarchyConfig()
    soft = HierarchyConfig(dma_2d_strided=False)
    rep_s = memsim.simulate(memsim.plan_stage(dw_works_, strided), table, strided)
    rep_x = memsim.simulate(memsim.plan_stage(dw_works_, soft), table, soft)
    for rs, rx in zip(rep_s.rows, rep_x.rows):
        ratio = rx.compute_cycles / rs.compute_cycles
        if rs.step in ("fw", "bw_grad"):
            assert ratio == pytest.approx(1.7, rel=1e-9)
        else:
            assert ratio == pytest.approx(1.0, rel=1e-9)


def test_latency_monotone_in_cores_and_bandwidth(stage19, table):
    for bw in (8.0, 64.0):
        latencies = []
        for cores in (1, 2, 4, 8):
            hier = HierarchyConfig(cores=cores, dma_read_bw=bw,
                                   dma_write_bw=bw)
            rep = memsim.simulate(memsim.plan_stage(stage19, hier), table, hier)
            latencies.append(rep.latency_s)
        assert latencies == sorted(latencies, reverse=True)
    sweep = memsim.sweep_bandwidth(stage19, table, HierarchyConfig())
    cycles = [row["cycles"] for row in sweep]
    assert cycles == sorted(cycles, reverse=True)


def test_simulate_rejects_mismatched_plan(stage19, table):
    plan = memsim.plan_tiles(stage19[0], HierarchyConfig())
    with pytest.raises(ValueError):
        memsim.simulate(plan, table, HierarchyConfig(l1_bytes=262144))


# ---------------------------------------------------------------------------
# Bandwidth sweep against the published operating points
# ---------------------------------------------------------------------------

def test_sweep_plateau_and_sweet_spots(stage19, table):
    spots = {}
    for cores in (1, 2, 4, 8):
        sweep = memsim.sweep_bandwidth(stage19, table,
                                       HierarchyConfig(cores=cores))
        effs = [r["effective_mac_per_cycle"] for r in sweep]
        assert effs == sorted(effs)  # more bandwidth never hurts
        spots[cores] = memsim.bandwidth_sweet_spot(sweep)
        if cores == 1:
            assert min(effs) >= 0.98 * max(effs)  # flat already at 8 bit/cyc
        if cores == 8:
            top = effs[-1]
            assert top == pytest.approx(0.52, rel=0.15)
            assert effs[3] >= 0.99 * top  # saturated from 64 bit/cyc on
            assert effs[0] == pytest.approx(0.2367, abs=5e-4)
            assert top == pytest.approx(0.5062, abs=5e-4)
    assert spots[2] == 16.0
    assert spots[4] == 32.0
    assert spots[8] == 64.0


def test_single_core_flat_across_l1(stage19, table):
    effs = []
    for l1 in memsim.L1_SIZES:
        hier = HierarchyConfig(cores=1, l1_bytes=l1)
        rep = memsim.simulate(memsim.plan_stage(stage19, hier), table, hier)
        effs.append(rep.effective_mac_per_cycle)
    assert max(effs) / min(effs) < 1.005


def test_sweep_csv_shape(stage19, table):
    rows = memsim.sweep_bandwidth(stage19, table, HierarchyConfig(),
                                  bandwidths=(8, 64))
    text = memsim.sweep_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == ("bandwidth_bits_per_cycle,effective_mac_per_cycle,"
                        "cycles,latency_s")
    assert len(lines) == 3
    assert lines[1].startswith("8,0.")


def test_cost_report_csv(stage19, table):
    hier = HierarchyConfig()
    rep = memsim.simulate(memsim.plan_stage(stage19[:3], hier), table, hier)
    lines = rep.to_csv().strip().split("\n")
    assert lines[0].startswith("name,kind,step,tiles,")
    assert lines[-1].startswith("total,")
    assert len(lines) == 5


# ---------------------------------------------------------------------------
# Memory, lifetime, and cross-platform reports
# ---------------------------------------------------------------------------

def test_replay_bytes_exact():
    assert memsim.tail_memory_report(27, 3000, 8)["replay_bytes"] == 3_072_000
    assert memsim.tail_memory_report(19, 1500, 8)["replay_bytes"] == 49_152_000
    q8 = memsim.tail_memory_report(19, 1500, 8)["replay_bytes"]
    fp = memsim.tail_memory_report(19, 1500, None)["replay_bytes"]
    assert fp == 4 * q8
    assert memsim.replay_entry_bytes(32768, 7) == 28672
    assert memsim.replay_entry_bytes(32768, 6) == 24576
    assert memsim.replay_entry_bytes(3, 6) == 3  # ceil(18 / 8)


def test_memory_breakdown_components():
    report = memsim.tail_memory_report(27, 3000, 8)
    assert report["frozen_param_bytes"] == 3196032  # 1 B per frozen coeff
    assert report["adaptive_param_bytes"] == 4 * 51250
    assert report["gradient_bytes"] == 4 * 51250
    assert report["activation_bytes"] == 4 * 1024
    assert report["total_bytes"] == sum(
        v for k, v in report.items()
        if k not in ("total_bytes", "replay_entry_bytes"))


def test_desk_memory_report_matches_model():
    from tinycl.dataset import make_desk_model
    from tinycl.quantize import QuantParams
    from tinycl.replay import ReplayBuffer

    model = make_desk_model(Rng(0, "desk-mem"))
    buffer = ReplayBuffer(lr_layer=model.split_index, vector_shape=(64, 8, 8),
                          labels=np.zeros(5, np.int64), q_bits=8,
                          qparams=QuantParams(8, 1.0, signed=False),
                          codes=np.zeros((5, 4096), np.uint8))
    report = memsim.desk_memory_report(model, buffer)
    assert report["frozen_param_bytes"] == model.param_count(0, model.split_index)
    assert report["replay_bytes"] == 5 * 4096
    # cached inputs: dw64 at 8x8, pw 64->128 at 4x4, linear on 2048
    assert report["activation_bytes"] == 4 * (64 * 64 + 64 * 16 + 2048)


def test_lifetime_hours():
    report = memsim.report_lifetime(0.13, 1080.0)
    expect = (3.3 * 1.8 * 3600.0) / (0.13 * 1080.0)
    assert report["hours"] == pytest.approx(expect, rel=1e-12)
    assert report["hours"] == pytest.approx(152.3, abs=0.05)
    assert math.isinf(memsim.report_lifetime(0.13, 0.0)["hours"])
    with pytest.raises(ValueError):
        memsim.report_lifetime(0.0, 10.0)
    with pytest.raises(ValueError):
        memsim.report_lifetime(0.13, -1.0)


def test_compare_targets_published_ratios():
    cmp23 = memsim.reference_comparison(23)
    assert cmp23["baselines"]["mcu"]["speedup"] == pytest.approx(66.8, rel=0.01)
    assert cmp23["baselines"]["mcu"]["energy_ratio"] == pytest.approx(37.2,
                                                                      rel=0.01)
    assert "mobile_soc" not in cmp23["baselines"]
    cmp27 = memsim.reference_comparison(27)
    assert cmp27["baselines"]["mobile_soc"]["speedup"] == pytest.approx(
        0.50 / 2.07, rel=1e-9)
    speedups = [memsim.reference_comparison(l)["baselines"]["mcu"]["speedup"]
                for l in range(20, 28)]
    assert sum(speedups) / len(speedups) == pytest.approx(66, abs=2)
    with pytest.raises(ValueError):
        memsim.compare_targets(1.0, 1.0, 19)
    with pytest.raises(ValueError):
        memsim.compare_targets(0.0, 1.0, 23)


def test_hierarchy_config_validation_and_json():
    hier = HierarchyConfig(cores=4, l1_bytes=262144)
    back = HierarchyConfig.from_json(hier.to_json())
    assert back == hier
    with pytest.raises(ValueError):
        HierarchyConfig(cores=3)
    with pytest.raises(ValueError):
        HierarchyConfig(l1_bytes=0)
    with pytest.raises(ValueError):
        HierarchyConfig(l2_bytes=1024)
    with pytest.raises(ValueError):
        HierarchyConfig(im2col_derate=0.5)
