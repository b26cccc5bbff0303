"""Memory-hierarchy cost model: tile planner, DMA/compute schedule, reports.

Models a two-level scratchpad hierarchy (L2 holding the full operands, L1
double-buffered for the working tiles) in front of a multi-core cluster. The
planner cuts each layer-step into tiles whose ping-pong working set fits L1;
the simulator prices each tile at a calibrated MAC/cycle rate and overlaps
compute with the DMA transfers of neighbouring tiles.

Two facts keep the model honest:

* tiles never split the contraction axis, so executing a plan tile by tile
  reproduces the untiled float32 result bit for bit (see execute_plan);
* efficiency numbers come from a table with per-entry provenance flags, so
  calibrated chart readings are never silently mixed with quoted figures.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

from . import workloads
from .workloads import LayerStepWork

L1_SIZES = (131072, 262144, 524288)
KINDS = ("pw", "dw", "linear")
CORE_COUNTS = (1, 2, 4, 8)


class InfeasiblePlanError(Exception):
    """A single minimal tile already exceeds half of L1."""


# ---------------------------------------------------------------------------
# Hierarchy description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HierarchyConfig:
    """Scratchpad sizes, DMA rates (bits/cycle), cluster shape, power.

    half_duplex models a single shared DMA channel: read and write cycles of
    a transfer slot add up, and dma_read_bw is the channel rate. Full duplex
    runs both directions concurrently at their own rates.
    """

    l1_bytes: int = 131072
    l2_bytes: int = 2 * 1024 * 1024
    dma_read_bw: float = 64.0
    dma_write_bw: float = 64.0
    cores: int = 8
    freq_hz: float = 375e6
    avg_power_w: float = 0.062
    dma_2d_strided: bool = True
    half_duplex: bool = False
    im2col_derate: float = 1.7

    def __post_init__(self):
        if self.l1_bytes <= 0 or self.l2_bytes < self.l1_bytes:
            raise ValueError("need 0 < l1_bytes <= l2_bytes")
        if self.dma_read_bw <= 0 or self.dma_write_bw <= 0:
            raise ValueError("DMA bandwidth must be positive")
        if self.cores not in CORE_COUNTS:
            raise ValueError(f"cores must be one of {CORE_COUNTS}")
        if self.freq_hz <= 0 or self.avg_power_w <= 0:
            raise ValueError("frequency and power must be positive")
        if self.im2col_derate < 1.0:
            raise ValueError("im2col derate is a latency multiplier >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HierarchyConfig":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# Kernel efficiency table
# ---------------------------------------------------------------------------

TABLE_FORMAT = "tinycl-efficiency-v1"

# 8-core MAC/cycle anchors by L1 size (128/256/512 kB), calibrated against
# published cluster benchmarks: "quoted" entries are stated numerically in
# the benchmark report, "chart" entries are read off its plots (lower
# precision), and single/low core counts are "scaled" from the quoted 7.2x
# parallel speedup (flat across L1, as measured for one core).
_ANCHORS_8C = {
    ("pw", "fw"): ((1.72, "chart"), (1.82, "chart"), (1.91, "quoted")),
    ("pw", "bw_err"): ((0.50, "chart"), (0.95, "chart"), (1.49, "quoted")),
    ("pw", "bw_grad"): ((0.30, "chart"), (0.63, "chart"), (1.03, "quoted")),
    ("dw", "fw"): ((0.85, "chart"), (0.92, "chart"), (1.00, "quoted")),
    ("dw", "bw_err"): ((0.40, "chart"), (0.55, "chart"), (0.70, "chart")),
    ("dw", "bw_grad"): ((0.30, "chart"), (0.42, "chart"), (0.54, "chart")),
    ("linear", "fw"): ((1.20, "chart"), (1.40, "chart"), (1.60, "chart")),
    ("linear", "bw_err"): ((0.45, "chart"), (0.80, "chart"), (1.25, "chart")),
    ("linear", "bw_grad"): ((0.28, "chart"), (0.55, "chart"), (0.90, "chart")),
}
_PEAK_SPEEDUP = 7.2
_CORE_SPEEDUP = {1: 1.0, 2: 1.95, 4: 3.8}


@dataclass
class KernelEfficiencyTable:
    """(kind, step, cores, l1_bytes) -> effective MAC/cycle, with provenance."""

    entries: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def set(self, kind, step, cores, l1_bytes, value, provenance="user"):
        key = (kind, step, int(cores), int(l1_bytes))
        self.entries[key] = float(value)
        self.provenance[key] = provenance

    def lookup(self, kind, step, cores, l1_bytes) -> float:
        key = (kind, step, int(cores), int(l1_bytes))
        if key not in self.entries:
            raise KeyError(
                f"no efficiency entry for kind={kind} step={step} "
                f"cores={cores} l1_bytes={l1_bytes}")
        return self.entries[key]

    def validate(self) -> None:
        """Entries must be positive and non-decreasing in the core count."""
        for key, value in self.entries.items():
            if not value > 0:
                raise ValueError(f"non-positive efficiency at {key}")
        by_series = {}
        for (kind, step, cores, l1), value in self.entries.items():
            by_series.setdefault((kind, step, l1), []).append((cores, value))
        for series_key, points in by_series.items():
            points.sort()
            for (c0, v0), (c1, v1) in zip(points, points[1:]):
                if v1 < v0:
                    raise ValueError(
                        f"efficiency not monotone in cores at {series_key}: "
                        f"{c0} cores -> {v0}, {c1} cores -> {v1}")

    def to_json(self) -> str:
        records = [
            {"kind": k, "step": s, "cores": c, "l1_bytes": l1,
             "mac_per_cycle": v, "provenance": self.provenance[(k, s, c, l1)]}
            for (k, s, c, l1), v in sorted(self.entries.items())
        ]
        return json.dumps({"format": TABLE_FORMAT, "entries": records},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "KernelEfficiencyTable":
        doc = json.loads(text)
        if doc.get("format") != TABLE_FORMAT:
            raise ValueError("not an efficiency table document")
        table = cls()
        for rec in doc["entries"]:
            table.set(rec["kind"], rec["step"], rec["cores"], rec["l1_bytes"],
                      rec["mac_per_cycle"], rec.get("provenance", "user"))
        table.validate()
        return table


def default_efficiency_table() -> KernelEfficiencyTable:
    table = KernelEfficiencyTable()
    for (kind, step), anchors in _ANCHORS_8C.items():
        for l1, (value, prov) in zip(L1_SIZES, anchors):
            table.set(kind, step, 8, l1, value, prov)
        # One core runs from L1-resident tiles at every size tested, so its
        # rate is flat across L1; the pw fw single-core point anchors the
        # quoted peak over the quoted speedup, the rest scale the smallest-L1
        # anchor (their L1 sensitivity is not resolvable below 8 cores).
        if (kind, step) == ("pw", "fw"):
            base = anchors[2][0] / _PEAK_SPEEDUP
        else:
            base = anchors[0][0] / _PEAK_SPEEDUP
        for cores, speedup in _CORE_SPEEDUP.items():
            for l1 in L1_SIZES:
                table.set(kind, step, cores, l1, base * speedup, "scaled")
    table.validate()
    return table


# ---------------------------------------------------------------------------
# Tile planner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tile:
    m0: int
    m1: int
    n0: int
    n1: int
    macs: int
    read_bytes: int
    write_bytes: int
    ws_bytes: int


@dataclass
class TilePlan:
    work: LayerStepWork
    l1_bytes: int
    strided_dma: bool
    rows_per_tile: int
    cols_per_tile: int
    tiles: list

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        """Tiles form an exact ascending grid partition and double-buffer in L1."""
        half = self.l1_bytes // 2
        expect_m = 0
        i = 0
        while expect_m < self.work.rows:
            expect_n = 0
            m1 = min(self.work.rows, expect_m + self.rows_per_tile)
            while expect_n < self.work.cols:
                t = self.tiles[i]
                n1 = min(self.work.cols, expect_n + self.cols_per_tile)
                if (t.m0, t.m1, t.n0, t.n1) != (expect_m, m1, expect_n, n1):
                    raise AssertionError(f"tile grid broken at index {i}")
                if 2 * t.ws_bytes > self.l1_bytes:
                    raise AssertionError(f"tile {i} does not double-buffer in L1")
                expect_n = n1
                i += 1
            expect_m = m1
        if i != len(self.tiles):
            raise AssertionError("extra tiles beyond the grid")

    def total_macs(self) -> int:
        return sum(t.macs for t in self.tiles)

    def total_bytes(self) -> int:
        return sum(t.read_bytes + t.write_bytes for t in self.tiles)

    def to_dict(self) -> dict:
        return {
            "work": self.work.name,
            "kind": self.work.kind,
            "step": self.work.step,
            "rows": self.work.rows,
            "cols": self.work.cols,
            "rows_per_tile": self.rows_per_tile,
            "cols_per_tile": self.cols_per_tile,
            "tile_count": len(self.tiles),
            "max_tile_ws_bytes": max(t.ws_bytes for t in self.tiles),
            "l1_bytes": self.l1_bytes,
            "macs": self.total_macs(),
            "dma_bytes": self.total_bytes(),
        }


def _grow(limit: int, fits) -> int:
    """Largest v in [1, limit] with fits(v) true; fits is monotone."""
    lo, hi = 1, limit
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def plan_tiles(work: LayerStepWork, hier: HierarchyConfig) -> TilePlan:
    """Greedy tiling: maximize the row (output-channel) extent first, then
    grow the column extent, under double buffering (2 x working set <= L1).
    The contraction axis is never split."""
    half = hier.l1_bytes // 2
    strided = hier.dma_2d_strided
    if work.ws_bytes(1, 1, strided) > half:
        foot = work.footprints(1, 1, strided)
        name, size = max(foot.items(), key=lambda kv: kv[1])
        raise InfeasiblePlanError(
            f"{work.name}: minimal tile needs {work.ws_bytes(1, 1, strided)} B "
            f"but half of L1 is {half} B; largest operand is {name} ({size} B)")
    mt = _grow(work.rows, lambda m: work.ws_bytes(m, 1, strided) <= half)
    nt = 1
    if work.cols > 1:
        nt = _grow(work.cols, lambda n: work.ws_bytes(mt, n, strided) <= half)
    tiles = []
    for m0 in range(0, work.rows, mt):
        m1 = min(work.rows, m0 + mt)
        for n0 in range(0, work.cols, nt):
            n1 = min(work.cols, n0 + nt)
            em, en = m1 - m0, n1 - n0
            tiles.append(Tile(
                m0, m1, n0, n1,
                macs=work.macs(em, en),
                read_bytes=work.read_bytes(em, en),
                write_bytes=work.write_bytes(em, en),
                ws_bytes=work.ws_bytes(em, en, strided),
            ))
    return TilePlan(work, hier.l1_bytes, strided, mt, nt, tiles)


def plan_stage(works, hier: HierarchyConfig) -> list:
    return [plan_tiles(w, hier) for w in works]


# ---------------------------------------------------------------------------
# Cost simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerStepCost:
    name: str
    kind: str
    step: str
    tiles: int
    macs: int
    bytes_moved: int
    compute_cycles: float
    dma_cycles: float
    overlapped_cycles: float
    mac_per_cycle: float


@dataclass
class CostReport:
    rows: list
    cycles: float
    compute_cycles: float
    dma_cycles: float
    macs: int
    bytes_moved: int
    latency_s: float
    energy_j: float
    effective_mac_per_cycle: float

    def tiling_overhead(self) -> float:
        """Schedule cycles beyond pure compute, as a fraction of compute."""
        return self.cycles / self.compute_cycles - 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "kind", "step", "tiles", "macs",
                         "bytes_moved", "compute_cycles", "dma_cycles",
                         "overlapped_cycles", "mac_per_cycle"])
        for r in self.rows:
            writer.writerow([r.name, r.kind, r.step, r.tiles, r.macs,
                             r.bytes_moved, f"{r.compute_cycles:.1f}",
                             f"{r.dma_cycles:.1f}",
                             f"{r.overlapped_cycles:.1f}",
                             f"{r.mac_per_cycle:.4f}"])
        writer.writerow(["total", "", "", sum(r.tiles for r in self.rows),
                         self.macs, self.bytes_moved,
                         f"{self.compute_cycles:.1f}", f"{self.dma_cycles:.1f}",
                         f"{self.cycles:.1f}",
                         f"{self.effective_mac_per_cycle:.4f}"])
        return buf.getvalue()


def _efficiency(table, work, hier) -> float:
    eff = table.lookup(work.kind, work.step, hier.cores, hier.l1_bytes)
    if (work.kind == "dw" and not hier.dma_2d_strided
            and work.step in ("fw", "bw_grad")):
        eff /= hier.im2col_derate  # software patch gathering on the cores
    return eff


def _schedule(compute, rd, wr, half_duplex) -> float:
    """Double-buffered pipeline: while tile i computes, tile i+1 streams in
    and tile i-1 streams out; every transfer is counted exactly once."""
    def slot(r, w):
        return r + w if half_duplex else max(r, w)

    count = len(compute)
    cycles = float(rd[0])
    for i in range(count):
        r_next = rd[i + 1] if i + 1 < count else 0
        w_prev = wr[i - 1] if i >= 1 else 0
        cycles += max(compute[i], slot(r_next, w_prev))
    return cycles + wr[-1]


def simulate(plans, table: KernelEfficiencyTable,
             hier: HierarchyConfig) -> CostReport:
    """Price plans (one TilePlan or a stage list) on the hierarchy."""
    if isinstance(plans, TilePlan):
        plans = [plans]
    if not plans:
        raise ValueError("nothing to simulate")
    rows = []
    for plan in plans:
        if plan.l1_bytes != hier.l1_bytes or plan.strided_dma != hier.dma_2d_strided:
            raise ValueError(f"{plan.work.name}: plan was made for a different hierarchy")
        eff = _efficiency(table, plan.work, hier)
        compute = [t.macs / eff for t in plan.tiles]
        rd = [math.ceil(t.read_bytes * 8 / hier.dma_read_bw) for t in plan.tiles]
        wr = [math.ceil(t.write_bytes * 8 / hier.dma_write_bw) for t in plan.tiles]
        overlapped = _schedule(compute, rd, wr, hier.half_duplex)
        macs = plan.total_macs()
        dma = float(sum(rd) + sum(wr))
        rows.append(LayerStepCost(
            name=plan.work.name, kind=plan.work.kind, step=plan.work.step,
            tiles=len(plan.tiles), macs=macs, bytes_moved=plan.total_bytes(),
            compute_cycles=sum(compute), dma_cycles=dma,
            overlapped_cycles=overlapped,
            mac_per_cycle=macs / overlapped,
        ))
    cycles = sum(r.overlapped_cycles for r in rows)
    macs = sum(r.macs for r in rows)
    latency = cycles / hier.freq_hz
    return CostReport(
        rows=rows,
        cycles=cycles,
        compute_cycles=sum(r.compute_cycles for r in rows),
        dma_cycles=sum(r.dma_cycles for r in rows),
        macs=macs,
        bytes_moved=sum(r.bytes_moved for r in rows),
        latency_s=latency,
        energy_j=latency * hier.avg_power_w,
        effective_mac_per_cycle=macs / cycles,
    )


def sweep_bandwidth(works, table: KernelEfficiencyTable, hier: HierarchyConfig,
                    bandwidths=(8, 16, 32, 64, 128)) -> list:
    """Effective MAC/cycle of the stage vs DMA bandwidth (bits/cycle), on a
    single half-duplex channel; plans are re-cut per point (they only depend
    on L1)."""
    out = []
    for bw in bandwidths:
        point = replace(hier, dma_read_bw=float(bw), dma_write_bw=float(bw),
                        half_duplex=True)
        report = simulate(plan_stage(works, point), table, point)
        out.append({
            "bandwidth_bits_per_cycle": float(bw),
            "effective_mac_per_cycle": report.effective_mac_per_cycle,
            "cycles": report.cycles,
            "latency_s": report.latency_s,
        })
    return out


def bandwidth_sweet_spot(sweep_rows, frac: float = 0.95) -> float:
    """Smallest swept bandwidth reaching frac of the highest-bandwidth rate."""
    top = sweep_rows[-1]["effective_mac_per_cycle"]
    for row in sweep_rows:
        if row["effective_mac_per_cycle"] >= frac * top:
            return row["bandwidth_bits_per_cycle"]
    return sweep_rows[-1]["bandwidth_bits_per_cycle"]


def sweep_to_csv(sweep_rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bandwidth_bits_per_cycle", "effective_mac_per_cycle",
                     "cycles", "latency_s"])
    for row in sweep_rows:
        writer.writerow([f"{row['bandwidth_bits_per_cycle']:g}",
                         f"{row['effective_mac_per_cycle']:.6f}",
                         f"{row['cycles']:.1f}", f"{row['latency_s']:.9f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Bit-exact tiled execution
# ---------------------------------------------------------------------------

def execute_plan(plan: TilePlan, ops: dict):
    """Run the plan tile by tile on real float32 operands and reassemble.

    Because no tile splits the contraction axis and every output element is
    produced by exactly one tile, the result equals the untiled computation
    bit for bit.
    """
    pieces = [
        workloads.run_tile(plan.work, ops, t.m0, t.m1, t.n0, t.n1)
        for t in plan.tiles
    ]
    return workloads.stitch_tiles(plan.work, plan.tiles, pieces)


# ---------------------------------------------------------------------------
# Memory, lifetime, and cross-platform reports
# ---------------------------------------------------------------------------

def replay_entry_bytes(elems: int, q_bits) -> int:
    if q_bits is None:
        return 4 * elems
    if not 1 <= q_bits <= 8:
        raise ValueError("stored replay width must be 1..8 bits or None")
    return (elems * q_bits + 7) // 8


def memory_breakdown(frozen_coeffs: int, adaptive_coeffs: int, act_elems: int,
                     n_lr: int, lr_elems: int, q_lr, batch: int = 1) -> dict:
    """Byte budget of a deployment: frozen coefficients live quantized at
    1 B each, adaptive coefficients and their gradients in float32, cached
    activations in float32, and the replay buffer bit-packed."""
    entry = replay_entry_bytes(lr_elems, q_lr)
    out = {
        "frozen_param_bytes": int(frozen_coeffs),
        "adaptive_param_bytes": 4 * int(adaptive_coeffs),
        "gradient_bytes": 4 * int(adaptive_coeffs),
        "activation_bytes": 4 * int(act_elems) * int(batch),
        "replay_entry_bytes": entry,
        "replay_bytes": int(n_lr) * entry,
    }
    out["total_bytes"] = (out["frozen_param_bytes"] + out["adaptive_param_bytes"]
                          + out["gradient_bytes"] + out["activation_bytes"]
                          + out["replay_bytes"])
    return out


def tail_memory_report(lr_layer: int, n_lr: int, q_lr=8, batch: int = 1) -> dict:
    """Memory breakdown for the reference backbone with the replay point at
    lr_layer."""
    return memory_breakdown(
        frozen_coeffs=workloads.frozen_stage_coeffs(lr_layer),
        adaptive_coeffs=workloads.adaptive_stage_coeffs(lr_layer),
        act_elems=workloads.adaptive_activation_elems(lr_layer),
        n_lr=n_lr,
        lr_elems=workloads.LR_ELEMS[lr_layer],
        q_lr=q_lr,
        batch=batch,
    )


def desk_memory_report(model, buffer, batch: int = 1) -> dict:
    """Memory breakdown for a desk-scale NetworkModel plus its live buffer."""
    split = model.split_index
    acts = 0
    shape = None
    for i in range(split, len(model.layers)):
        spec = model.layers[i]
        if shape is None:
            shape = buffer.vector_shape
        if spec.trainable:
            acts += int(math.prod(shape))
        if spec.kind == "pw":
            shape = (spec.cout,) + tuple(shape[1:])
        elif spec.kind == "dw":
            h = (shape[1] + 2 * spec.pad - spec.kernel) // spec.stride + 1
            w = (shape[2] + 2 * spec.pad - spec.kernel) // spec.stride + 1
            shape = (shape[0], h, w)
        elif spec.kind == "linear":
            shape = (spec.cout, 1, 1)
    return memory_breakdown(
        frozen_coeffs=model.param_count(0, split),
        adaptive_coeffs=model.param_count(split),
        act_elems=acts,
        n_lr=len(buffer),
        lr_elems=buffer.elems,
        q_lr=buffer.q_bits,
        batch=batch,
    )


def report_lifetime(energy_per_event_j: float, events_per_hour: float,
                    battery_mah: float = 3300.0, battery_v: float = 1.8) -> dict:
    """Battery life in hours at a given retraining rate. Zero events per
    hour means the budget is never drawn down (math.inf)."""
    if energy_per_event_j <= 0 or battery_mah <= 0 or battery_v <= 0:
        raise ValueError("energy and battery figures must be positive")
    if events_per_hour < 0:
        raise ValueError("events_per_hour must be >= 0")
    budget_j = battery_mah / 1000.0 * battery_v * 3600.0
    if events_per_hour == 0:
        hours = math.inf
    else:
        hours = budget_j / (energy_per_event_j * events_per_hour)
    return {
        "battery_joules": budget_j,
        "hours": hours,
        "events_per_hour": float(events_per_hour),
        "energy_per_event_j": float(energy_per_event_j),
        "note": "battery assumed at the cluster supply voltage "
                f"({battery_v:g} V)",
    }


# Published per-event retraining figures by replay point: the 8-core cluster
# at 375 MHz / 1.8 V (adaptive seconds, frozen-stage seconds, energy J), an
# 80 MHz Cortex-M4 MCU (total seconds, energy J), and a mobile SoC CPU where
# reported. All are literature constants, not simulator outputs.
REFERENCE_RESULTS = {
    20: {"cluster_adaptive_s": 2.49e3, "cluster_frozen_s": 0.87,
         "cluster_energy_j": 154.0, "mcu_total_s": 1.65e5,
         "mcu_energy_j": 5688.0, "mobile_soc_s": None},
    21: {"cluster_adaptive_s": 1.73e3, "cluster_frozen_s": 0.94,
         "cluster_energy_j": 107.0, "mcu_total_s": 1.15e5,
         "mcu_energy_j": 3981.0, "mobile_soc_s": None},
    22: {"cluster_adaptive_s": 1.64e3, "cluster_frozen_s": 0.95,
         "cluster_energy_j": 101.0, "mcu_total_s": 1.08e5,
         "mcu_energy_j": 3728.0, "mobile_soc_s": None},
    23: {"cluster_adaptive_s": 8.77e2, "cluster_frozen_s": 1.03,
         "cluster_energy_j": 54.3, "mcu_total_s": 5.86e4,
         "mcu_energy_j": 2020.0, "mobile_soc_s": None},
    24: {"cluster_adaptive_s": 7.81e2, "cluster_frozen_s": 1.03,
         "cluster_energy_j": 48.4, "mcu_total_s": 5.12e4,
         "mcu_energy_j": 1769.0, "mobile_soc_s": None},
    25: {"cluster_adaptive_s": 4.01e2, "cluster_frozen_s": 1.09,
         "cluster_energy_j": 24.9, "mcu_total_s": 2.65e4,
         "mcu_energy_j": 915.0, "mobile_soc_s": None},
    26: {"cluster_adaptive_s": 3.81e2, "cluster_frozen_s": 1.10,
         "cluster_energy_j": 23.5, "mcu_total_s": 2.49e4,
         "mcu_energy_j": 859.0, "mobile_soc_s": None},
    27: {"cluster_adaptive_s": 2.07, "cluster_frozen_s": 1.25,
         "cluster_energy_j": 0.13, "mcu_total_s": 1.39e2,
         "mcu_energy_j": 4.80, "mobile_soc_s": 0.50},
}


def compare_targets(latency_s: float, energy_j: float, lr_layer: int) -> dict:
    """Speedup and energy ratios of a per-event (latency, energy) pair
    against the published MCU and mobile-SoC figures for the same replay
    point."""
    if latency_s <= 0 or energy_j <= 0:
        raise ValueError("latency and energy must be positive")
    if lr_layer not in REFERENCE_RESULTS:
        raise ValueError(f"no published figures for replay point {lr_layer}")
    ref = REFERENCE_RESULTS[lr_layer]
    out = {
        "lr_layer": lr_layer,
        "latency_s": float(latency_s),
        "energy_j": float(energy_j),
        "baselines": {
            "mcu": {
                "label": "80 MHz MCU (literature constant)",
                "speedup": ref["mcu_total_s"] / latency_s,
                "energy_ratio": ref["mcu_energy_j"] / energy_j,
            },
        },
    }
    if ref["mobile_soc_s"] is not None:
        out["baselines"]["mobile_soc"] = {
            "label": "mobile SoC CPU (literature constant)",
            "speedup": ref["mobile_soc_s"] / latency_s,
            "energy_ratio": None,
        }
    return out


def reference_comparison(lr_layer: int) -> dict:
    """compare_targets evaluated at the published cluster figures themselves."""
    ref = REFERENCE_RESULTS[lr_layer]
    return compare_targets(ref["cluster_adaptive_s"], ref["cluster_energy_j"],
                           lr_layer)
