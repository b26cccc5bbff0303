"""Command-line front end: reproducible experiments from one JSON config.

Each command wraps one pipeline stage (calibrate, freeze, build-replays,
run-protocol) or one modeling stage (plan, simulate, report), reads a single
experiment config, and drops its outputs plus a manifest into the configured
output directory. A manifest records the config hash, any flag overrides,
the effective config, the seed, and tool versions, so every artifact can be
regenerated from the manifest alone. Re-running a command with the same
config and seed rewrites byte-identical files.

Exit codes: 0 success, 2 config/schema error, 4 infeasible tile plan,
3 missing input file or artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, memsim, workloads
from .dataset import (DESK_SPLIT_INDEX, DeskTaskConfig, make_desk_dataset,
                      make_desk_model)
from .layers import load_model, save_model
from .memsim import (HierarchyConfig, InfeasiblePlanError,
                     KernelEfficiencyTable, default_efficiency_table)
from .quantize import (CalibrationStats, calibrate, freeze_and_quantize,
                       load_frozen, save_frozen)
from .replay import (ProtocolConfig, build_replay_buffer, run_protocol,
                     save_buffer, trace_to_csv, train_initial_phase)
from .rng import Rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_INFEASIBLE = 4

_REPORT_DEFAULTS = {
    "energy_per_event_j": 0.13,
    "events_per_hour": 1080.0,
    "battery_mah": 3300.0,
    "battery_v": 1.8,
    "tail_n_lr": 3000,
}


class ConfigError(Exception):
    """Schema or value problem in the experiment config."""


class MissingInputError(Exception):
    """A referenced path or upstream artifact does not exist."""


# ---------------------------------------------------------------------------
# Experiment config
# ---------------------------------------------------------------------------

_TOP_KEYS = {"seed", "out_dir", "split_index", "q_bits", "q_lr", "n_lr",
             "lr_layer", "dataset", "protocol", "hierarchy",
             "efficiency_table", "model_path", "report"}
# these ProtocolConfig fields are set from the top level, once
_PROTOCOL_RESERVED = {"seed", "q_bits", "q_lr", "n_lr"}


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    split_index: int
    q_bits: int
    q_lr: int | None
    n_lr: int
    lr_layer: int
    dataset: DeskTaskConfig
    protocol: ProtocolConfig
    hierarchy: HierarchyConfig
    efficiency_table: str | None
    model_path: str | None
    report: dict = field(default_factory=lambda: dict(_REPORT_DEFAULTS))

    def to_dict(self) -> dict:
        return asdict(self)  # nested dataclasses recurse


def _build_config(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    protocol_raw = dict(raw.get("protocol") or {})
    reserved = _PROTOCOL_RESERVED & set(protocol_raw)
    if reserved:
        raise ConfigError(
            f"protocol keys {sorted(reserved)} are set from the top level")
    if "lr" not in protocol_raw:
        raise ConfigError("protocol.lr is required")
    seed = int(raw.get("seed", 0))
    q_lr_raw = raw.get("q_lr", 8)
    q_lr = None if q_lr_raw is None else int(q_lr_raw)
    try:
        dataset = DeskTaskConfig(**(raw.get("dataset") or {}))
        hierarchy = HierarchyConfig(**(raw.get("hierarchy") or {}))
        protocol = ProtocolConfig(
            seed=seed,
            q_bits=int(raw.get("q_bits", 8)),
            q_lr=q_lr,
            n_lr=int(raw.get("n_lr", 200)),
            **protocol_raw,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for name, ours, theirs in (
        ("events", dataset.events, protocol.events),
        ("samples_per_event", dataset.samples_per_event,
         protocol.samples_per_event),
        ("num_classes", dataset.num_classes, protocol.total_classes),
        ("initial_classes", dataset.initial_classes,
         protocol.initial_classes),
    ):
        if ours != theirs:
            raise ConfigError(
                f"dataset/protocol disagree on {name}: {ours} vs {theirs}")
    report = dict(_REPORT_DEFAULTS)
    bad = set(raw.get("report") or {}) - set(_REPORT_DEFAULTS)
    if bad:
        raise ConfigError(f"unknown report keys: {sorted(bad)}")
    report.update(raw.get("report") or {})
    cfg = ExperimentConfig(
        seed=seed,
        out_dir=str(raw.get("out_dir", "runs/exp")),
        split_index=int(raw.get("split_index", DESK_SPLIT_INDEX)),
        q_bits=int(raw.get("q_bits", 8)),
        q_lr=q_lr,
        n_lr=int(raw.get("n_lr", 200)),
        lr_layer=int(raw.get("lr_layer", 19)),
        dataset=dataset,
        protocol=protocol,
        hierarchy=hierarchy,
        efficiency_table=raw.get("efficiency_table"),
        model_path=raw.get("model_path"),
        report=report,
    )
    if cfg.q_lr is not None and not 1 <= int(cfg.q_lr) <= 8:
        raise ConfigError("q_lr must be null (float32) or 1..8 bits")
    if cfg.lr_layer not in workloads.TAIL_SHAPES:
        raise ConfigError(
            f"lr_layer must be one of {sorted(workloads.TAIL_SHAPES)}")
    for label in ("efficiency_table", "model_path"):
        path = getattr(cfg, label)
        if path is not None and not Path(path).exists():
            raise MissingInputError(f"{label} does not exist: {path}")
    return cfg


def _apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text  # bare strings allowed
    if isinstance(value, (dict, list)):
        raise ConfigError(f"override {key!r} must be a scalar")
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a scalar")
    node[parts[-1]] = value


def load_config(path: str, args) -> tuple:
    """Read the config file, apply flag overrides, build the dataclasses.

    Returns (config, sha256 of the file bytes, overrides actually applied).
    """
    file = Path(path)
    if not file.exists():
        raise MissingInputError(f"config file not found: {path}")
    blob = file.read_bytes()
    try:
        raw = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    overrides = {}
    for item in args.set or []:
        _apply_override(raw, item)
        overrides[item.split("=", 1)[0]] = item.split("=", 1)[1]
    if args.seed is not None:
        raw["seed"] = args.seed
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
        overrides["out_dir"] = args.out_dir
    return _build_config(raw), hashlib.sha256(blob).hexdigest(), overrides


# ---------------------------------------------------------------------------
# Manifest and small helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig,
                    config_sha: str, overrides: dict, outputs: list) -> None:
    _write_json(out / f"{command}_manifest.json", {
        "command": command,
        "config_sha256": config_sha,
        "overrides": overrides,
        "effective_config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "tinycl": __version__,
        },
        "outputs": sorted(outputs),
    })


def _fresh_model(cfg: ExperimentConfig):
    if cfg.model_path is not None:
        return load_model(cfg.model_path)
    return make_desk_model(Rng(cfg.seed, "model"), cfg.split_index)


def _dataset(cfg: ExperimentConfig):
    return make_desk_dataset(cfg.seed, cfg.dataset)


def _load_table(cfg: ExperimentConfig) -> KernelEfficiencyTable:
    if cfg.efficiency_table is None:
        return default_efficiency_table()
    try:
        return KernelEfficiencyTable.from_json(
            Path(cfg.efficiency_table).read_text())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad efficiency table: {exc}") from exc


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing {path} (run `tinycl {hint}` first)")
    return path


# ---------------------------------------------------------------------------
# Commands. Each returns the list of files it wrote (relative to out_dir).
# ---------------------------------------------------------------------------

def cmd_calibrate(cfg: ExperimentConfig, out: Path) -> list:
    """Train the base network on the initial classes (unless a checkpoint is
    reused) and record activation ranges over the initial set."""
    data = _dataset(cfg)
    model = _fresh_model(cfg)
    if cfg.model_path is None:
        train_initial_phase(model, data.initial_x, data.initial_y,
                            cfg.protocol, Rng(cfg.seed, "protocol").child("initial"))
    stats = calibrate(model, data.initial_x)
    save_model(model, out / "model")
    (out / "calibration.json").write_text(stats.to_json())
    return ["model/model.json", "calibration.json"]


def cmd_freeze(cfg: ExperimentConfig, out: Path) -> list:
    model = load_model(_require(out / "model", "calibrate"))
    stats = CalibrationStats.from_json(
        _require(out / "calibration.json", "calibrate").read_text())
    frozen = freeze_and_quantize(model, stats, cfg.q_bits)
    save_frozen(frozen, out / "frozen")
    return ["frozen/frozen.json"]


def cmd_build_replays(cfg: ExperimentConfig, out: Path) -> list:
    frozen = load_frozen(_require(out / "frozen", "freeze"))
    data = _dataset(cfg)
    buffer = build_replay_buffer(
        frozen, data.initial_x, data.initial_y, cfg.n_lr, cfg.q_lr,
        Rng(cfg.seed, "protocol").child("buffer"))
    save_buffer(buffer, out / "replays.bin")
    return ["replays.bin"]


def cmd_run_protocol(cfg: ExperimentConfig, out: Path) -> list:
    data = _dataset(cfg)
    result = run_protocol(_fresh_model(cfg), data, cfg.protocol)
    (out / "trace.csv").write_text(trace_to_csv(result.rows))
    _write_json(out / "summary.json", {
        "final_accuracy": result.final_accuracy,
        "old_class_accuracy": result.old_class_accuracy,
        "per_class_accuracy": [float(v) for v in result.per_class_accuracy],
        "replay_bytes": result.buffer.payload_nbytes(),
        "replay_entries": len(result.buffer),
    })
    return ["trace.csv", "summary.json"]


def cmd_plan(cfg: ExperimentConfig, out: Path) -> list:
    plans = memsim.plan_stage(workloads.adaptive_stage_works(cfg.lr_layer),
                              cfg.hierarchy)
    _write_json(out / "plans.json", {
        "lr_layer": cfg.lr_layer,
        "l1_bytes": cfg.hierarchy.l1_bytes,
        "plans": [p.to_dict() for p in plans],
    })
    return ["plans.json"]


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> list:
    table = _load_table(cfg)
    works = workloads.adaptive_stage_works(cfg.lr_layer)
    plans = memsim.plan_stage(works, cfg.hierarchy)
    report = memsim.simulate(plans, table, cfg.hierarchy)
    (out / "cost.csv").write_text(report.to_csv())
    sweep = memsim.sweep_bandwidth(works, table, cfg.hierarchy)
    (out / "sweep.csv").write_text(memsim.sweep_to_csv(sweep))
    _write_json(out / "simulate.json", {
        "lr_layer": cfg.lr_layer,
        "cycles": report.cycles,
        "latency_s": report.latency_s,
        "energy_j": report.energy_j,
        "effective_mac_per_cycle": report.effective_mac_per_cycle,
        "tiling_overhead": report.tiling_overhead(),
        "bandwidth_sweet_spot": memsim.bandwidth_sweet_spot(sweep),
    })
    return ["cost.csv", "sweep.csv", "simulate.json"]


def cmd_report(cfg: ExperimentConfig, out: Path) -> list:
    """Pareto table of replay storage vs final accuracy over stored widths
    (float32, 8, 7, 6 bits), plus memory/lifetime/platform blocks."""
    rows = []
    for q_lr in (None, 8, 7, 6):
        proto = replace(cfg.protocol, q_lr=q_lr)
        result = run_protocol(_fresh_model(cfg), _dataset(cfg), proto)
        rows.append({
            "q_lr": "fp32" if q_lr is None else str(q_lr),
            "replay_bytes": result.buffer.payload_nbytes(),
            "final_accuracy": result.final_accuracy,
            "old_class_accuracy": result.old_class_accuracy,
        })
    buf = io.StringIO()
    buf.write("q_lr,replay_bytes,final_accuracy,old_class_accuracy\n")
    for r in rows:
        buf.write(f"{r['q_lr']},{r['replay_bytes']},"
                  f"{r['final_accuracy']:.6f},{r['old_class_accuracy']:.6f}\n")
    (out / "pareto.csv").write_text(buf.getvalue())

    rep = cfg.report
    doc = {
        "pareto": rows,
        "memory": memsim.tail_memory_report(cfg.lr_layer,
                                            int(rep["tail_n_lr"]), cfg.q_lr),
        "lifetime": memsim.report_lifetime(
            rep["energy_per_event_j"], rep["events_per_hour"],
            rep["battery_mah"], rep["battery_v"]),
        "reference_comparison": {
            str(l): memsim.reference_comparison(l)
            for l in sorted(memsim.REFERENCE_RESULTS)
        },
    }
    if math.isinf(doc["lifetime"]["hours"]):
        doc["lifetime"]["hours"] = "unbounded"  # JSON has no infinity
    _write_json(out / "report.json", doc)
    return ["pareto.csv", "report.json"]


COMMANDS = {
    "calibrate": (cmd_calibrate,
                  "train the base model and record activation ranges"),
    "freeze": (cmd_freeze,
               "quantize the frozen stage from the calibration artifacts"),
    "build-replays": (cmd_build_replays,
                      "fill and save the latent replay buffer"),
    "run-protocol": (cmd_run_protocol,
                     "run the class-incremental protocol, write the trace"),
    "plan": (cmd_plan, "cut tile plans for the adaptive-stage workloads"),
    "simulate": (cmd_simulate,
                 "price the plans and sweep DMA bandwidth"),
    "report": (cmd_report,
               "storage/accuracy Pareto plus memory, lifetime, platforms"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinycl",
        description="continual learning with quantized latent replays, and "
                    "a tile/DMA cost model for small memory hierarchies")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (fn, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True,
                        help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out-dir", default=None,
                        help="override the config output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scalar config field by dotted path, "
                             "e.g. --set protocol.lr=0.05 or --set q_lr=null")
        sp.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, config_sha, overrides = load_config(args.config, args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        outputs = args.fn(cfg, out)
        _write_manifest(out, args.command, cfg, config_sha, overrides,
                        outputs + [f"{args.command}_manifest.json"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except InfeasiblePlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
