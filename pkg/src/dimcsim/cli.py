"""Command-line front end: simulate workloads, run tiling/grouping sweeps,
and assemble/disassemble custom-instruction files.

Exit codes: 0 success, 1 verification mismatch, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import baseline, isa, mapper, metrics, oracle, sim
from .tile import PrecisionMode

BUILTIN_WORKLOADS = ("resnet50",)

_VERIFY_SEED = 0x0D13C


class WorkloadError(ValueError):
    """The workload file cannot be parsed; names the offending entry."""


@dataclass(frozen=True)
class WorkloadFile:
    """A named network: an ordered list of (name, LayerDescriptor)."""

    network: str
    entries: tuple


def _parse_precision(obj, where: str) -> PrecisionMode:
    if not isinstance(obj, dict):
        raise WorkloadError(f"{where}: precision must be an object")
    try:
        return PrecisionMode(bits=obj.get("bits", 4),
                             input_signed=obj.get("signed", True),
                             weight_signed=obj.get("signed_weights", obj.get("signed", True)))
    except ValueError as exc:
        raise WorkloadError(f"{where}: {exc}") from None


def load_workload(source) -> WorkloadFile:
    """Load a workload from a JSON path or a builtin name."""
    if isinstance(source, str) and source in BUILTIN_WORKLOADS:
        text = resources.files("dimcsim.workloads").joinpath(f"{source}.json").read_text()
    else:
        text = Path(source).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"{source}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise WorkloadError(f"{source}: expected an object with a 'layers' list")
    default_prec = _parse_precision(doc.get("default_precision", {}), f"{source}")
    entries = []
    for idx, item in enumerate(doc["layers"]):
        where = f"{source}: layer {idx}"
        if not isinstance(item, dict):
            raise WorkloadError(f"{where}: expected an object")
        name = item.get("name", f"layer{idx}")
        where = f"{source}: layer {idx} ({name})"
        prec = default_prec
        if "precision" in item:
            prec = _parse_precision(item["precision"], where)
        kwargs = {k: item[k] for k in ("ich", "och", "h", "w", "kh", "kw",
                                       "stride", "padding") if k in item}
        try:
            layer = mapper.LayerDescriptor(kind=item.get("kind", "conv"),
                                           precision=prec, **kwargs)
        except (mapper.MappingError, TypeError, ValueError) as exc:
            raise WorkloadError(f"{where}: {exc}") from None
        entries.append((name, layer))
    if not entries:
        raise WorkloadError(f"{source}: workload has no layers")
    return WorkloadFile(network=doc.get("network", "unnamed"), entries=tuple(entries))


def _random_tensors(layer: mapper.LayerDescriptor, seed: int):
    rng = np.random.default_rng(seed)
    lo, hi = layer.precision.input_range()
    inputs = rng.integers(lo, hi + 1, size=(layer.h, layer.w, layer.ich), dtype=np.int64)
    lo, hi = layer.precision.weight_range()
    weights = rng.integers(lo, hi + 1, size=(layer.och, layer.kh, layer.kw, layer.ich),
                           dtype=np.int64)
    return inputs, weights


def _verify_layer(name, layer, plan, timing, compressed_cycles, trace_dir):
    """Full functional run against the convolution reference.

    Returns an error string on mismatch, None when the layer checks out.
    """
    lowering = mapper.lower(layer, plan)
    inputs, weights = _random_tensors(layer, _VERIFY_SEED ^ zlib.crc32(name.encode()))
    trace = [] if trace_dir else None
    outcome, got = sim.run_layer(lowering, timing, inputs, weights, trace=trace)
    if outcome.total_cycles != compressed_cycles:
        return (f"{name}: loop-compressed cycles {compressed_cycles} "
                f"!= traced cycles {outcome.total_cycles}")
    want = oracle.quantize_partials(
        oracle.conv_partials(inputs, weights, layer.stride, layer.padding),
        lowering.quant)
    if trace_dir:
        sim.write_trace_csv(trace, Path(trace_dir) / f"{name}.csv")
    if not np.array_equal(got, want):
        bad = int(np.argwhere(got != want)[0][2])
        return f"{name}: output mismatch against the convolution reference (first bad channel {bad})"
    return None


def cmd_simulate(args) -> int:
    workload = load_workload(args.workload)
    timing = sim.TimingModel.from_json_file(args.timing) if args.timing else sim.TimingModel()
    if args.freq is not None:
        timing.freq_hz = args.freq
    if args.trace:
        Path(args.trace).mkdir(parents=True, exist_ok=True)
    reports = []
    ineligible = []
    failures = []
    for name, layer in workload.entries:
        try:
            plan = mapper.plan_mapping(layer)
        except mapper.NotDimcEligibleError as exc:
            ineligible.append((name, str(exc)))
            continue
        program = mapper.lower_compressed(layer, plan)
        outcome = sim.execute(program, timing)
        reports.append(metrics.build_report(
            name, mapper.ops_count(layer), outcome, baseline.baseline_cycles(layer),
            area_ratio=args.area_ratio, freq_hz=timing.freq_hz))
        if args.verify or args.trace:
            problem = _verify_layer(name, layer, plan, timing,
                                    outcome.total_cycles, args.trace)
            if problem:
                failures.append(problem)
    header = {
        "network": workload.network,
        "area_ratio": args.area_ratio,
        "freq_hz": timing.freq_hz,
        "memory_latency": timing.memory_latency,
        "latency": timing.latency,
    }
    if args.format == "json":
        metrics.write_report_json(reports, args.output, header=header,
                                  ineligible=ineligible)
    else:
        metrics.write_report_csv(reports, args.output)
    for name, reason in ineligible:
        print(f"ineligible: {name}: {reason}")
    print(f"{workload.network}: {len(reports)} layer(s) simulated, "
          f"{len(ineligible)} ineligible -> {args.output}")
    if failures:
        for line in failures:
            print(f"verification failed: {line}", file=sys.stderr)
        return 1
    return 0


# Sweep layer families: the tiling sweep grows the kernel depth with a fixed
# 32-kernel memory image, the grouping sweep grows the kernel count with a
# fixed single-row kernel.
_SWEEP_TILING_POINTS = (32, 64, 128, 256, 512)
_SWEEP_GROUPING_POINTS = (16, 32, 64, 128, 256)


def sweep_layer(mode: str, point: int, size: int) -> mapper.LayerDescriptor:
    if mode == "tiling":
        ich, och = point, 32
    else:
        ich, och = 32, point
    return mapper.LayerDescriptor(kind="conv", ich=ich, och=och, h=size, w=size,
                                  kh=2, kw=2)


def run_sweep(mode: str, points, size: int = 16,
              timing: sim.TimingModel | None = None):
    """Simulate the sweep family; returns rows shaped like SWEEP_COLUMNS."""
    timing = timing if timing is not None else sim.TimingModel()
    rows = []
    for point in points:
        layer = sweep_layer(mode, point, size)
        plan = mapper.plan_mapping(layer)
        outcome = sim.execute(mapper.lower_compressed(layer, plan), timing)
        base = baseline.baseline_cycles(layer)
        rows.append((point, plan.tiling_factor, plan.group_count,
                     outcome.total_cycles, base,
                     metrics.speedup(base, outcome.total_cycles),
                     metrics.gops(mapper.ops_count(layer), outcome.total_cycles,
                                  timing.freq_hz)))
    return rows


def cmd_sweep(args) -> int:
    points = args.points or (_SWEEP_TILING_POINTS if args.mode == "tiling"
                             else _SWEEP_GROUPING_POINTS)
    if any(p < 1 for p in points):
        raise WorkloadError(f"sweep points must be >= 1, got {points}")
    timing = sim.TimingModel.from_json_file(args.timing) if args.timing else sim.TimingModel()
    if args.freq is not None:
        timing.freq_hz = args.freq
    rows = run_sweep(args.mode, points, args.size, timing)
    metrics.write_sweep_csv(rows, args.output)
    print(f"{args.mode} sweep: {len(rows)} point(s) -> {args.output}")
    return 0


def cmd_asm(args) -> int:
    words = isa.assemble(Path(args.input).read_text())
    Path(args.output).write_bytes(isa.pack_words(words))
    print(f"{len(words)} instruction(s) -> {args.output}")
    return 0


def cmd_disasm(args) -> int:
    text = isa.disassemble(isa.unpack_words(Path(args.input).read_bytes()))
    if args.output:
        Path(args.output).write_text(text)
        print(f"-> {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimcsim",
        description="Simulator for a vector RISC-V core with an in-pipeline "
                    "digital in-memory-compute lane")
    sub = parser.add_subparsers(dest="command", required=True)

    sim_p = sub.add_parser("simulate", help="simulate a workload and emit a report")
    sim_p.add_argument("workload",
                       help=f"workload JSON path or builtin name {BUILTIN_WORKLOADS}")
    sim_p.add_argument("--timing", help="timing model JSON file")
    sim_p.add_argument("--area-ratio", type=float, default=metrics.DEFAULT_AREA_RATIO,
                       help="baseline/extended area ratio (default %(default)s)")
    sim_p.add_argument("--verify", action="store_true",
                       help="also run each layer functionally against the "
                            "convolution reference (slow for large layers)")
    sim_p.add_argument("--trace", metavar="DIR",
                       help="write per-layer event traces (implies full execution)")
    sim_p.add_argument("--format", choices=("csv", "json"), default="csv")
    sim_p.add_argument("--freq", type=float, default=None,
                       help="clock frequency in Hz (default 500e6)")
    sim_p.add_argument("-o", "--output", default="report.csv")
    sim_p.set_defaults(func=cmd_simulate)

    sweep_p = sub.add_parser("sweep", help="tiling or grouping degradation sweep")
    sweep_p.add_argument("mode", choices=("tiling", "grouping"))
    sweep_p.add_argument("--points", type=lambda s: tuple(int(x) for x in s.split(",")),
                         default=None, help="comma-separated channel counts")
    sweep_p.add_argument("--size", type=int, default=16,
                         help="input h = w of the sweep layers (default %(default)s)")
    sweep_p.add_argument("--timing", help="timing model JSON file")
    sweep_p.add_argument("--freq", type=float, default=None)
    sweep_p.add_argument("-o", "--output", default="sweep.csv")
    sweep_p.set_defaults(func=cmd_sweep)

    asm_p = sub.add_parser("asm", help="assemble instruction text to a binary stream")
    asm_p.add_argument("input")
    asm_p.add_argument("-o", "--output", required=True)
    asm_p.set_defaults(func=cmd_asm)

    dis_p = sub.add_parser("disasm", help="disassemble a binary stream")
    dis_p.add_argument("input")
    dis_p.add_argument("-o", "--output", default=None)
    dis_p.set_defaults(func=cmd_disasm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WorkloadError, mapper.MappingError, isa.AsmError, isa.DecodeError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
