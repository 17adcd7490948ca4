"""
Command-line front end: python mxsim.py <subcommand> [flags]

Subcommands: formats, quantize, mac-trace, simulate, footprint, compare, train.
Results go to stdout (or --out); logs go to stderr. Exit codes: 0 ok,
1 invalid input or arguments, 2 contract violation.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from app.config import configure_logging, get_settings
from app.core.gemm_core import CoreConfig, core_summary, simulate_training_iteration
from app.core.mac_datapath import MacMode, MacVariant, run_mac_steps, scripted_operands
from app.core.mx_formats import ALL_FORMATS, get_format
from app.core.mx_quant import get_geometry, get_orientation, quantization_error_stats, quantize_matrix
from app.core.workload import PUSHER_BATCHES, load_workload, pusher_workload
from app.errors import ContractViolationError, InvalidInputError, MxSimError
from app.services.cost_models import comparison_report, footprint_table
from app.services.train_harness import TrainConfig, curve_rows, run_training, sweep_formats
from app.utils.reports import emit, to_json, to_json_lines
from app.utils.serialization import (
    format_descriptor,
    quantized_debug_dump,
    read_matrix,
    serialize_quantized,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_CONTRACT_VIOLATION = 2

FORMAT_COLUMNS = ["name", "total_bits", "exp_bits", "mant_bits", "bias", "emax", "max_finite", "min_finite", "has_inf", "has_nan"]
FOOTPRINT_COLUMNS = ["label", "batch", "W", "A", "Wt", "At", "Erow", "Ecol", "total", "ratio_vs_fp32"]
SIM_COLUMNS = ["stage", "compute_cycles", "stall_cycles", "total_cycles", "utilization", "bw_used_bits_per_cycle"]
COMPARE_COLUMNS = ["mode", "format", "dacapo_precision", "latency_us", "published_latency_us", "dacapo_latency_us", "speedup_vs_dacapo", "memory_kb"]
CURVE_COLUMNS = ["epoch", "loss", "wall_time", "simulated_time_us"]

# worked examples for mac-trace without a script file (raw element codes)
BUILTIN_SCRIPTS = {
    "int8-ones": {"mode": "int8", "format": "INT8", "codes": True, "steps": [{"a": [1], "b": [1]}] * 8},
    "fp4-ones": {"mode": "fp4", "format": "FP4_E2M1", "codes": True, "steps": [{"a": [0b0010] * 8, "b": [0b0010] * 8}]},
}


class CliArgumentError(InvalidInputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise CliArgumentError(message)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def _workload(args):
    if args.batch is not None and args.batch < 1:
        raise InvalidInputError(f"--batch must be positive, got {args.batch}")
    if args.workload:
        return load_workload(args.workload, batch=args.batch)
    return pusher_workload(args.batch or 32)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_formats(args) -> int:
    rows = [format_descriptor(f) for f in ALL_FORMATS]
    _write(emit(rows, FORMAT_COLUMNS, args.emit), args.out)
    return EXIT_OK


def cmd_quantize(args) -> int:
    matrix = read_matrix(args.input)
    fmt = get_format(args.format)
    geometry = get_geometry(args.geometry)
    orientation = get_orientation(args.orientation) if args.orientation else None
    qm = quantize_matrix(matrix, fmt, geometry, orientation)
    stats = quantization_error_stats(matrix, qm)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(serialize_quantized(qm))
        logger.info(f"Wrote {qm.block_count} blocks to {path}")
    document = {
        "rows": qm.rows,
        "cols": qm.cols,
        "format": fmt.name.value,
        "geometry": str(geometry),
        "orientation": qm.orientation.value,
        "stats": stats,
    }
    if args.dump:
        document["dump"] = quantized_debug_dump(qm)
    if args.emit == "json":
        sys.stdout.write(to_json(document))
    else:
        sys.stdout.write(emit([{"metric": k, "value": v} for k, v in stats.items()], ["metric", "value"], args.emit))
    return EXIT_OK


def _load_script(args) -> dict:
    if args.script:
        path = Path(args.script)
        if not path.is_file():
            raise InvalidInputError(f"MAC script not found: {path}")
        try:
            script = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise InvalidInputError(f"MAC script {path} is not valid JSON/YAML: {e}") from e
    else:
        script = BUILTIN_SCRIPTS.get(args.example)
        if script is None:
            raise InvalidInputError(f"unknown example '{args.example}' (choose from {sorted(BUILTIN_SCRIPTS)})")
    if not isinstance(script, dict) or not isinstance(script.get("steps"), list):
        raise InvalidInputError("MAC script must be an object with a 'steps' list")
    return script


def cmd_mac_trace(args) -> int:
    script = _load_script(args)
    mode = MacMode.parse(args.mode or script.get("mode", "int8"), args.format or script.get("format"))
    variant = MacVariant.from_name(args.variant)
    steps = scripted_operands(script["steps"], mode, as_codes=bool(script.get("codes", False)))
    _, traces = run_mac_steps(steps, mode, variant)
    _write(to_json_lines(traces), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    workload = _workload(args)
    fmt = args.format or workload.format
    mode = MacMode.parse(args.mode, fmt) if args.mode else MacMode.for_format(fmt or "INT8")
    cfg = CoreConfig(mode=mode, overlap_writeback=args.overlap_writeback, freq_mhz=args.freq_mhz or get_settings().freq_mhz)
    report = simulate_training_iteration(cfg, workload)
    document = {"core": core_summary(cfg), "report": report}
    _write(emit(report.stages, SIM_COLUMNS, args.emit, decimals={"utilization": 4, "bw_used_bits_per_cycle": 1}, document=document), args.out)
    return EXIT_OK


def cmd_footprint(args) -> int:
    workload = _workload(args)
    batches = PUSHER_BATCHES if args.all_batches else (workload.batch,)
    rows = [row for batch in batches for row in footprint_table(workload.with_batch(batch))]
    table = [
        {
            "label": r.label,
            "batch": r.batch,
            **{k: ("reuse A" if k == "Erow" and r.row_errors_reuse_act else r.display[k]) for k in ("W", "A", "Wt", "At", "Erow", "Ecol")},
            "total": r.display_total,
            "ratio_vs_fp32": r.ratio_vs_fp32,
        }
        for r in rows
    ]
    decimals = {k: 1 for k in ("W", "A", "Wt", "At", "Erow", "Ecol", "total")}
    decimals["ratio_vs_fp32"] = 2
    _write(emit(table, FOOTPRINT_COLUMNS, args.emit, decimals=decimals, document=rows), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    report = comparison_report(_workload(args))
    decimals = {k: 2 for k in ("latency_us", "published_latency_us", "dacapo_latency_us", "speedup_vs_dacapo", "memory_kb")}
    _write(emit(report.modes, COMPARE_COLUMNS, args.emit, decimals=decimals, document=report), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    settings = get_settings()
    workload = _workload(args)
    fmt = None if (args.format or "fp32").lower() == "fp32" else args.format
    config = TrainConfig(
        format=fmt,
        geometry=args.geometry,
        lr=args.lr,
        epochs=args.epochs,
        iterations_per_epoch=args.iterations,
        seed=settings.seed if args.seed is None else args.seed,
        activation=args.activation,
        engine=args.engine or settings.train_engine,
        fail_on_divergence=args.fail_on_divergence,
        record_wall_time=args.record_wall_time,
    )
    if args.sweep:
        results = sweep_formats(config, workload)
        rows = [
            {"format": name, **point}
            for name, result in results.items()
            for point in curve_rows(result)
        ]
        _write(emit(rows, ["format"] + CURVE_COLUMNS, args.emit, decimals={"loss": 6, "wall_time": 3, "simulated_time_us": 2},
                    document=list(results.values())), args.out)
        return EXIT_OK
    result = run_training(config, workload)
    _write(emit(curve_rows(result), CURVE_COLUMNS, args.emit, decimals={"loss": 6, "wall_time": 3, "simulated_time_us": 2},
                document=result), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mxsim", description="MX edge training simulator")
    parser.add_argument("--log-level", default=None, help="override MXSIM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, emit_default="json"):
        p.add_argument("--emit", choices=["json", "csv", "md"], default=emit_default)
        p.add_argument("--out", default=None, help="write output to this file instead of stdout")

    def workload_flags(p):
        p.add_argument("--workload", default=None, help="workload descriptor (JSON/YAML); default pusher")
        p.add_argument("--batch", type=int, default=None)

    p = sub.add_parser("formats", help="element format descriptors")
    common(p)
    p.set_defaults(func=cmd_formats)

    p = sub.add_parser("quantize", help="quantize a matrix file")
    p.add_argument("--input", required=True, help="CSV or raw FP32 matrix")
    p.add_argument("--format", required=True)
    p.add_argument("--geometry", default="square")
    p.add_argument("--orientation", default=None)
    p.add_argument("--dump", action="store_true", help="include per-block scales and codes")
    common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("mac-trace", help="run scripted MAC steps and emit JSON-lines traces")
    p.add_argument("--script", default=None, help="JSON/YAML steps file")
    p.add_argument("--example", default="int8-ones", help=f"built-in script: {', '.join(sorted(BUILTIN_SCRIPTS))}")
    p.add_argument("--mode", default=None)
    p.add_argument("--format", default=None)
    p.add_argument("--variant", default="ext-bypass")
    p.add_argument("--emit", choices=["json"], default="json", help="JSON lines, one record per step")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_mac_trace)

    p = sub.add_parser("simulate", help="latency of one training iteration on the GeMM core")
    workload_flags(p)
    p.add_argument("--mode", default=None)
    p.add_argument("--format", default=None)
    p.add_argument("--freq-mhz", type=int, default=None)
    p.add_argument("--overlap-writeback", action="store_true")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("footprint", help="training memory footprint table")
    workload_flags(p)
    p.add_argument("--all-batches", action="store_true", help="rows for batches " + "/".join(map(str, PUSHER_BATCHES)))
    common(p)
    p.set_defaults(func=cmd_footprint)

    p = sub.add_parser("compare", help="ours vs Dacapo comparison")
    workload_flags(p)
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train", help="quantized training on the synthetic dynamics task")
    workload_flags(p)
    p.add_argument("--format", default="fp32", help="element format or fp32")
    p.add_argument("--geometry", default="square")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--iterations", type=int, default=16, help="iterations per epoch")
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--activation", choices=["Tanh", "ReLU"], default="Tanh")
    p.add_argument("--engine", choices=["vectorized", "datapath"], default=None)
    p.add_argument("--sweep", action="store_true", help="FP32 plus all six formats")
    p.add_argument("--fail-on-divergence", action="store_true")
    p.add_argument("--record-wall-time", action="store_true")
    common(p, emit_default="csv")
    p.set_defaults(func=cmd_train)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the subcommand, and map errors to exit codes."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        logger.info(f"Running '{args.command}'")
        return args.func(args)
    except InvalidInputError as e:
        logger.error(f"Invalid input: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INVALID_INPUT
    except ContractViolationError as e:
        logger.error(f"Contract violation: {e}")
        sys.stderr.write(f"contract violation: {e}\n")
        return EXIT_CONTRACT_VIOLATION
    except MxSimError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CONTRACT_VIOLATION


def main() -> None:
    sys.exit(run())
