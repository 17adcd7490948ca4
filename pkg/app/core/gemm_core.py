"""
Learning-enabled MX GeMM core: a 4x16 grid of PE arrays, output-stationary.

Performance model (pure function of dims and mode):
- The output is tiled into 8x8 blocks; a wave maps up to 4 tile-rows x 16
  tile-cols onto the grid.
- Each wave runs ceil(K/8) block multiplications at cycles_for_mode each.
- A blocks are broadcast along grid rows and B blocks along grid columns,
  so one block-step fetches (active rows + active cols) blocks.
- After a wave, the 64 FP32 output blocks are written back through the full
  memory bandwidth; that stall is not overlapped unless overlap_writeback.

The numeric side (functional_gemm) reuses the same tiling, either through the
PE array model or through a numpy engine following the same per-step rounding.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from app.core.mac_datapath import DEFAULT_VARIANT, MacMode, MacModeKind, MacVariant, mode_formats
from app.core.mx_formats import ElementFormat, get_format
from app.core.mx_quant import SQUARE_DIM, Orientation, QuantizedMatrix, dequantize_matrix
from app.core.pe_array import MACS_PER_ARRAY, BlockMultJob, PeArray, block_multiply, cycles_for_mode
from app.core.workload import WorkloadSpec
from app.errors import GeometryError, InvalidInputError, ModeMismatchError
from app.utils.fp32 import FP32_MAX

logger = logging.getLogger(__name__)

GRID_ROWS = 4
GRID_COLS = 16
FREQ_MHZ = 500
MAX_BW_BITS_PER_CYCLE = 5280
OUTPUT_BITS = 32
SCALE_BITS = 8

ENGINES = ("vectorized", "datapath")


class Stage(str, Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"
    WEIGHT_GRAD = "WeightGrad"


@dataclass(frozen=True)
class CoreConfig:
    mode: MacMode
    variant: MacVariant = DEFAULT_VARIANT
    grid_rows: int = GRID_ROWS
    grid_cols: int = GRID_COLS
    freq_mhz: int = FREQ_MHZ
    max_bw_bits_per_cycle: int = MAX_BW_BITS_PER_CYCLE
    overlap_writeback: bool = False

    @classmethod
    def for_format(cls, fmt: "str | ElementFormat", **kwargs) -> "CoreConfig":
        return cls(mode=MacMode.for_format(fmt), **kwargs)

    @property
    def pe_arrays(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def mac_count(self) -> int:
        return self.pe_arrays * MACS_PER_ARRAY

    @property
    def bandwidth_gb_s(self) -> float:
        return self.max_bw_bits_per_cycle * self.freq_mhz * 1e6 / 8 / 1e9

    @property
    def writeback_stall_cycles(self) -> int:
        """Cycles to write a full wave of FP32 output blocks back to memory."""
        bits = self.pe_arrays * MACS_PER_ARRAY * OUTPUT_BITS
        return math.ceil(bits / self.max_bw_bits_per_cycle)


@dataclass(frozen=True)
class GemmJob:
    M: int
    K: int
    N: int
    stage: Stage = Stage.FORWARD
    layer: Optional[int] = None

    def __post_init__(self):
        for name in ("M", "K", "N"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"GeMM dimension {name} must be non-negative")


class GemmReport(BaseModel):
    """Cycle accounting of one GeMM (one layer in one stage)."""

    stage: str
    layer: Optional[int] = None
    M: int
    K: int
    N: int
    waves: int
    compute_cycles: int
    stall_cycles: int
    total_cycles: int
    busy_array_cycles: int
    utilization: float
    bw_used_bits_per_cycle: float


class StageReport(BaseModel):
    stage: str
    compute_cycles: int = 0
    stall_cycles: int = 0
    total_cycles: int = 0
    busy_array_cycles: int = 0
    utilization: float = 0.0
    bw_used_bits_per_cycle: float = 0.0


class SimReport(BaseModel):
    mode: str
    format: str
    freq_mhz: int
    overlap_writeback: bool
    workload: Optional[str] = None
    batch: Optional[int] = None
    compute_cycles: int
    stall_cycles: int
    total_cycles: int
    utilization: float
    bw_used_bits_per_cycle: float
    latency_us: float
    stages: List[StageReport]
    layers: List[GemmReport]

    def stage(self, stage: "Stage | str") -> StageReport:
        name = stage.value if isinstance(stage, Stage) else stage
        for s in self.stages:
            if s.stage == name:
                return s
        raise KeyError(name)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def block_bits(fmt: ElementFormat) -> int:
    """Wire size of one square block: 64 elements plus the shared scale."""
    return MACS_PER_ARRAY * fmt.total_bits + SCALE_BITS


def input_bandwidth_bits_per_cycle(fmt: "str | ElementFormat", grid_rows: int = GRID_ROWS,
                                   grid_cols: int = GRID_COLS) -> float:
    """Input traffic of a fully occupied grid: (rows + cols) blocks per block-step."""
    fmt = get_format(fmt)
    cycles = cycles_for_mode(MacMode.for_format(fmt))
    return (grid_rows + grid_cols) * block_bits(fmt) / cycles


def peak_input_bandwidth(mode: "str | MacModeKind | MacMode") -> float:
    """Input traffic a mode is provisioned for, at its widest element format."""
    kind = mode.mode if isinstance(mode, MacMode) else mode
    widest = max(mode_formats(kind), key=lambda f: f.total_bits)
    return input_bandwidth_bits_per_cycle(widest)


def _stall_cycles(cfg: CoreConfig, waves: int, wave_compute: int) -> int:
    if waves == 0:
        return 0
    stall = cfg.writeback_stall_cycles
    if not cfg.overlap_writeback:
        return waves * stall
    # each writeback hides behind the next wave's compute; the last one is exposed
    return (waves - 1) * max(0, stall - wave_compute) + stall


def schedule_gemm(cfg: CoreConfig, job: GemmJob) -> GemmReport:
    """Cycle accounting of one M x K by K x N GeMM on the core."""
    mt, kt, nt = _ceil_div(job.M, SQUARE_DIM), _ceil_div(job.K, SQUARE_DIM), _ceil_div(job.N, SQUARE_DIM)
    cycles_per_block = cycles_for_mode(cfg.mode)
    if mt == 0 or kt == 0 or nt == 0:
        waves = compute = busy = 0
        bw = 0.0
    else:
        waves = _ceil_div(mt, cfg.grid_rows) * _ceil_div(nt, cfg.grid_cols)
        wave_compute = kt * cycles_per_block
        compute = waves * wave_compute
        busy = mt * nt * kt * cycles_per_block
        active = min(mt, cfg.grid_rows) + min(nt, cfg.grid_cols)
        bw = active * block_bits(cfg.mode.element_format) / cycles_per_block
    stall = _stall_cycles(cfg, waves, kt * cycles_per_block)
    total = compute + stall
    utilization = busy / (cfg.pe_arrays * total) if total else 0.0
    logger.debug(
        f"{job.stage.value} GeMM {job.M}x{job.K}x{job.N}: {waves} wave(s), "
        f"{compute} compute + {stall} stall cycles"
    )
    return GemmReport(
        stage=job.stage.value,
        layer=job.layer,
        M=job.M,
        K=job.K,
        N=job.N,
        waves=waves,
        compute_cycles=compute,
        stall_cycles=stall,
        total_cycles=total,
        busy_array_cycles=busy,
        utilization=utilization,
        bw_used_bits_per_cycle=bw,
    )


def training_jobs(workload: WorkloadSpec) -> List[GemmJob]:
    """The three GeMMs per layer of one training iteration (no input error for the first layer)."""
    batch = workload.batch
    jobs = [GemmJob(batch, fan_in, fan_out, Stage.FORWARD, i) for i, (fan_in, fan_out) in enumerate(workload.layer_dims)]
    jobs += [
        GemmJob(batch, fan_out, fan_in, Stage.BACKWARD, i)
        for i, (fan_in, fan_out) in enumerate(workload.layer_dims)
        if i > 0
    ]
    jobs += [
        GemmJob(fan_in, batch, fan_out, Stage.WEIGHT_GRAD, i)
        for i, (fan_in, fan_out) in enumerate(workload.layer_dims)
    ]
    return jobs


def _stage_summary(cfg: CoreConfig, stage: Stage, reports: List[GemmReport]) -> StageReport:
    summary = StageReport(stage=stage.value)
    for r in reports:
        summary.compute_cycles += r.compute_cycles
        summary.stall_cycles += r.stall_cycles
        summary.busy_array_cycles += r.busy_array_cycles
        summary.bw_used_bits_per_cycle = max(summary.bw_used_bits_per_cycle, r.bw_used_bits_per_cycle)
    summary.total_cycles = summary.compute_cycles + summary.stall_cycles
    if summary.total_cycles:
        summary.utilization = summary.busy_array_cycles / (cfg.pe_arrays * summary.total_cycles)
    return summary


def summarize(cfg: CoreConfig, reports: List[GemmReport], workload: Optional[WorkloadSpec] = None) -> SimReport:
    stages = [_stage_summary(cfg, s, [r for r in reports if r.stage == s.value]) for s in Stage]
    compute = sum(s.compute_cycles for s in stages)
    stall = sum(s.stall_cycles for s in stages)
    busy = sum(s.busy_array_cycles for s in stages)
    total = compute + stall
    return SimReport(
        mode=cfg.mode.mode.value,
        format=str(cfg.mode.element_format),
        freq_mhz=cfg.freq_mhz,
        overlap_writeback=cfg.overlap_writeback,
        workload=workload.name if workload else None,
        batch=workload.batch if workload else None,
        compute_cycles=compute,
        stall_cycles=stall,
        total_cycles=total,
        utilization=busy / (cfg.pe_arrays * total) if total else 0.0,
        bw_used_bits_per_cycle=max((s.bw_used_bits_per_cycle for s in stages), default=0.0),
        latency_us=total / cfg.freq_mhz,
        stages=stages,
        layers=reports,
    )


def simulate_training_iteration(cfg: CoreConfig, workload: WorkloadSpec) -> SimReport:
    """Forward, backward-error and weight-gradient GeMMs of every layer for one batch."""
    reports = [schedule_gemm(cfg, job) for job in training_jobs(workload)]
    report = summarize(cfg, reports, workload)
    logger.info(
        f"Simulated '{workload.name}' batch {workload.batch} in {report.mode} ({report.format}): "
        f"{report.total_cycles} cycles, {report.latency_us:.2f} us"
    )
    return report


# ---------------------------------------------------------------------------
# Numeric GeMM
# ---------------------------------------------------------------------------

def _check_operands(cfg: CoreConfig, a: QuantizedMatrix, b: QuantizedMatrix, engine: str) -> None:
    if engine not in ENGINES:
        raise InvalidInputError(f"unknown GeMM engine '{engine}' (expected one of {ENGINES})")
    if a.cols != b.rows:
        raise InvalidInputError(f"inner dimensions differ: A is {a.rows}x{a.cols}, B is {b.rows}x{b.cols}")
    if a.format != b.format or a.format != cfg.mode.element_format:
        raise ModeMismatchError(
            f"operand formats {a.format}/{b.format} do not match core mode {cfg.mode.element_format}"
        )
    if a.geometry.is_square != b.geometry.is_square or a.geometry != b.geometry:
        raise GeometryError(f"operands use different geometries ({a.geometry}, {b.geometry})")
    if a.geometry.is_square:
        return
    if engine == "datapath":
        raise GeometryError(f"the PE array consumes square blocks only, got {a.geometry}")
    if a.orientation is not Orientation.ROW_BLOCKS or b.orientation is not Orientation.COL_BLOCKS:
        raise GeometryError("vector GeMM needs A in RowBlocks and B in ColBlocks (blocks along K)")


def _datapath_gemm(cfg: CoreConfig, a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    a_blocks, b_blocks = a.blocks, b.blocks
    mt, kt = a.grid_shape
    nt = b.grid_shape[1]
    out = np.zeros((mt * SQUARE_DIM, nt * SQUARE_DIM), dtype=np.float32)
    arrays = [PeArray(cfg.mode, cfg.variant) for _ in range(cfg.pe_arrays)]
    wave = 0
    for row0 in range(0, mt, cfg.grid_rows):
        for col0 in range(0, nt, cfg.grid_cols):
            for i in range(row0, min(row0 + cfg.grid_rows, mt)):
                for j in range(col0, min(col0 + cfg.grid_cols, nt)):
                    array = arrays[(i - row0) * cfg.grid_cols + (j - col0)]
                    result = None
                    for k in range(kt):
                        job = BlockMultJob(a_blocks[i][k], b_blocks[k][j], accumulate=k > 0)
                        result = block_multiply(array, job)
                    out[i * SQUARE_DIM:(i + 1) * SQUARE_DIM, j * SQUARE_DIM:(j + 1) * SQUARE_DIM] = result.grid
            logger.debug(f"Datapath GeMM wave {wave} done")
            wave += 1
    return out[: a.rows, : b.cols]


def _vectorized_gemm(cfg: CoreConfig, a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    """Same k-slice schedule as the MACs: exact step sums, FP32 rounding after every step."""
    step = cfg.mode.pairs_per_step
    k_padded = -(-a.cols // step) * step
    a_values = np.zeros((a.rows, k_padded))
    b_values = np.zeros((k_padded, b.cols))
    a_values[:, : a.cols] = dequantize_matrix(a)
    b_values[: b.rows, :] = dequantize_matrix(b)
    acc = np.zeros((a.rows, b.cols), dtype=np.float32)
    for k0 in range(0, k_padded, step):
        # one MAC step: at most 8 exact products, summed exactly in float64
        partial = a_values[:, k0:k0 + step] @ b_values[k0:k0 + step, :]
        total = np.clip(acc.astype(np.float64) + partial, -FP32_MAX, FP32_MAX)
        acc = total.astype(np.float32)
    return acc


def functional_gemm(cfg: CoreConfig, a: QuantizedMatrix, b: QuantizedMatrix, engine: str = "vectorized") -> np.ndarray:
    """
    FP32 product of two quantized matrices.

    Args:
        cfg: core configuration; its mode must match the operand format
        a: left operand (square blocks, or RowBlocks for vector geometries)
        b: right operand (square blocks, or ColBlocks for vector geometries)
        engine: "datapath" runs every MAC step bit-faithfully through the PE
            arrays; "vectorized" is the numpy equivalent used for training

    Returns:
        float32 array of shape (a.rows, b.cols)
    """
    _check_operands(cfg, a, b, engine)
    if engine == "datapath":
        return _datapath_gemm(cfg, a, b)
    return _vectorized_gemm(cfg, a, b)


def core_summary(cfg: CoreConfig) -> Dict[str, float]:
    """Derived core figures: MAC count, bandwidth in GB/s, writeback stall per wave."""
    return {
        "pe_arrays": cfg.pe_arrays,
        "mac_count": cfg.mac_count,
        "freq_mhz": cfg.freq_mhz,
        "max_bw_bits_per_cycle": cfg.max_bw_bits_per_cycle,
        "bandwidth_gb_s": cfg.bandwidth_gb_s,
        "writeback_stall_cycles": cfg.writeback_stall_cycles,
    }
