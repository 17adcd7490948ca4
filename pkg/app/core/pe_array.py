"""
One PE array: 64 MAC units computing the product of two 8x8 square blocks.

Output-stationary: MAC (i, j) keeps output (i, j) in its accumulator while the
k-slices of row i of A and column j of B stream through. Schedule per block
multiplication:
- Int8:   8 steps, one k per cycle
- Fp8Fp6: 2 steps, four consecutive k per cycle
- Fp4:    1 step, all eight k at once
Accumulation order is ascending k.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core.mac_datapath import (
    DEFAULT_VARIANT,
    MacMode,
    MacModeKind,
    MacOperands,
    MacState,
    MacTrace,
    MacVariant,
    mac_step,
)
from app.core.mx_quant import SQUARE_DIM, MxBlock
from app.errors import GeometryError, ModeMismatchError

logger = logging.getLogger(__name__)

MACS_PER_ARRAY = SQUARE_DIM * SQUARE_DIM

_CYCLES_PER_BLOCK = {MacModeKind.INT8: 8, MacModeKind.FP8FP6: 2, MacModeKind.FP4: 1}


def cycles_for_mode(mode: "MacMode | MacModeKind") -> int:
    """Cycles for one 8x8 by 8x8 block multiplication."""
    kind = mode.mode if isinstance(mode, MacMode) else mode
    return _CYCLES_PER_BLOCK[kind]


@dataclass(frozen=True)
class BlockMultJob:
    a_block: MxBlock
    b_block: MxBlock
    accumulate: bool = True


@dataclass
class PeArrayStats:
    block_mults: int = 0
    mac_steps: int = 0
    multiplies: int = 0
    cycles: int = 0


@dataclass
class BlockMultResult:
    grid: np.ndarray
    cycles_used: int
    traces: Optional[List[List[MacTrace]]] = None


@dataclass
class PeArray:
    """64 MAC states plus the mode/variant they are wired for."""

    mode: MacMode
    variant: MacVariant = DEFAULT_VARIANT
    collect_traces: bool = False
    macs: List[MacState] = field(default_factory=lambda: [MacState() for _ in range(MACS_PER_ARRAY)])
    stats: PeArrayStats = field(default_factory=PeArrayStats)

    def reset(self) -> None:
        self.macs = [MacState() for _ in range(MACS_PER_ARRAY)]

    def output_grid(self) -> np.ndarray:
        values = np.array([m.accumulator for m in self.macs], dtype=np.float32)
        return values.reshape(SQUARE_DIM, SQUARE_DIM)


def _check_job(array: PeArray, job: BlockMultJob) -> None:
    for name, block in (("A", job.a_block), ("B", job.b_block)):
        if not block.geometry.is_square:
            raise GeometryError(f"PE array takes 8x8 square blocks, {name} is {block.geometry}")
        if block.format != array.mode.element_format:
            raise ModeMismatchError(
                f"{name} block format {block.format} does not match array mode "
                f"{array.mode.mode.value}/{array.mode.element_format}"
            )


def block_multiply(array: PeArray, job: BlockMultJob) -> BlockMultResult:
    """
    Multiply two square blocks into the array's 8x8 FP32 output grid.

    Args:
        array: PE array holding the output accumulators
        job: the block pair; accumulate=False clears the grid first

    Returns:
        BlockMultResult with the grid after this job and the cycles it took
    """
    _check_job(array, job)
    if not job.accumulate:
        array.reset()

    pairs = array.mode.pairs_per_step
    steps = cycles_for_mode(array.mode)
    scale_exp = job.a_block.scale.exponent + job.b_block.scale.exponent
    a, b = job.a_block, job.b_block
    traces: Optional[List[List[MacTrace]]] = [] if array.collect_traces else None

    for i in range(SQUARE_DIM):
        for j in range(SQUARE_DIM):
            state = array.macs[i * SQUARE_DIM + j]
            mac_traces = []
            for step in range(steps):
                ks = range(step * pairs, (step + 1) * pairs)
                operands = MacOperands(
                    a_codes=tuple(a.code_at(i, k) for k in ks),
                    b_codes=tuple(b.code_at(k, j) for k in ks),
                    shared_scale_product_exp=scale_exp,
                )
                state, record = mac_step(state, operands, array.mode, array.variant, trace=array.collect_traces)
                if record is not None:
                    mac_traces.append(record)
            array.macs[i * SQUARE_DIM + j] = state
            if traces is not None:
                traces.append(mac_traces)

    array.stats.block_mults += 1
    array.stats.mac_steps += MACS_PER_ARRAY * steps
    array.stats.multiplies += MACS_PER_ARRAY * SQUARE_DIM
    array.stats.cycles += steps
    logger.debug(f"Block multiply in {array.mode.mode.value} mode took {steps} cycle(s), scale exp {scale_exp}")
    return BlockMultResult(grid=array.output_grid(), cycles_used=steps, traces=traces)
