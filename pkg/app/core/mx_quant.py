"""
Shared-exponent block quantization for vector blocks (32 elements), BDR blocks
(16 elements with a 1-bit micro-exponent per pair) and 8x8 square blocks.

Scale rule: scale = 2**(floor(log2(max_abs)) - emax), scale 1 for an all-zero
block, clamped to the E8M0 range. Matrices are zero-padded to whole blocks;
padded slots always encode to code 0.

A QuantizedMatrix keeps its codes as a padded uint8 array laid out like the
source matrix, plus one scale code per block. That makes transposition of
square-blocked matrices a pure index permutation, no re-encoding.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.mx_formats import (
    E8M0_BIAS,
    E8M0_RESERVED,
    ElementFormat,
    SharedScale,
    decode_array,
    encode_array,
)
from app.errors import GeometryError, InvalidInputError, NonFiniteValueError, ScaleRangeError

logger = logging.getLogger(__name__)

SQUARE_DIM = 8
BDR_PAIR = 2


class GeometryKind(str, Enum):
    VECTOR32 = "Vector32"
    VECTOR16_BDR = "Vector16_BDR"
    SQUARE8X8 = "Square8x8"


class Orientation(str, Enum):
    ROW_BLOCKS = "RowBlocks"
    COL_BLOCKS = "ColBlocks"
    SQUARE = "Square"


_ELEMENTS_PER_SCALE = {
    GeometryKind.VECTOR32: 32,
    GeometryKind.VECTOR16_BDR: 16,
    GeometryKind.SQUARE8X8: 64,
}


@dataclass(frozen=True)
class BlockGeometry:
    kind: GeometryKind

    @property
    def elements_per_scale(self) -> int:
        return _ELEMENTS_PER_SCALE[self.kind]

    @property
    def has_micro_exps(self) -> bool:
        return self.kind is GeometryKind.VECTOR16_BDR

    @property
    def is_square(self) -> bool:
        return self.kind is GeometryKind.SQUARE8X8

    def __str__(self) -> str:
        return self.kind.value


VECTOR32 = BlockGeometry(GeometryKind.VECTOR32)
VECTOR16_BDR = BlockGeometry(GeometryKind.VECTOR16_BDR)
SQUARE8X8 = BlockGeometry(GeometryKind.SQUARE8X8)

_GEOMETRY_ALIASES = {
    "vector32": VECTOR32,
    "vector": VECTOR32,
    "vec32": VECTOR32,
    "vector16_bdr": VECTOR16_BDR,
    "bdr16": VECTOR16_BDR,
    "bdr": VECTOR16_BDR,
    "square8x8": SQUARE8X8,
    "square": SQUARE8X8,
}

_ORIENTATION_ALIASES = {
    "rowblocks": Orientation.ROW_BLOCKS,
    "row": Orientation.ROW_BLOCKS,
    "colblocks": Orientation.COL_BLOCKS,
    "col": Orientation.COL_BLOCKS,
    "square": Orientation.SQUARE,
}


def get_geometry(name: "str | BlockGeometry") -> BlockGeometry:
    if isinstance(name, BlockGeometry):
        return name
    geometry = _GEOMETRY_ALIASES.get(str(name).strip().lower().replace("-", "_"))
    if geometry is None:
        raise InvalidInputError(f"Unknown block geometry '{name}'")
    return geometry


def get_orientation(name: "str | Orientation") -> Orientation:
    if isinstance(name, Orientation):
        return name
    orientation = _ORIENTATION_ALIASES.get(str(name).strip().lower())
    if orientation is None:
        raise InvalidInputError(f"Unknown block orientation '{name}'")
    return orientation


def default_orientation(geometry: BlockGeometry) -> Orientation:
    return Orientation.SQUARE if geometry.is_square else Orientation.ROW_BLOCKS


@dataclass(frozen=True)
class MxBlock:
    """One shared-scale group. micro_exps holds one bit per element pair (BDR only)."""

    geometry: BlockGeometry
    format: ElementFormat
    scale: SharedScale
    codes: Tuple[int, ...]
    micro_exps: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if len(self.codes) != self.geometry.elements_per_scale:
            raise GeometryError(
                f"{self.geometry} block needs {self.geometry.elements_per_scale} codes, got {len(self.codes)}"
            )
        if self.geometry.has_micro_exps:
            if self.micro_exps is None or len(self.micro_exps) != len(self.codes) // 2:
                raise GeometryError("BDR block needs one micro-exponent per element pair")
        elif self.micro_exps is not None:
            raise GeometryError(f"{self.geometry} blocks carry no micro-exponents")

    def code_at(self, row: int, col: int) -> int:
        """Row-major access into a square block."""
        return self.codes[row * SQUARE_DIM + col]


# ---------------------------------------------------------------------------
# Block kernels (vectorised over a trailing block axis)
# ---------------------------------------------------------------------------

def _shared_exponents(blocks: np.ndarray, fmt: ElementFormat) -> np.ndarray:
    """Unbiased shared exponent per block, following the scale rule."""
    max_abs = np.max(np.abs(blocks), axis=-1)
    _, e = np.frexp(max_abs)
    shared = (e.astype(np.int64) - 1) - fmt.emax
    shared = np.where(max_abs == 0.0, 0, shared)
    too_large = shared + E8M0_BIAS >= E8M0_RESERVED
    if np.any(too_large):
        raise ScaleRangeError(
            f"{int(np.count_nonzero(too_large))} block(s) need a scale beyond 2**127 (E8M0 code 255 is reserved)"
        )
    return np.maximum(shared, -E8M0_BIAS)


def _quantize_blocks(blocks: np.ndarray, fmt: ElementFormat, geometry: BlockGeometry):
    """Quantize an (..., L) array of blocks. Returns (codes, scale_codes, micro_exps)."""
    if not np.all(np.isfinite(blocks)):
        raise NonFiniteValueError("quantizer input contains NaN or Inf")
    bdr = geometry.has_micro_exps
    shared = _shared_exponents(blocks, fmt)
    scaled = np.ldexp(blocks, -shared[..., None])
    codes = encode_array(scaled, fmt)
    micro = None
    if bdr:
        # micro-exponent 1 puts an extra x2 on top of the rule scale for the pair
        coarse_codes = encode_array(np.ldexp(scaled, -1), fmt)
        fine = decode_array(codes, fmt)
        coarse = np.ldexp(decode_array(coarse_codes, fmt), 1)
        err_fine = ((fine - scaled) ** 2).reshape(*scaled.shape[:-1], -1, BDR_PAIR).sum(axis=-1)
        err_coarse = ((coarse - scaled) ** 2).reshape(*scaled.shape[:-1], -1, BDR_PAIR).sum(axis=-1)
        pair_micro = (err_coarse < err_fine).astype(np.uint8)
        micro = np.repeat(pair_micro, BDR_PAIR, axis=-1)
        codes = np.where(micro == 1, coarse_codes, codes).astype(np.uint8)
    return codes, (shared + E8M0_BIAS).astype(np.int64), micro


def _dequantize_blocks(codes: np.ndarray, scale_codes: np.ndarray, fmt: ElementFormat,
                       micro: Optional[np.ndarray]) -> np.ndarray:
    values = decode_array(codes, fmt)
    exps = (scale_codes - E8M0_BIAS)[..., None]
    if micro is not None:
        exps = exps + micro.astype(np.int64)
    return np.ldexp(values, exps)


def quantize_block(values: Sequence[float], fmt: ElementFormat, geometry: BlockGeometry) -> MxBlock:
    """Quantize exactly one block worth of values (pad upstream)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size != geometry.elements_per_scale:
        raise GeometryError(f"{geometry} block needs {geometry.elements_per_scale} values, got {arr.size}")
    codes, scale_codes, micro = _quantize_blocks(arr[None, :], fmt, geometry)
    micro_pairs = tuple(int(m) for m in micro[0, ::BDR_PAIR]) if micro is not None else None
    return MxBlock(
        geometry=geometry,
        format=fmt,
        scale=SharedScale(int(scale_codes[0])),
        codes=tuple(int(c) for c in codes[0]),
        micro_exps=micro_pairs,
    )


def dequantize_block(block: MxBlock) -> List[float]:
    """value_i = scale * decode(code_i) (* 2**micro for BDR)."""
    codes = np.array(block.codes, dtype=np.int64)
    micro = None
    if block.micro_exps is not None:
        micro = np.repeat(np.array(block.micro_exps, dtype=np.uint8), BDR_PAIR)
    values = _dequantize_blocks(codes[None, :], np.array([block.scale.exp_code]), block.format,
                                micro[None, :] if micro is not None else None)
    return [float(v) for v in values[0]]


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _padded_shape(rows: int, cols: int, geometry: BlockGeometry, orientation: Orientation) -> Tuple[int, int]:
    n = geometry.elements_per_scale
    if orientation is Orientation.SQUARE:
        return _ceil_div(rows, SQUARE_DIM) * SQUARE_DIM, _ceil_div(cols, SQUARE_DIM) * SQUARE_DIM
    if orientation is Orientation.ROW_BLOCKS:
        return rows, _ceil_div(cols, n) * n
    return _ceil_div(rows, n) * n, cols


def block_grid_shape(rows: int, cols: int, geometry: BlockGeometry, orientation: Orientation) -> Tuple[int, int]:
    """Number of blocks along each axis once the matrix is padded."""
    pr, pc = _padded_shape(rows, cols, geometry, orientation)
    n = geometry.elements_per_scale
    if orientation is Orientation.SQUARE:
        return pr // SQUARE_DIM, pc // SQUARE_DIM
    if orientation is Orientation.ROW_BLOCKS:
        return pr, pc // n
    return pr // n, pc


def _to_blocks(padded: np.ndarray, geometry: BlockGeometry, orientation: Orientation) -> np.ndarray:
    """(padded_rows, padded_cols) -> (grid_rows, grid_cols, L) in block element order."""
    pr, pc = padded.shape
    n = geometry.elements_per_scale
    if orientation is Orientation.SQUARE:
        gr, gc = pr // SQUARE_DIM, pc // SQUARE_DIM
        return padded.reshape(gr, SQUARE_DIM, gc, SQUARE_DIM).transpose(0, 2, 1, 3).reshape(gr, gc, n)
    if orientation is Orientation.ROW_BLOCKS:
        return padded.reshape(pr, pc // n, n)
    return padded.T.reshape(pc, pr // n, n).transpose(1, 0, 2)


def _from_blocks(blocks: np.ndarray, geometry: BlockGeometry, orientation: Orientation) -> np.ndarray:
    gr, gc, n = blocks.shape
    if orientation is Orientation.SQUARE:
        return blocks.reshape(gr, gc, SQUARE_DIM, SQUARE_DIM).transpose(0, 2, 1, 3).reshape(gr * SQUARE_DIM, gc * SQUARE_DIM)
    if orientation is Orientation.ROW_BLOCKS:
        return blocks.reshape(gr, gc * n)
    return blocks.transpose(1, 0, 2).reshape(gc, gr * n).T


@dataclass(eq=False)
class QuantizedMatrix:
    """
    Block-quantized matrix.

    codes and micro_exps have the padded matrix shape; scale_codes has the
    block-grid shape. Padding is always zero.
    """

    rows: int
    cols: int
    geometry: BlockGeometry
    format: ElementFormat
    orientation: Orientation
    codes: np.ndarray
    scale_codes: np.ndarray
    micro_exps: Optional[np.ndarray] = None
    padding: str = "zero"

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return tuple(self.scale_codes.shape)

    @property
    def padded_shape(self) -> Tuple[int, int]:
        return tuple(self.codes.shape)

    @property
    def block_count(self) -> int:
        return int(self.scale_codes.size)

    def block_codes(self) -> np.ndarray:
        """Codes regrouped as (grid_rows, grid_cols, elements_per_scale)."""
        return _to_blocks(self.codes, self.geometry, self.orientation)

    def _make_block(self, i: int, j: int, codes: np.ndarray, micro: Optional[np.ndarray]) -> MxBlock:
        return MxBlock(
            geometry=self.geometry,
            format=self.format,
            scale=SharedScale(int(self.scale_codes[i, j])),
            codes=tuple(int(c) for c in codes[i, j]),
            micro_exps=tuple(int(m) for m in micro[i, j, ::BDR_PAIR]) if micro is not None else None,
        )

    @classmethod
    def from_blocks(cls, rows: int, cols: int, geometry: BlockGeometry, fmt: ElementFormat,
                    orientation: Orientation, codes: np.ndarray, scale_codes: np.ndarray,
                    micro: Optional[np.ndarray] = None) -> "QuantizedMatrix":
        """Assemble a matrix from (grid_rows, grid_cols, L) code and micro-exponent arrays."""
        return cls(
            rows=rows,
            cols=cols,
            geometry=geometry,
            format=fmt,
            orientation=orientation,
            codes=_from_blocks(codes, geometry, orientation).astype(np.uint8),
            scale_codes=np.asarray(scale_codes, dtype=np.int64),
            micro_exps=_from_blocks(micro, geometry, orientation).astype(np.uint8) if micro is not None else None,
        )

    def micro_blocks(self) -> Optional[np.ndarray]:
        """Micro-exponent bits regrouped like block_codes (BDR only)."""
        if self.micro_exps is None:
            return None
        return _to_blocks(self.micro_exps, self.geometry, self.orientation)

    def block(self, i: int, j: int) -> MxBlock:
        return self._make_block(i, j, self.block_codes(), self.micro_blocks())

    @property
    def blocks(self) -> List[List[MxBlock]]:
        codes, micro = self.block_codes(), self.micro_blocks()
        gr, gc = self.grid_shape
        return [[self._make_block(i, j, codes, micro) for j in range(gc)] for i in range(gr)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedMatrix):
            return NotImplemented
        same_micro = (self.micro_exps is None and other.micro_exps is None) or (
            self.micro_exps is not None and other.micro_exps is not None
            and np.array_equal(self.micro_exps, other.micro_exps)
        )
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.geometry == other.geometry
            and self.format == other.format
            and self.orientation == other.orientation
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.scale_codes, other.scale_codes)
            and same_micro
        )


def _check_orientation(geometry: BlockGeometry, orientation: Orientation) -> None:
    if geometry.is_square != (orientation is Orientation.SQUARE):
        raise GeometryError(f"orientation {orientation.value} does not fit geometry {geometry}")


def quantize_matrix(m: np.ndarray, fmt: ElementFormat, geometry: BlockGeometry,
                    orientation: Optional[Orientation] = None) -> QuantizedMatrix:
    """Partition the matrix per orientation, zero-pad ragged edges, quantize every block."""
    matrix = np.asarray(m, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {matrix.shape}")
    orientation = orientation or default_orientation(geometry)
    _check_orientation(geometry, orientation)
    rows, cols = matrix.shape
    pr, pc = _padded_shape(rows, cols, geometry, orientation)
    padded = np.zeros((pr, pc), dtype=np.float64)
    padded[:rows, :cols] = matrix
    codes, scale_codes, micro = _quantize_blocks(_to_blocks(padded, geometry, orientation), fmt, geometry)
    qm = QuantizedMatrix.from_blocks(rows, cols, geometry, fmt, orientation, codes, scale_codes, micro)
    logger.debug(f"Quantized {rows}x{cols} matrix to {qm.block_count} {geometry} blocks ({fmt}, {orientation.value})")
    return qm


def dequantize_matrix(qm: QuantizedMatrix) -> np.ndarray:
    """Dequantized values with padding trimmed."""
    blocks = _to_blocks(qm.codes, qm.geometry, qm.orientation)
    micro = _to_blocks(qm.micro_exps, qm.geometry, qm.orientation) if qm.micro_exps is not None else None
    values = _dequantize_blocks(blocks, qm.scale_codes, qm.format, micro)
    return _from_blocks(values, qm.geometry, qm.orientation)[: qm.rows, : qm.cols]


def transpose_quantized(qm: QuantizedMatrix) -> QuantizedMatrix:
    """Transpose a square-blocked matrix by permuting codes and scales; nothing is re-encoded."""
    if not qm.geometry.is_square:
        raise GeometryError(f"{qm.geometry} blocks cannot be transposed without requantization")
    return QuantizedMatrix(
        rows=qm.cols,
        cols=qm.rows,
        geometry=qm.geometry,
        format=qm.format,
        orientation=qm.orientation,
        codes=np.ascontiguousarray(qm.codes.T),
        scale_codes=np.ascontiguousarray(qm.scale_codes.T),
        micro_exps=None,
    )


def split_square_block(block: MxBlock) -> Tuple[MxBlock, MxBlock]:
    """Express a 64-element square block as two standard 32-element MX blocks sharing its scale."""
    if not block.geometry.is_square:
        raise GeometryError("only square blocks can be split into MX vector blocks")
    half = len(block.codes) // 2
    return (
        MxBlock(VECTOR32, block.format, block.scale, block.codes[:half]),
        MxBlock(VECTOR32, block.format, block.scale, block.codes[half:]),
    )


def quantization_error_stats(original: np.ndarray, qm: QuantizedMatrix) -> Dict[str, float]:
    """Elementwise error metrics over the real (unpadded) entries."""
    source = np.asarray(original, dtype=np.float64)
    restored = dequantize_matrix(qm)
    err = restored - source
    count = err.size
    zero_blocks = int(np.count_nonzero(~np.any(qm.block_codes() != 0, axis=-1)))
    return {
        "elements": int(count),
        "blocks": qm.block_count,
        "zero_blocks": zero_blocks,
        "max_abs_error": float(np.max(np.abs(err))) if count else 0.0,
        "mean_abs_error": float(np.mean(np.abs(err))) if count else 0.0,
        "rmse": float(math.sqrt(np.mean(err ** 2))) if count else 0.0,
    }
