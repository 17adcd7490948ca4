"""
Binary layouts for quantized matrices and raw FP32 matrices.

Quantized matrix (little-endian):
    header  "MXQM" | version u8 | geometry u8 | orientation u8 | format u8 | rows u32 | cols u32
    blocks  row-major over the block grid; each block is
            scale byte | packed codes in block element order | micro-exponent byte (BDR only)

Codes pack densely: 8-bit one per byte, 6-bit four per three bytes (first code
in the low bits), 4-bit two per byte (low nibble first).

Raw FP32 matrix: "MXF32\\0\\0\\0" | rows u32 | cols u32 | row-major float32 data.
"""

import csv
import io
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from app.core.mx_formats import ALL_FORMATS, ElementFormat
from app.core.mx_quant import BDR_PAIR, BlockGeometry, GeometryKind, Orientation, QuantizedMatrix, block_grid_shape
from app.errors import InvalidInputError

logger = logging.getLogger(__name__)

QM_MAGIC = b"MXQM"
QM_VERSION = 1
QM_HEADER = struct.Struct("<4sBBBBII")
F32_MAGIC = b"MXF32\x00\x00\x00"
F32_HEADER = struct.Struct("<8sII")

_GEOMETRY_IDS = {kind: i for i, kind in enumerate(GeometryKind)}
_ORIENTATION_IDS = {o: i for i, o in enumerate(Orientation)}
_FORMAT_IDS = {fmt: i for i, fmt in enumerate(ALL_FORMATS)}


def format_descriptor(fmt: ElementFormat) -> Dict[str, Any]:
    return {
        "name": fmt.name.value,
        "total_bits": fmt.total_bits,
        "exp_bits": fmt.exp_bits,
        "mant_bits": fmt.mant_bits,
        "bias": fmt.bias,
        "emax": fmt.emax,
        "max_finite": fmt.max_finite,
        "min_finite": fmt.min_finite,
        "has_inf": fmt.has_inf,
        "has_nan": fmt.has_nan,
    }


def pack_codes(codes: Sequence[int], bits: int) -> bytes:
    """Pack codes little-endian into a dense bit stream."""
    if bits == 8:
        return bytes(int(c) for c in codes)
    if bits not in (4, 6):
        raise InvalidInputError(f"cannot pack {bits}-bit codes")
    acc = 0
    for i, c in enumerate(codes):
        acc |= (int(c) & ((1 << bits) - 1)) << (i * bits)
    nbytes = -(-len(codes) * bits // 8)
    return acc.to_bytes(nbytes, "little")


def unpack_codes(data: bytes, bits: int, count: int) -> List[int]:
    if bits == 8:
        return list(data[:count])
    if bits not in (4, 6):
        raise InvalidInputError(f"cannot unpack {bits}-bit codes")
    acc = int.from_bytes(data, "little")
    mask = (1 << bits) - 1
    return [(acc >> (i * bits)) & mask for i in range(count)]


def block_nbytes(qm: QuantizedMatrix) -> int:
    n = qm.geometry.elements_per_scale
    return 1 + n * qm.format.total_bits // 8 + (1 if qm.geometry.has_micro_exps else 0)


def serialize_quantized(qm: QuantizedMatrix) -> bytes:
    out = io.BytesIO()
    out.write(QM_HEADER.pack(
        QM_MAGIC,
        QM_VERSION,
        _GEOMETRY_IDS[qm.geometry.kind],
        _ORIENTATION_IDS[qm.orientation],
        _FORMAT_IDS[qm.format],
        qm.rows,
        qm.cols,
    ))
    codes = qm.block_codes()
    micro = qm.micro_blocks()
    gr, gc = qm.grid_shape
    for i in range(gr):
        for j in range(gc):
            out.write(bytes([int(qm.scale_codes[i, j])]))
            out.write(pack_codes(codes[i, j], qm.format.total_bits))
            if micro is not None:
                bits = micro[i, j, ::BDR_PAIR]
                out.write(bytes([sum(int(b) << k for k, b in enumerate(bits))]))
    return out.getvalue()


def deserialize_quantized(data: bytes) -> QuantizedMatrix:
    if len(data) < QM_HEADER.size:
        raise InvalidInputError("quantized matrix stream is shorter than its header")
    magic, version, geometry_id, orientation_id, format_id, rows, cols = QM_HEADER.unpack_from(data)
    if magic != QM_MAGIC or version != QM_VERSION:
        raise InvalidInputError(f"not a quantized matrix stream (magic {magic!r}, version {version})")
    try:
        geometry = BlockGeometry(list(GeometryKind)[geometry_id])
        orientation = list(Orientation)[orientation_id]
        fmt = ALL_FORMATS[format_id]
    except IndexError as e:
        raise InvalidInputError("quantized matrix header carries an unknown enum id") from e

    if geometry.is_square != (orientation is Orientation.SQUARE):
        raise InvalidInputError(f"orientation {orientation.value} does not fit geometry {geometry}")
    n = geometry.elements_per_scale
    gr, gc = block_grid_shape(rows, cols, geometry, orientation)
    code_bytes = n * fmt.total_bits // 8
    stride = 1 + code_bytes + (1 if geometry.has_micro_exps else 0)
    body = data[QM_HEADER.size:]
    if len(body) != gr * gc * stride:
        raise InvalidInputError(f"quantized matrix body has {len(body)} bytes, expected {gr * gc * stride}")

    scale_codes = np.zeros((gr, gc), dtype=np.int64)
    codes = np.zeros((gr, gc, n), dtype=np.uint8)
    micro = np.zeros((gr, gc, n), dtype=np.uint8) if geometry.has_micro_exps else None
    offset = 0
    for i in range(gr):
        for j in range(gc):
            scale_codes[i, j] = body[offset]
            codes[i, j] = unpack_codes(body[offset + 1: offset + 1 + code_bytes], fmt.total_bits, n)
            if micro is not None:
                byte = body[offset + 1 + code_bytes]
                micro[i, j] = np.repeat([(byte >> k) & 1 for k in range(n // BDR_PAIR)], BDR_PAIR)
            offset += stride
    return QuantizedMatrix.from_blocks(rows, cols, geometry, fmt, orientation, codes, scale_codes, micro)


def quantized_debug_dump(qm: QuantizedMatrix) -> Dict[str, Any]:
    """JSON-ready view: dims, geometry and every block's scale exponent and codes."""
    codes = qm.block_codes()
    gr, gc = qm.grid_shape
    blocks = []
    for i in range(gr):
        for j in range(gc):
            blocks.append({
                "block": [i, j],
                "scale_exp": int(qm.scale_codes[i, j]) - 127,
                "codes": [int(c) for c in codes[i, j]],
            })
    return {
        "rows": qm.rows,
        "cols": qm.cols,
        "geometry": str(qm.geometry),
        "orientation": qm.orientation.value,
        "format": qm.format.name.value,
        "grid": [gr, gc],
        "blocks": blocks,
    }


def read_matrix(path: "str | Path") -> np.ndarray:
    """Read a CSV matrix (.csv) or a raw FP32 matrix file."""
    p = Path(path)
    if not p.is_file():
        raise InvalidInputError(f"matrix file not found: {p}")
    if p.suffix.lower() == ".csv":
        try:
            with p.open(newline="", encoding="utf-8") as f:
                rows = [[float(v) for v in row] for row in csv.reader(f) if row]
        except ValueError as e:
            raise InvalidInputError(f"{p}: non-numeric CSV entry ({e})") from e
        if not rows or len({len(r) for r in rows}) != 1:
            raise InvalidInputError(f"{p}: CSV matrix must be non-empty and rectangular")
        return np.array(rows, dtype=np.float64)
    data = p.read_bytes()
    if len(data) < F32_HEADER.size:
        raise InvalidInputError(f"{p}: file shorter than the FP32 matrix header")
    magic, rows, cols = F32_HEADER.unpack_from(data)
    if magic != F32_MAGIC:
        raise InvalidInputError(f"{p}: bad magic {magic!r}")
    payload = data[F32_HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise InvalidInputError(f"{p}: expected {rows * cols * 4} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_matrix(path: "str | Path", m: np.ndarray) -> None:
    p = Path(path)
    matrix = np.asarray(m, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {matrix.shape}")
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.suffix.lower() == ".csv":
        with p.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            for row in matrix:
                writer.writerow([repr(float(v)) for v in row])
        return
    rows, cols = matrix.shape
    p.write_bytes(F32_HEADER.pack(F32_MAGIC, rows, cols) + matrix.astype("<f4").tobytes())
