"""
Test the 64-MAC PE array block multiplication.
"""

import numpy as np
import pytest

from app.core.mac_datapath import MacMode, MacModeKind
from app.core.mx_formats import FP4_E2M1, FP8_E4M3, INT8
from app.core.mx_quant import SQUARE8X8, VECTOR32, dequantize_block, quantize_block
from app.core.pe_array import MACS_PER_ARRAY, BlockMultJob, PeArray, block_multiply, cycles_for_mode
from app.errors import GeometryError, ModeMismatchError


def _block(values, fmt):
    return quantize_block(np.asarray(values, dtype=np.float64).ravel(), fmt, SQUARE8X8)


def _grid(block):
    return np.array(dequantize_block(block), dtype=np.float64).reshape(8, 8)


def test_cycles_per_block():
    assert cycles_for_mode(MacModeKind.INT8) == 8
    assert cycles_for_mode(MacModeKind.FP8FP6) == 2
    assert cycles_for_mode(MacMode.for_format(FP4_E2M1)) == 1
    assert MACS_PER_ARRAY == 64


def test_int8_block_product_is_exact(rng):
    a = _block(rng.integers(-4, 5, size=(8, 8)), INT8)
    b = _block(rng.integers(-4, 5, size=(8, 8)), INT8)
    array = PeArray(MacMode.for_format(INT8))
    result = block_multiply(array, BlockMultJob(a, b))
    np.testing.assert_array_equal(result.grid, (_grid(a) @ _grid(b)).astype(np.float32))
    assert result.cycles_used == 8
    assert array.stats.block_mults == 1
    assert array.stats.mac_steps == 64 * 8
    assert array.stats.multiplies == 64 * 8


def test_fp4_block_product_is_exact(rng):
    values = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0])
    a = _block(rng.choice(values, size=(8, 8)) * rng.choice([-1, 1], size=(8, 8)), FP4_E2M1)
    b = _block(rng.choice(values, size=(8, 8)), FP4_E2M1)
    array = PeArray(MacMode.for_format(FP4_E2M1))
    result = block_multiply(array, BlockMultJob(a, b))
    np.testing.assert_array_equal(result.grid, (_grid(a) @ _grid(b)).astype(np.float32))
    assert result.cycles_used == 1


def test_fp8_block_product_matches_reference(rng):
    a = _block(rng.standard_normal((8, 8)), FP8_E4M3)
    b = _block(rng.standard_normal((8, 8)), FP8_E4M3)
    array = PeArray(MacMode.for_format(FP8_E4M3))
    result = block_multiply(array, BlockMultJob(a, b))
    np.testing.assert_allclose(result.grid, _grid(a) @ _grid(b), rtol=1e-5, atol=1e-6)
    assert result.cycles_used == 2


def test_accumulate_and_reset():
    ones = _block(np.ones((8, 8)), INT8)
    array = PeArray(MacMode.for_format(INT8))
    block_multiply(array, BlockMultJob(ones, ones))
    second = block_multiply(array, BlockMultJob(ones, ones))
    assert np.all(second.grid == 16.0)
    fresh = block_multiply(array, BlockMultJob(ones, ones, accumulate=False))
    assert np.all(fresh.grid == 8.0)
    assert array.stats.cycles == 24


def test_traces_cover_every_mac():
    ones = _block(np.ones((8, 8)), FP4_E2M1)
    array = PeArray(MacMode.for_format(FP4_E2M1), collect_traces=True)
    result = block_multiply(array, BlockMultJob(ones, ones))
    assert len(result.traces) == 64
    assert all(len(t) == 1 for t in result.traces)
    assert result.traces[0][0].accumulator_out == 8.0


def test_rejects_vector_blocks():
    vec = quantize_block(np.ones(32), INT8, VECTOR32)
    sq = _block(np.ones((8, 8)), INT8)
    with pytest.raises(GeometryError):
        block_multiply(PeArray(MacMode.for_format(INT8)), BlockMultJob(vec, sq))


def test_rejects_format_mismatch():
    sq = _block(np.ones((8, 8)), FP8_E4M3)
    with pytest.raises(ModeMismatchError):
        block_multiply(PeArray(MacMode.for_format(INT8)), BlockMultJob(sq, sq))
