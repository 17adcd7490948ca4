"""
Test the GeMM core: cycle accounting, bandwidth and the two numeric engines.
"""

import numpy as np
import pytest

from app.core.gemm_core import (
    CoreConfig,
    GemmJob,
    Stage,
    core_summary,
    functional_gemm,
    input_bandwidth_bits_per_cycle,
    peak_input_bandwidth,
    schedule_gemm,
    simulate_training_iteration,
    training_jobs,
)
from app.core.mac_datapath import MacModeKind
from app.core.mx_formats import FP4_E2M1, FP6_E3M2, FP8_E4M3, INT8
from app.core.mx_quant import SQUARE8X8, VECTOR32, Orientation, dequantize_matrix, quantize_matrix
from app.errors import GeometryError, InvalidInputError, ModeMismatchError


def test_core_constants():
    summary = core_summary(CoreConfig.for_format(INT8))
    assert summary["pe_arrays"] == 64
    assert summary["mac_count"] == 4096
    assert summary["bandwidth_gb_s"] == pytest.approx(330.0)
    assert summary["writeback_stall_cycles"] == 25


@pytest.mark.parametrize(
    "fmt,expected",
    [(INT8, 1300), (FP8_E4M3, 5200), (FP4_E2M1, 5280), (FP6_E3M2, 3920)],
)
def test_input_bandwidth(fmt, expected):
    assert input_bandwidth_bits_per_cycle(fmt) == expected


def test_peak_bandwidth_fits_the_memory():
    assert peak_input_bandwidth(MacModeKind.FP8FP6) == 5200
    for kind in MacModeKind:
        assert peak_input_bandwidth(kind) <= CoreConfig.for_format(INT8).max_bw_bits_per_cycle


def test_training_jobs_skip_first_backward(pusher):
    jobs = training_jobs(pusher)
    assert len(jobs) == 11
    backward = [j for j in jobs if j.stage is Stage.BACKWARD]
    assert [j.layer for j in backward] == [1, 2, 3]
    assert backward[0] == GemmJob(32, 256, 256, Stage.BACKWARD, 1)
    weight_grad = [j for j in jobs if j.stage is Stage.WEIGHT_GRAD]
    assert weight_grad[0] == GemmJob(32, 32, 256, Stage.WEIGHT_GRAD, 0)


@pytest.mark.parametrize("fmt,total", [(INT8, 5151), (FP8_E4M3, 2319), (FP4_E2M1, 1847)])
def test_pusher_iteration_cycles(pusher, fmt, total):
    report = simulate_training_iteration(CoreConfig.for_format(fmt), pusher)
    assert report.total_cycles == total
    assert report.total_cycles == report.compute_cycles + report.stall_cycles


def test_int8_stage_breakdown(pusher):
    report = simulate_training_iteration(CoreConfig.for_format(INT8), pusher)
    forward = report.stage(Stage.FORWARD)
    backward = report.stage(Stage.BACKWARD)
    weight_grad = report.stage("WeightGrad")
    assert (forward.compute_cycles, forward.stall_cycles, forward.total_cycles) == (1344, 175, 1519)
    assert (backward.compute_cycles, backward.stall_cycles, backward.total_cycles) == (1088, 150, 1238)
    assert (weight_grad.compute_cycles, weight_grad.stall_cycles, weight_grad.total_cycles) == (1344, 1050, 2394)
    assert forward.busy_array_cycles == 73728
    assert weight_grad.busy_array_cycles == 73728
    assert forward.utilization == pytest.approx(73728 / (64 * 1519))
    assert report.latency_us == pytest.approx(10.302)


def test_overlapped_writeback_hides_behind_compute():
    job = GemmJob(32, 32, 256, Stage.FORWARD, 0)
    plain = schedule_gemm(CoreConfig.for_format(FP4_E2M1), job)
    overlapped = schedule_gemm(CoreConfig.for_format(FP4_E2M1, overlap_writeback=True), job)
    assert plain.waves == 2
    assert plain.stall_cycles == 50
    assert overlapped.stall_cycles == 46
    int8 = schedule_gemm(CoreConfig.for_format(INT8, overlap_writeback=True), GemmJob(32, 256, 256))
    assert int8.stall_cycles == 25


def test_empty_gemm():
    report = schedule_gemm(CoreConfig.for_format(INT8), GemmJob(0, 8, 8))
    assert report.waves == 0
    assert report.total_cycles == 0
    assert report.utilization == 0.0
    with pytest.raises(InvalidInputError):
        GemmJob(-1, 8, 8)


def test_small_gemm_underuses_the_grid():
    report = schedule_gemm(CoreConfig.for_format(INT8), GemmJob(8, 8, 8))
    assert report.waves == 1
    assert report.busy_array_cycles == 8
    assert report.bw_used_bits_per_cycle == pytest.approx(2 * 520 / 8)


def _square(rng, fmt, shape):
    return quantize_matrix(rng.standard_normal(shape), fmt, SQUARE8X8)


def test_int8_engines_agree_exactly(rng):
    cfg = CoreConfig.for_format(INT8)
    a = _square(rng, INT8, (16, 16))
    b = _square(rng, INT8, (16, 16))
    datapath = functional_gemm(cfg, a, b, engine="datapath")
    vectorized = functional_gemm(cfg, a, b, engine="vectorized")
    assert datapath.dtype == np.float32
    np.testing.assert_array_equal(datapath, vectorized)


@pytest.mark.parametrize("fmt", [FP8_E4M3, FP4_E2M1])
def test_fp_engines_agree_closely(rng, fmt):
    cfg = CoreConfig.for_format(fmt)
    a = _square(rng, fmt, (16, 12))
    b = _square(rng, fmt, (12, 10))
    datapath = functional_gemm(cfg, a, b, engine="datapath")
    vectorized = functional_gemm(cfg, a, b, engine="vectorized")
    assert datapath.shape == (16, 10)
    np.testing.assert_allclose(datapath, vectorized, rtol=1e-5, atol=1e-5)


def test_vectorized_matches_dequantized_product(rng):
    cfg = CoreConfig.for_format(FP8_E4M3)
    a = quantize_matrix(rng.standard_normal((5, 40)), FP8_E4M3, VECTOR32, Orientation.ROW_BLOCKS)
    b = quantize_matrix(rng.standard_normal((40, 3)), FP8_E4M3, VECTOR32, Orientation.COL_BLOCKS)
    out = functional_gemm(cfg, a, b)
    np.testing.assert_allclose(out, dequantize_matrix(a) @ dequantize_matrix(b), rtol=1e-5, atol=1e-5)


def test_operand_checks(rng):
    cfg = CoreConfig.for_format(INT8)
    a = _square(rng, INT8, (8, 8))
    with pytest.raises(InvalidInputError):
        functional_gemm(cfg, a, _square(rng, INT8, (16, 8)))
    with pytest.raises(InvalidInputError):
        functional_gemm(cfg, a, a, engine="analog")
    with pytest.raises(ModeMismatchError):
        functional_gemm(cfg, a, _square(rng, FP8_E4M3, (8, 8)))
    row = quantize_matrix(rng.standard_normal((8, 32)), INT8, VECTOR32, Orientation.ROW_BLOCKS)
    col = quantize_matrix(rng.standard_normal((32, 8)), INT8, VECTOR32, Orientation.COL_BLOCKS)
    with pytest.raises(GeometryError):
        functional_gemm(cfg, row, col, engine="datapath")
    with pytest.raises(GeometryError):
        functional_gemm(cfg, row, quantize_matrix(rng.standard_normal((32, 8)), INT8, VECTOR32, Orientation.ROW_BLOCKS))
