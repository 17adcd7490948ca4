"""
Test the bit-faithful MAC unit: multipliers, L1/L2 adders, accumulation and traces.
"""

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from app.core.mac_datapath import (
    DEFAULT_VARIANT,
    L2Policy,
    MacMode,
    MacModeKind,
    MacOperands,
    MacState,
    MacVariant,
    fp_multiply,
    int8_multiply,
    l1_add,
    mac_step,
    multiplier_utilization,
    run_mac_steps,
    scripted_operands,
)
from app.core.mx_formats import FP4_E2M1, FP6_E2M3, FP6_E3M2, FP8_E4M3, FP8_E5M2, INT8, ElementCode, decode_element
from app.errors import ContractViolationError, DatapathRangeError, InvalidInputError, ModeMismatchError
from app.utils.fp32 import FP32_MAX, ulp32

INT8_MODE = MacMode(MacModeKind.INT8, INT8)
FP4_MODE = MacMode(MacModeKind.FP4, FP4_E2M1)
E4M3_MODE = MacMode(MacModeKind.FP8FP6, FP8_E4M3)

FP4_ONE = 0b0010
E4M3_ONE = 0x38


def _load_golden(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def test_mode_wiring():
    assert INT8_MODE.pairs_per_step == 1
    assert E4M3_MODE.pairs_per_step == 4
    assert FP4_MODE.pairs_per_step == 8
    assert multiplier_utilization(MacModeKind.INT8) == 1.0
    assert multiplier_utilization(MacModeKind.FP8FP6) == 1.0
    assert multiplier_utilization(MacModeKind.FP4) == 0.5
    assert MacMode.for_format("E3M2").mode is MacModeKind.FP8FP6
    with pytest.raises(ModeMismatchError):
        MacMode(MacModeKind.INT8, FP4_E2M1)


def test_variant_names():
    assert MacVariant.from_name("ext") == MacVariant(L2Policy.MANTISSA_ADDER_EXTENSION, False)
    assert MacVariant.from_name("norm").window_bits == 24
    assert MacVariant.from_name("ext-bypass") == DEFAULT_VARIANT
    assert DEFAULT_VARIANT.window_bits == 26
    with pytest.raises(InvalidInputError):
        MacVariant.from_name("turbo")


@pytest.mark.parametrize("fmt", [FP6_E2M3, FP6_E3M2, FP4_E2M1])
def test_fp_products_are_exact(fmt):
    for a in range(fmt.code_count):
        for b in range(fmt.code_count):
            expected = decode_element(ElementCode(fmt, a)) * decode_element(ElementCode(fmt, b))
            assert fp_multiply(a, b, fmt).value == expected


def test_fp8_products_are_exact_on_a_sample():
    for fmt in (FP8_E4M3, FP8_E5M2):
        codes = [c for c in range(0, 256, 5) if math.isfinite(decode_element(ElementCode(fmt, c)))]
        for a in codes:
            for b in codes:
                expected = decode_element(ElementCode(fmt, a)) * decode_element(ElementCode(fmt, b))
                assert fp_multiply(a, b, fmt).value == expected


def test_fp_multiply_rejects_specials():
    with pytest.raises(ContractViolationError):
        fp_multiply(0x7C, 0x3C, FP8_E5M2)


def test_fp4_l1_shift_range():
    assert l1_add(MacModeKind.FP4, [(4, 0), (-9, 4)]) == 4 - 144
    with pytest.raises(DatapathRangeError):
        l1_add(MacModeKind.FP4, [(1, 5)])
    with pytest.raises(DatapathRangeError):
        l1_add(MacModeKind.INT8, [(16, 0)])


def test_int8_unit_golden_trace(golden_dir):
    steps = [MacOperands((1,), (1,))] * 8
    state, traces = run_mac_steps(steps, INT8_MODE)
    assert state.accumulator == 8 * 2.0 ** -12
    assert [t.model_dump() for t in traces] == _load_golden(golden_dir / "int8_unit.jsonl")


def test_fp4_ones_golden_trace(golden_dir):
    steps = [MacOperands((FP4_ONE,) * 8, (FP4_ONE,) * 8)]
    state, traces = run_mac_steps(steps, FP4_MODE, MacVariant.from_name("ext-bypass"))
    assert state.accumulator == 8.0
    assert [t.model_dump() for t in traces] == _load_golden(golden_dir / "fp4_ones.jsonl")


def test_bypass_never_changes_the_result():
    operands = MacOperands((FP4_ONE,) * 8, (FP4_ONE,) * 8)
    state, record = mac_step(MacState(), operands, FP4_MODE, MacVariant.from_name("ext"), trace=True)
    assert state.accumulator == 8.0
    assert record.bypass_taken is False
    assert record.alignment_shifts == [0, 0]
    assert record.l2_output == [32 << 16, -18]


def test_fp8_step_sums_four_products():
    operands = MacOperands((E4M3_ONE,) * 4, (E4M3_ONE,) * 4)
    for name in ("ext-bypass", "norm"):
        state, record = mac_step(MacState(), operands, E4M3_MODE, MacVariant.from_name(name), trace=True)
        assert state.accumulator == 4.0
        assert len(record.partial_products) == 16
        assert len(record.alignment_shifts) == 6
        assert record.bypass_taken is False
        assert record.active_multipliers == 16


def test_shared_scale_applies_to_the_product_sum():
    state, _ = mac_step(MacState(), MacOperands((64,), (64,), shared_scale_product_exp=3), INT8_MODE)
    assert state.accumulator == 8.0


def test_accumulator_rounds_to_nearest_even():
    tiny = MacOperands((1,), (1,), shared_scale_product_exp=-18)  # 2**-30
    state, _ = mac_step(MacState(accumulator=1.0), tiny, INT8_MODE)
    assert state.accumulator == 1.0
    half_ulp = MacOperands((1,), (1,), shared_scale_product_exp=-12)  # 2**-24
    state, _ = mac_step(MacState(accumulator=1.0), half_ulp, INT8_MODE)
    assert state.accumulator == 1.0
    state, _ = mac_step(MacState(accumulator=1.0 + 2.0 ** -23), half_ulp, INT8_MODE)
    assert state.accumulator == 1.0 + 2.0 ** -22


def test_accumulator_saturates():
    big = MacOperands((127,), (127,), shared_scale_product_exp=120)
    state, record = mac_step(MacState(accumulator=FP32_MAX), big, INT8_MODE, trace=True)
    assert state.accumulator == FP32_MAX
    assert record.saturated is True


def test_accumulator_must_be_fp32():
    with pytest.raises(ContractViolationError):
        MacState(accumulator=0.1)


def test_operand_count_checked():
    with pytest.raises(ModeMismatchError):
        mac_step(MacState(), MacOperands((1, 1), (1, 1)), INT8_MODE)


def test_scripted_operands_encode_values():
    steps = scripted_operands([{"a": [1.0] * 4, "b": [0.5] * 4, "scale_exp": 1}], E4M3_MODE)
    state, _ = run_mac_steps(steps, E4M3_MODE)
    assert state.accumulator == 4.0
    with pytest.raises(InvalidInputError):
        scripted_operands([{"a": [1.0]}], E4M3_MODE)


FP8FP6_FORMATS = (FP8_E5M2, FP8_E4M3, FP6_E3M2, FP6_E2M3)


def _finite_codes(fmt):
    return [c for c in range(fmt.code_count) if math.isfinite(decode_element(ElementCode(fmt, c)))]


def _random_steps(fmt, rng, count):
    codes = np.array(_finite_codes(fmt))
    pairs = MacMode.for_format(fmt).pairs_per_step
    steps = []
    for _ in range(count):
        a = tuple(int(c) for c in rng.choice(codes, pairs))
        b = tuple(int(c) for c in rng.choice(codes, pairs))
        steps.append(MacOperands(a, b, int(rng.integers(-6, 7))))
    return steps


def _exact_product_sum(fmt, operands):
    total = sum(
        Fraction(decode_element(ElementCode(fmt, a))) * Fraction(decode_element(ElementCode(fmt, b)))
        for a, b in zip(operands.a_codes, operands.b_codes)
    )
    return total * Fraction(2) ** operands.shared_scale_product_exp


@pytest.mark.parametrize("fmt", FP8FP6_FORMATS, ids=str)
@pytest.mark.parametrize("variant", ["ext-bypass", "norm"])
def test_fp_step_within_one_ulp_of_exact(fmt, variant, rng):
    mode = MacMode.for_format(fmt)
    state = MacState()
    for i, operands in enumerate(_random_steps(fmt, rng, 3000)):
        if i % 8 == 0:
            state = MacState()
        psum = _exact_product_sum(fmt, operands)
        exact = Fraction(state.accumulator) + psum
        acc_in = state.accumulator
        state, _ = mac_step(state, operands, mode, MacVariant.from_name(variant))
        bound = ulp32(max(abs(acc_in), abs(float(exact)), abs(float(psum))))
        assert abs(Fraction(state.accumulator) - exact) <= Fraction(bound), (operands, acc_in)


def test_fp_step_survives_cancellation_in_the_tree():
    mode = MacMode.for_format(FP8_E5M2)
    operands = MacOperands((41, 191, 235, 68), (39, 225, 149, 220))
    exact = _exact_product_sum(FP8_E5M2, operands)
    for name in ("ext", "norm", "ext-bypass"):
        state, _ = mac_step(MacState(), operands, mode, MacVariant.from_name(name))
        assert abs(Fraction(state.accumulator) - exact) <= Fraction(ulp32(float(exact)))


@pytest.mark.parametrize("fmt", FP8FP6_FORMATS, ids=str)
def test_extension_and_normalize_variants_agree(fmt, rng):
    mode = MacMode.for_format(fmt)
    state = MacState()
    for i, operands in enumerate(_random_steps(fmt, rng, 2000)):
        if i % 8 == 0:
            state = MacState()
        psum = _exact_product_sum(fmt, operands)
        exact = Fraction(state.accumulator) + psum
        ext, _ = mac_step(state, operands, mode, MacVariant.from_name("ext"))
        norm, _ = mac_step(state, operands, mode, MacVariant.from_name("norm"))
        bound = ulp32(max(abs(state.accumulator), abs(float(exact)), abs(float(psum))))
        assert abs(ext.accumulator - norm.accumulator) <= bound
        state = ext


@pytest.mark.parametrize("name", ["ext", "norm"])
def test_subnormal_products_are_never_lost(name):
    variant = MacVariant.from_name(name)
    mode = MacMode.for_format(FP8_E4M3)
    # 448 * 448 on either side of two smallest-subnormal products: the large terms cancel
    operands = MacOperands((0x7E, 0x01, 0xFE, 0x01), (0x7E, 0x01, 0x7E, 0x01))
    state, _ = mac_step(MacState(), operands, mode, variant)
    assert state.accumulator == 2.0 ** -17
    for a in range(1, 8):
        for b in range(1, 8):
            subnormals = MacOperands((a, b, a | 0x80, b), (b, a, a, b))
            state, _ = mac_step(MacState(), subnormals, mode, variant)
            assert state.accumulator == float(_exact_product_sum(FP8_E4M3, subnormals))


def test_int8_multiply_exhaustive():
    for a in range(-128, 128):
        for b in range(-128, 128):
            assert int8_multiply(a, b) == a * b


def test_int8_random_accumulations_are_exact(rng):
    operands = rng.integers(0, 256, size=(10_000, 8, 2)).tolist()
    for row in operands:
        state = MacState()
        expected = 0
        for a, b in row:
            state, _ = mac_step(state, MacOperands((a,), (b,)), INT8_MODE)
            expected += (a - 256 if a >= 128 else a) * (b - 256 if b >= 128 else b)
        assert state.accumulator == math.ldexp(expected, -12)


@pytest.mark.parametrize("fmt", [INT8, FP4_E2M1, FP8_E5M2, FP8_E4M3], ids=str)
def test_bypass_is_bit_identical_on_random_steps(fmt, rng):
    mode = MacMode.for_format(fmt)
    for base in ("ext", "norm"):
        plain, bypass = MacState(), MacState()
        for operands in _random_steps(fmt, rng, 1500):
            plain, _ = mac_step(plain, operands, mode, MacVariant.from_name(base))
            bypass, _ = mac_step(bypass, operands, mode, MacVariant.from_name(f"{base}-bypass"))
            assert plain.accumulator == bypass.accumulator
