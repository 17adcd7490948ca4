"""
Functional, bit-faithful model of the precision-scalable MX MAC unit.

The unit is built from sixteen 2-bit multipliers wired per mode:
- Int8:    one 8x8-bit product per step. Magnitudes are split into nibbles;
           each of the four nibble products uses four 2-bit multipliers and
           one L1 adder, and L2 merges the four L1 outputs (shifts 0/4/4/8).
- Fp8Fp6:  four element products per step, one L1 adder each (4x4-bit
           significand multiply), merged pairwise in L2 with exponent
           alignment inside a 26-bit (or 24-bit normalized) window.
- Fp4:     eight E2M1 products per step on eight multipliers; two L1 adders
           each shift-add four products by their exponents (0..4), L2 adds
           the two L1 outputs.

Every step produces a single product-sum, scaled by the shared-exponent sum
and added into the FP32 accumulator with round-to-nearest-even.

NOTE: the L2 window truncates the finished product-sum below its leading one;
the accumulation add is exact then rounded once, so a step lands within one
FP32 ulp of the exact result. Bypass only changes which path is traced.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from app.core.mx_formats import (
    FP4_E2M1,
    FP6_E2M3,
    FP6_E3M2,
    FP8_E4M3,
    FP8_E5M2,
    INT8,
    ElementCode,
    ElementFormat,
    encode_element,
    get_format,
    is_special,
    split_fields,
)
from app.errors import ContractViolationError, DatapathRangeError, InvalidInputError, ModeMismatchError
from app.utils.fp32 import FP32_MAX, dyadic_add, float_to_dyadic, is_fp32_exact, round_to_fp32

logger = logging.getLogger(__name__)

MULTIPLIERS = 16
INT8_FRACTION_BITS = 6
FP4_L1_MAX_SHIFT = 4


class MacModeKind(str, Enum):
    INT8 = "Int8"
    FP8FP6 = "Fp8Fp6"
    FP4 = "Fp4"


_MODE_FORMATS = {
    MacModeKind.INT8: (INT8,),
    MacModeKind.FP8FP6: (FP8_E5M2, FP8_E4M3, FP6_E3M2, FP6_E2M3),
    MacModeKind.FP4: (FP4_E2M1,),
}
_PAIRS_PER_STEP = {MacModeKind.INT8: 1, MacModeKind.FP8FP6: 4, MacModeKind.FP4: 8}
_ACTIVE_MULTIPLIERS = {MacModeKind.INT8: 16, MacModeKind.FP8FP6: 16, MacModeKind.FP4: 8}

_MODE_ALIASES = {
    "int8": MacModeKind.INT8,
    "fp8fp6": MacModeKind.FP8FP6,
    "fp8": MacModeKind.FP8FP6,
    "fp6": MacModeKind.FP8FP6,
    "fp8/fp6": MacModeKind.FP8FP6,
    "fp4": MacModeKind.FP4,
}


def get_mode_kind(name: "str | MacModeKind") -> MacModeKind:
    if isinstance(name, MacModeKind):
        return name
    kind = _MODE_ALIASES.get(str(name).strip().lower())
    if kind is None:
        raise InvalidInputError(f"Unknown MAC mode '{name}' (expected int8, fp8fp6 or fp4)")
    return kind


def mode_formats(mode: "str | MacModeKind") -> Tuple[ElementFormat, ...]:
    return _MODE_FORMATS[get_mode_kind(mode)]


def mode_for_format(fmt: ElementFormat) -> MacModeKind:
    for kind, formats in _MODE_FORMATS.items():
        if fmt in formats:
            return kind
    raise ModeMismatchError(f"no MAC mode handles {fmt}")


@dataclass(frozen=True)
class MacMode:
    mode: MacModeKind
    element_format: ElementFormat

    def __post_init__(self):
        if self.element_format not in _MODE_FORMATS[self.mode]:
            raise ModeMismatchError(f"{self.element_format} is not a {self.mode.value} format")

    @classmethod
    def for_format(cls, fmt: "str | ElementFormat") -> "MacMode":
        fmt = get_format(fmt)
        return cls(mode_for_format(fmt), fmt)

    @classmethod
    def parse(cls, mode: "str | MacModeKind", fmt: "str | ElementFormat | None" = None) -> "MacMode":
        """Build a mode from a mode name and optional format (defaults to the mode's first format)."""
        kind = get_mode_kind(mode)
        element_format = get_format(fmt) if fmt is not None else _MODE_FORMATS[kind][0]
        return cls(kind, element_format)

    @property
    def pairs_per_step(self) -> int:
        return _PAIRS_PER_STEP[self.mode]

    @property
    def active_multipliers(self) -> int:
        return _ACTIVE_MULTIPLIERS[self.mode]


def multiplier_utilization(mode: "MacMode | MacModeKind") -> float:
    kind = mode.mode if isinstance(mode, MacMode) else mode
    return _ACTIVE_MULTIPLIERS[kind] / MULTIPLIERS


class L2Policy(str, Enum):
    MANTISSA_ADDER_EXTENSION = "MantissaAdderExtension"
    NORMALIZE_INPUTS = "NormalizeInputs"


_VARIANT_NAMES = {
    "ext": ("MantissaAdderExtension", False),
    "norm": ("NormalizeInputs", False),
    "ext-bypass": ("MantissaAdderExtension", True),
    "norm-bypass": ("NormalizeInputs", True),
}


@dataclass(frozen=True)
class MacVariant:
    l2_subnormal_policy: L2Policy = L2Policy.MANTISSA_ADDER_EXTENSION
    bypass_enabled: bool = True

    @property
    def window_bits(self) -> int:
        """Mantissa adder width: 24 + 2 extension bits, or 24 after normalization."""
        return 26 if self.l2_subnormal_policy is L2Policy.MANTISSA_ADDER_EXTENSION else 24

    @property
    def name(self) -> str:
        base = "ext" if self.l2_subnormal_policy is L2Policy.MANTISSA_ADDER_EXTENSION else "norm"
        return f"{base}-bypass" if self.bypass_enabled else base

    @classmethod
    def from_name(cls, name: str) -> "MacVariant":
        key = name.strip().lower().replace("_", "-").replace("+", "-").replace(" ", "")
        if key not in _VARIANT_NAMES:
            raise InvalidInputError(f"Unknown MAC variant '{name}' (expected one of {sorted(_VARIANT_NAMES)})")
        policy, bypass = _VARIANT_NAMES[key]
        return cls(L2Policy(policy), bypass)


DEFAULT_VARIANT = MacVariant()


@dataclass(frozen=True)
class MacOperands:
    """Codes for one step: 1 / 4 / 8 pairs for Int8 / Fp8Fp6 / Fp4."""

    a_codes: Tuple[int, ...]
    b_codes: Tuple[int, ...]
    shared_scale_product_exp: int = 0


@dataclass(frozen=True)
class MacState:
    accumulator: float = 0.0
    steps: int = 0

    def __post_init__(self):
        if not is_fp32_exact(self.accumulator) or abs(self.accumulator) > FP32_MAX:
            raise ContractViolationError(f"accumulator {self.accumulator!r} is not a finite FP32 value")


class MacTrace(BaseModel):
    """Internal signals of one MAC step, replayable from the operands."""

    cycle: int
    mode: str
    format: str
    variant: str
    active_multipliers: int
    partial_products: List[int]
    l1_inputs: List[List[List[int]]]
    l1_outputs: List[int]
    l2_inputs: List[List[int]]
    l2_output: List[int]
    alignment_shifts: List[int]
    bypass_taken: bool
    shared_scale_exp: int
    accumulator_in: float
    accumulator_out: float
    saturated: bool


@dataclass(frozen=True)
class L2Term:
    """Signed significand at an exponent; width is the nominal field width in bits."""

    sig: int
    exp: int
    width: int

    def as_list(self) -> List[int]:
        return [self.sig, self.exp]


@dataclass
class _Signals:
    partial_products: List[int] = field(default_factory=list)
    l1_inputs: List[List[List[int]]] = field(default_factory=list)
    l1_outputs: List[int] = field(default_factory=list)
    l2_inputs: List[List[int]] = field(default_factory=list)
    alignment_shifts: List[int] = field(default_factory=list)
    bypass_taken: bool = False


# ---------------------------------------------------------------------------
# Multipliers and L1
# ---------------------------------------------------------------------------

def mul2bit(a: int, b: int) -> int:
    """Elementary 2-bit x 2-bit unsigned multiplier."""
    if not (0 <= a <= 3 and 0 <= b <= 3):
        raise DatapathRangeError(f"2-bit multiplier inputs out of range: {a}, {b}")
    return a * b


def l1_add(mode: "MacModeKind | MacMode", inputs: Sequence[Tuple[int, int]]) -> int:
    """
    L1 adder: exact sum of up to four (value, shift) inputs.

    Int8/Fp8Fp6 inputs are unsigned 4-bit partial products forming an 8-bit
    output. Fp4 inputs are signed E3M4 product significands shifted by their
    exponent (0..4), summed on the same adder widened by 2 bits.
    """
    kind = mode.mode if isinstance(mode, MacMode) else mode
    if len(inputs) > 4:
        raise DatapathRangeError(f"L1 adder takes at most 4 inputs, got {len(inputs)}")
    total = 0
    if kind is MacModeKind.FP4:
        for value, shift in inputs:
            if not 0 <= shift <= FP4_L1_MAX_SHIFT:
                raise DatapathRangeError(f"FP4 product exponent {shift} outside 0..{FP4_L1_MAX_SHIFT}")
            if abs(value) > 9:
                raise DatapathRangeError(f"FP4 product significand {value} wider than 4 bits")
            total += value << shift
        if abs(total) >= 1 << 10:
            raise DatapathRangeError(f"FP4 L1 sum {total} overflows the extended adder")
        return total
    for value, shift in inputs:
        if not 0 <= value < 16:
            raise DatapathRangeError(f"partial product {value} wider than 4 bits")
        total += value << shift
    if total >= 1 << 8:
        raise DatapathRangeError(f"L1 sum {total} overflows the 8-bit output")
    return total


def _mul4x4(a: int, b: int, signals: Optional[_Signals] = None) -> int:
    """4x4-bit unsigned multiply on four 2-bit multipliers and one L1 adder."""
    a0, a1 = a & 3, a >> 2
    b0, b1 = b & 3, b >> 2
    partials = [mul2bit(a0, b0), mul2bit(a0, b1), mul2bit(a1, b0), mul2bit(a1, b1)]
    inputs = list(zip(partials, (0, 2, 2, 4)))
    out = l1_add(MacModeKind.INT8, inputs)
    if signals is not None:
        signals.partial_products.extend(partials)
        signals.l1_inputs.append([[v, s] for v, s in inputs])
        signals.l1_outputs.append(out)
    return out


def _int8_leaf_terms(a: int, b: int, signals: Optional[_Signals] = None) -> List[L2Term]:
    """Four nibble products of |a| x |b|, signed with the product sign."""
    if not (-128 <= a <= 127 and -128 <= b <= 127):
        raise DatapathRangeError(f"INT8 operands out of range: {a}, {b}")
    sign = -1 if (a < 0) != (b < 0) else 1
    ma, mb = abs(a), abs(b)
    a_lo, a_hi = ma & 0xF, ma >> 4
    b_lo, b_hi = mb & 0xF, mb >> 4
    pairs = ((a_lo, b_lo, 0), (a_lo, b_hi, 4), (a_hi, b_lo, 4), (a_hi, b_hi, 8))
    terms = []
    for x, y, shift in pairs:
        terms.append(L2Term(sign * _mul4x4(x, y, signals), shift, 8))
    return terms


def int8_multiply(a: int, b: int) -> int:
    """Exact a*b through sign-magnitude conversion, 16 partial products and the L1/L2 tree."""
    terms = _int8_leaf_terms(a, b)
    return _l2_reduce(DEFAULT_VARIANT, MacModeKind.INT8, terms).sig


# ---------------------------------------------------------------------------
# Floating-point products
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FpProduct:
    """Unnormalized product: value = (-1)**sign * significand * 2**exponent."""

    sign: int
    significand: int
    exp_sum: int
    exponent: int
    width: int

    @property
    def value(self) -> float:
        magnitude = float(self.significand) * 2.0 ** self.exponent
        return -magnitude if self.sign else magnitude

    def signed_significand(self) -> int:
        return -self.significand if self.sign else self.significand


def _operand_fields(fmt: ElementFormat, bits: int) -> Tuple[int, int, int]:
    """(sign, significand with implicit bit, effective exponent field)."""
    ElementCode(fmt, bits)
    if is_special(fmt, bits):
        raise ContractViolationError(f"{fmt} code {bits:#x} is Inf/NaN; the datapath takes finite codes only")
    sign, exp_field, mant_field = split_fields(fmt, bits)
    significand = mant_field | ((1 << fmt.mant_bits) if exp_field else 0)
    return sign, significand, max(exp_field, 1)


def fp_multiply(a_bits: int, b_bits: int, fmt: ElementFormat, signals: Optional[_Signals] = None) -> FpProduct:
    """
    Multiply two FP element codes without normalizing.

    Significands (implicit bit included, subnormals without it) are multiplied
    on four 2-bit multipliers (one for E2M1); effective exponents are added.
    """
    if fmt.is_int:
        raise ModeMismatchError("fp_multiply takes floating-point element formats only")
    sa, sig_a, ea = _operand_fields(fmt, a_bits)
    sb, sig_b, eb = _operand_fields(fmt, b_bits)
    if fmt == FP4_E2M1:
        significand = mul2bit(sig_a, sig_b)
        if signals is not None:
            signals.partial_products.append(significand)
    else:
        significand = _mul4x4(sig_a, sig_b, signals)
    exp_sum = ea + eb
    return FpProduct(
        sign=sa ^ sb,
        significand=significand,
        exp_sum=exp_sum,
        exponent=exp_sum - 2 * (fmt.bias + fmt.mant_bits),
        width=2 * (fmt.mant_bits + 1),
    )


# ---------------------------------------------------------------------------
# L2
# ---------------------------------------------------------------------------

def _align_add(variant: MacVariant, a: L2Term, b: L2Term, signals: Optional[_Signals]) -> L2Term:
    """
    Align both operands below the leading position and add.

    The window sets where the smaller operand is aligned to; bits it pushes
    out are kept in the guard lane below the window so a later cancellation
    in the tree cannot expose a truncation. The window is applied once to the
    finished product-sum (see _truncate_to_window).
    """
    window = variant.window_bits
    extension = variant.l2_subnormal_policy is L2Policy.MANTISSA_ADDER_EXTENSION

    def leading(t: L2Term) -> int:
        # the extended adder works from nominal field positions; normalization finds the real leading one
        if extension:
            return t.exp + t.width - 1
        return t.exp + abs(t.sig).bit_length() - 1

    live = [t for t in (a, b) if t.sig != 0]
    if not live:
        if signals is not None:
            signals.alignment_shifts.extend([0, 0])
        return L2Term(0, min(a.exp, b.exp), window + 1)
    top = max(leading(t) for t in live) + 1
    lsb = top - window
    guard_lsb = lsb
    for t in (a, b):
        if signals is not None:
            signals.alignment_shifts.append(max(lsb - t.exp, 0))
        if t.sig != 0 and t.exp < lsb and abs(t.sig) & ((1 << (lsb - t.exp)) - 1):
            guard_lsb = min(guard_lsb, t.exp)
    total = sum(t.sig << (t.exp - guard_lsb) for t in live)
    return L2Term(total, guard_lsb, top - guard_lsb + 1)


def _truncate_to_window(variant: MacVariant, term: L2Term) -> L2Term:
    """
    Truncate a product-sum to the mantissa window below its leading one.

    The extension variant keeps 26 bits. The normalized variant keeps its
    24-bit significand plus a guard bit and jams a sticky bit below it. Both
    stay within a quarter FP32 ulp of the exact sum.
    """
    extension = variant.l2_subnormal_policy is L2Policy.MANTISSA_ADDER_EXTENSION
    register = variant.window_bits if extension else variant.window_bits + 2
    mag = abs(term.sig)
    extra = mag.bit_length() - register
    if extra <= 0:
        return term
    if extension:
        kept, exp = mag >> extra, term.exp + extra
    else:
        head = mag >> (extra + 1)
        sticky = 1 if mag & ((1 << (extra + 1)) - 1) else 0
        kept, exp = (head << 1) | sticky, term.exp + extra
    return L2Term(-kept if term.sig < 0 else kept, exp, register + 1)


def l2_add(variant: MacVariant, mode: "MacModeKind | MacMode", a: L2Term, b: L2Term,
           signals: Optional[_Signals] = None) -> L2Term:
    """
    L2 adder.

    Int8 and Fp4 outputs share one integer grid, so with bypass enabled they
    skip alignment and add exactly. Everything else is aligned against the
    26-bit (extension) or 24-bit (normalized) window with shifted-out bits
    held in the guard lane. Bypass never changes the numeric result.
    """
    kind = mode.mode if isinstance(mode, MacMode) else mode
    if variant.bypass_enabled and kind in (MacModeKind.INT8, MacModeKind.FP4):
        if signals is not None:
            signals.bypass_taken = True
        e = min(a.exp, b.exp)
        total = (a.sig << (a.exp - e)) + (b.sig << (b.exp - e))
        return L2Term(total, e, max(a.width, b.width) + 1)
    return _align_add(variant, a, b, signals)


def _l2_reduce(variant: MacVariant, kind: MacModeKind, terms: Sequence[L2Term],
               signals: Optional[_Signals] = None) -> L2Term:
    """Pairwise L2 tree over the leaf terms: ((t0 + t1) + (t2 + t3))."""
    if signals is not None:
        signals.l2_inputs.extend(t.as_list() for t in terms)
    level = list(terms)
    while len(level) > 1:
        level = [l2_add(variant, kind, level[i], level[i + 1], signals) for i in range(0, len(level), 2)]
    return level[0]


# ---------------------------------------------------------------------------
# MAC step
# ---------------------------------------------------------------------------

def _product_sum(mode: MacMode, variant: MacVariant, operands: MacOperands,
                 signals: Optional[_Signals]) -> L2Term:
    """Cycle's product-sum as a term in real units (before the shared scale)."""
    kind = mode.mode
    fmt = mode.element_format
    if kind is MacModeKind.INT8:
        a, b = operands.a_codes[0], operands.b_codes[0]
        a = a - 256 if a & 0x80 else a
        b = b - 256 if b & 0x80 else b
        result = _l2_reduce(variant, kind, _int8_leaf_terms(a, b, signals), signals)
        return L2Term(result.sig, result.exp - 2 * INT8_FRACTION_BITS, result.width)
    if kind is MacModeKind.FP8FP6:
        leaves = []
        for a, b in zip(operands.a_codes, operands.b_codes):
            p = fp_multiply(a, b, fmt, signals)
            leaves.append(L2Term(p.signed_significand(), p.exponent, p.width))
        return _truncate_to_window(variant, _l2_reduce(variant, kind, leaves, signals))
    # Fp4: two L1 shift-adders of four completed products each
    l1_terms = []
    for group in range(2):
        inputs = []
        for a, b in zip(operands.a_codes[4 * group: 4 * group + 4], operands.b_codes[4 * group: 4 * group + 4]):
            p = fp_multiply(a, b, fmt, signals)
            inputs.append((p.signed_significand(), p.exp_sum - 2))
        out = l1_add(kind, inputs)
        if signals is not None:
            signals.l1_inputs.append([[v, s] for v, s in inputs])
            signals.l1_outputs.append(out)
        l1_terms.append(L2Term(out, 0, 10))
    result = _l2_reduce(variant, kind, l1_terms, signals)
    # product of two E2M1 values: sig * 2**(exp_sum - 2*(bias + mant)), with exp_sum = shift + 2
    return L2Term(result.sig, result.exp + 2 - 2 * (fmt.bias + fmt.mant_bits), result.width)


def _check_operands(mode: MacMode, operands: MacOperands) -> None:
    n = mode.pairs_per_step
    if len(operands.a_codes) != n or len(operands.b_codes) != n:
        raise ModeMismatchError(
            f"{mode.mode.value} mode takes {n} operand pair(s) per step, got "
            f"{len(operands.a_codes)}/{len(operands.b_codes)}"
        )
    for bits in (*operands.a_codes, *operands.b_codes):
        ElementCode(mode.element_format, bits)


def mac_step(state: MacState, operands: MacOperands, mode: MacMode,
             variant: MacVariant = DEFAULT_VARIANT, trace: bool = False) -> Tuple[MacState, Optional[MacTrace]]:
    """
    One accumulation step: product-sum through L1/L2, shared scale applied,
    exact add into the FP32 accumulator, rounded to nearest even.

    Overflow saturates to the largest finite FP32 value and is flagged in the
    trace and the log.
    """
    _check_operands(mode, operands)
    signals = _Signals() if trace else None
    psum = _product_sum(mode, variant, operands, signals)
    scaled = (psum.sig, psum.exp + operands.shared_scale_product_exp)
    acc_sig, acc_exp = float_to_dyadic(state.accumulator)
    new_value = round_to_fp32(*dyadic_add((acc_sig, acc_exp), scaled))
    saturated = abs(new_value) > FP32_MAX
    if saturated:
        new_value = FP32_MAX if new_value > 0 else -FP32_MAX
        logger.warning(f"MAC accumulator saturated at step {state.steps} ({mode.mode.value})")
    new_state = MacState(accumulator=new_value, steps=state.steps + 1)
    record = None
    if signals is not None:
        record = MacTrace(
            cycle=state.steps,
            mode=mode.mode.value,
            format=str(mode.element_format),
            variant=variant.name,
            active_multipliers=mode.active_multipliers,
            partial_products=signals.partial_products,
            l1_inputs=signals.l1_inputs,
            l1_outputs=signals.l1_outputs,
            l2_inputs=signals.l2_inputs,
            l2_output=[psum.sig, psum.exp],
            alignment_shifts=signals.alignment_shifts,
            bypass_taken=signals.bypass_taken,
            shared_scale_exp=operands.shared_scale_product_exp,
            accumulator_in=state.accumulator,
            accumulator_out=new_value,
            saturated=saturated,
        )
    return new_state, record


def run_mac_steps(steps: Iterable[MacOperands], mode: MacMode, variant: MacVariant = DEFAULT_VARIANT,
                  state: Optional[MacState] = None) -> Tuple[MacState, List[MacTrace]]:
    """Run a scripted sequence of steps on one MAC, collecting the trace."""
    state = state or MacState()
    records = []
    for operands in steps:
        state, record = mac_step(state, operands, mode, variant, trace=True)
        records.append(record)
    logger.info(f"Ran {len(records)} MAC step(s) in {mode.mode.value} mode, accumulator {state.accumulator!r}")
    return state, records


def scripted_operands(steps: Sequence[dict], mode: MacMode, as_codes: bool = False) -> List[MacOperands]:
    """
    Build operands from script entries {"a": [...], "b": [...], "scale_exp": int}.

    Entries are raw element codes when as_codes is set, otherwise real values
    encoded into the mode's element format.
    """
    operands = []
    for step in steps:
        try:
            a, b = step["a"], step["b"]
            if as_codes:
                a_codes = tuple(int(v) for v in a)
                b_codes = tuple(int(v) for v in b)
            else:
                a_codes = tuple(encode_element(float(v), mode.element_format).bits for v in a)
                b_codes = tuple(encode_element(float(v), mode.element_format).bits for v in b)
            operands.append(MacOperands(a_codes, b_codes, int(step.get("scale_exp", 0))))
        except (KeyError, TypeError, AttributeError) as e:
            raise InvalidInputError(f"malformed MAC step {step!r}") from e
    return operands
