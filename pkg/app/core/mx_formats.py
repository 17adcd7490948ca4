"""
Bit-exact encode/decode of the six MX element formats and the E8M0 shared scale.

Element semantics follow the OCP MX convention:
- E5M2 carries IEEE-like Inf/NaN, E4M3 carries one NaN pattern per sign
  (S.1111.111), FP6/FP4/INT8 carry neither.
- INT8 is two's-complement fixed point with 6 fraction bits (value m * 2**-6),
  so the shared-scale rule applies uniformly (emax 0).
- Encoding rounds to nearest, ties to even, and saturates to the largest
  finite magnitude.

Scalar functions work on ElementCode/SharedScale values; the *_array variants
are the numpy kernels used by the block quantizer.
"""

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

from app.errors import ContractViolationError, InvalidInputError, NonFiniteValueError, ScaleRangeError

logger = logging.getLogger(__name__)

E8M0_BIAS = 127
E8M0_RESERVED = 255


class FormatName(str, Enum):
    INT8 = "INT8"
    FP8_E5M2 = "FP8_E5M2"
    FP8_E4M3 = "FP8_E4M3"
    FP6_E3M2 = "FP6_E3M2"
    FP6_E2M3 = "FP6_E2M3"
    FP4_E2M1 = "FP4_E2M1"


@dataclass(frozen=True)
class ElementFormat:
    """Descriptor of one MX element encoding. For INT8, mant_bits counts fraction bits."""

    name: FormatName
    total_bits: int
    exp_bits: int
    mant_bits: int
    bias: int
    emax: int
    has_inf: bool
    has_nan: bool

    @property
    def is_int(self) -> bool:
        return self.exp_bits == 0

    @property
    def sign_mask(self) -> int:
        return 1 << (self.total_bits - 1)

    @property
    def code_count(self) -> int:
        return 1 << self.total_bits

    @property
    def max_finite(self) -> float:
        return positive_finite_values(self)[-1]

    @property
    def min_finite(self) -> float:
        """Most negative finite value (-2.0 for INT8, -max_finite otherwise)."""
        if self.is_int:
            return -2.0
        return -self.max_finite

    @property
    def short_name(self) -> str:
        return self.name.value.split("_")[-1]

    def __str__(self) -> str:
        return self.name.value


INT8 = ElementFormat(FormatName.INT8, 8, 0, 6, 0, 0, False, False)
FP8_E5M2 = ElementFormat(FormatName.FP8_E5M2, 8, 5, 2, 15, 15, True, True)
FP8_E4M3 = ElementFormat(FormatName.FP8_E4M3, 8, 4, 3, 7, 8, False, True)
FP6_E3M2 = ElementFormat(FormatName.FP6_E3M2, 6, 3, 2, 3, 4, False, False)
FP6_E2M3 = ElementFormat(FormatName.FP6_E2M3, 6, 2, 3, 1, 2, False, False)
FP4_E2M1 = ElementFormat(FormatName.FP4_E2M1, 4, 2, 1, 1, 2, False, False)

ALL_FORMATS: Tuple[ElementFormat, ...] = (INT8, FP8_E5M2, FP8_E4M3, FP6_E3M2, FP6_E2M3, FP4_E2M1)
FP_FORMATS: Tuple[ElementFormat, ...] = ALL_FORMATS[1:]

_ALIASES: Dict[str, ElementFormat] = {}
for _fmt in ALL_FORMATS:
    for _alias in (_fmt.name.value, _fmt.short_name, f"MX{_fmt.name.value}"):
        _ALIASES[_alias.lower()] = _fmt


def get_format(name: "str | FormatName | ElementFormat") -> ElementFormat:
    """Look up a format by name or alias (e.g. 'e4m3', 'FP8_E4M3', 'mxfp4')."""
    if isinstance(name, ElementFormat):
        return name
    key = name.value if isinstance(name, FormatName) else str(name)
    key = key.strip().lower().replace("-", "_")
    if key == "mxfp4" or key == "fp4":
        return FP4_E2M1
    fmt = _ALIASES.get(key)
    if fmt is None:
        raise InvalidInputError(f"Unknown element format '{name}'")
    return fmt


@dataclass(frozen=True)
class ElementCode:
    format: ElementFormat
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < self.format.code_count:
            raise ContractViolationError(
                f"code {self.bits:#x} out of range for {self.format} ({self.format.total_bits} bits)"
            )


@dataclass(frozen=True)
class SharedScale:
    """E8M0 shared scale: value 2**(exp_code - 127). Code 255 is reserved."""

    exp_code: int

    def __post_init__(self):
        if not 0 <= self.exp_code < E8M0_RESERVED:
            raise ScaleRangeError(f"E8M0 code {self.exp_code} is outside 0..254")

    @property
    def exponent(self) -> int:
        return self.exp_code - E8M0_BIAS

    @property
    def value(self) -> float:
        return math.ldexp(1.0, self.exponent)

    @classmethod
    def from_exponent(cls, exponent: int) -> "SharedScale":
        return cls(exponent + E8M0_BIAS)


UNIT_SCALE = SharedScale(E8M0_BIAS)


def scale_value(s: SharedScale) -> float:
    """Exact power of two denoted by the scale."""
    return s.value


# ---------------------------------------------------------------------------
# Field access (shared with the MAC datapath)
# ---------------------------------------------------------------------------

def split_fields(fmt: ElementFormat, bits: int) -> Tuple[int, int, int]:
    """Return (sign, exponent field, mantissa field)."""
    sign = (bits >> (fmt.total_bits - 1)) & 1
    exp_field = (bits >> fmt.mant_bits) & ((1 << fmt.exp_bits) - 1)
    mant_field = bits & ((1 << fmt.mant_bits) - 1)
    return sign, exp_field, mant_field


def is_special(fmt: ElementFormat, bits: int) -> bool:
    """True for Inf/NaN encodings."""
    if fmt.is_int:
        return False
    _, e, m = split_fields(fmt, bits)
    emask = (1 << fmt.exp_bits) - 1
    if fmt.has_inf:
        return e == emask
    if fmt.has_nan:
        return e == emask and m == (1 << fmt.mant_bits) - 1
    return False


def _decode_bits(fmt: ElementFormat, bits: int) -> float:
    if fmt.is_int:
        m = bits - 256 if bits & 0x80 else bits
        return math.ldexp(m, -fmt.mant_bits)
    sign, e, m = split_fields(fmt, bits)
    sgn = -1.0 if sign else 1.0
    if is_special(fmt, bits):
        if fmt.has_inf and m == 0:
            return sgn * math.inf
        return math.nan
    if e == 0:
        return sgn * math.ldexp(m, 1 - fmt.bias - fmt.mant_bits)
    return sgn * math.ldexp((1 << fmt.mant_bits) | m, e - fmt.bias - fmt.mant_bits)


@lru_cache(maxsize=None)
def decode_table(fmt: ElementFormat) -> Tuple[float, ...]:
    """Decoded value of every code of the format, indexed by code."""
    return tuple(_decode_bits(fmt, b) for b in range(fmt.code_count))


@lru_cache(maxsize=None)
def positive_finite_values(fmt: ElementFormat) -> Tuple[float, ...]:
    """Values of the non-negative finite codes; index == code."""
    table = decode_table(fmt)
    values = []
    for bits in range(fmt.sign_mask):
        v = table[bits]
        if not math.isfinite(v):
            break
        values.append(v)
    return tuple(values)


@lru_cache(maxsize=None)
def _decode_array_table(fmt: ElementFormat) -> np.ndarray:
    return np.array(decode_table(fmt), dtype=np.float64)


def decode_element(code: ElementCode) -> float:
    """Exact value of the encoding; Inf/NaN come back as float inf/nan."""
    return decode_table(code.format)[code.bits]


def encode_element(value: float, fmt: ElementFormat) -> ElementCode:
    """Round to nearest even, saturating to the largest finite magnitude."""
    if not math.isfinite(value):
        raise NonFiniteValueError(f"cannot encode non-finite value {value} as {fmt}")
    if fmt.is_int:
        # clamp first: ldexp overflows on large finite inputs
        value = min(max(value, -4.0), 4.0)
        m = round(math.ldexp(value, fmt.mant_bits))
        m = min(max(m, -128), 127)
        return ElementCode(fmt, m & 0xFF)
    mags = positive_finite_values(fmt)
    mag = abs(value)
    if mag >= mags[-1]:
        idx = len(mags) - 1
    else:
        i = bisect_right(mags, mag) - 1
        d_lo = mag - mags[i]
        d_hi = mags[i + 1] - mag
        idx = i + 1 if (d_hi < d_lo or (d_hi == d_lo and (i + 1) % 2 == 0)) else i
    bits = idx | fmt.sign_mask if (value < 0 and idx != 0) else idx
    return ElementCode(fmt, bits)


def decode_array(codes: np.ndarray, fmt: ElementFormat) -> np.ndarray:
    """Vectorised decode of an integer code array."""
    return _decode_array_table(fmt)[np.asarray(codes, dtype=np.int64)]


def encode_array(values: np.ndarray, fmt: ElementFormat) -> np.ndarray:
    """Vectorised encode_element; returns uint8 codes of the same shape."""
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError(f"cannot encode non-finite values as {fmt}")
    if fmt.is_int:
        m = np.clip(np.rint(np.ldexp(x, fmt.mant_bits)), -128, 127).astype(np.int64)
        return (m & 0xFF).astype(np.uint8)
    mags_table = np.array(positive_finite_values(fmt), dtype=np.float64)
    n = mags_table.size
    mag = np.abs(x)
    i = np.clip(np.searchsorted(mags_table, mag, side="right") - 1, 0, n - 2)
    lo = mags_table[i]
    hi = mags_table[i + 1]
    d_lo = mag - lo
    d_hi = hi - mag
    up = (d_hi < d_lo) | ((d_hi == d_lo) & ((i + 1) % 2 == 0))
    idx = np.where(up, i + 1, i)
    idx = np.where(mag >= mags_table[-1], n - 1, idx)
    bits = np.where((x < 0) & (idx != 0), idx | fmt.sign_mask, idx)
    return bits.astype(np.uint8)


def floor_log2(x: float) -> int:
    """floor(log2(x)) for a positive finite float, computed exactly."""
    _, e = math.frexp(x)
    return e - 1


def validate_formats() -> None:
    """Check the stored emax of every format against its enumerated max finite."""
    for fmt in ALL_FORMATS:
        max_finite = fmt.max_finite
        if floor_log2(max_finite) != fmt.emax:
            raise ContractViolationError(
                f"{fmt}: stored emax {fmt.emax} disagrees with max finite {max_finite}"
            )
        if not fmt.is_int and fmt.total_bits != 1 + fmt.exp_bits + fmt.mant_bits:
            raise ContractViolationError(f"{fmt}: field widths do not add up to {fmt.total_bits}")
    logger.debug("Element format descriptors validated by enumeration")


validate_formats()
