"""
Exact binary32 helpers on dyadic rationals.

A dyadic value is carried as an integer pair (sig, exp) meaning sig * 2**exp.
Python ints are unbounded, so sums are exact and rounding happens only where
we ask for it.
"""

import math
from typing import Tuple

FP32_MANT_BITS = 23
FP32_EMIN = -126
FP32_EMAX = 127
FP32_MIN_SUBNORMAL_EXP = FP32_EMIN - FP32_MANT_BITS  # -149
FP32_MAX = math.ldexp((1 << 24) - 1, FP32_EMAX - FP32_MANT_BITS)


def float_to_dyadic(x: float) -> Tuple[int, int]:
    """Decompose a finite float into (sig, exp) with x == sig * 2**exp exactly."""
    if x == 0.0:
        return 0, 0
    if not math.isfinite(x):
        raise ValueError(f"cannot decompose non-finite value {x}")
    m, e = math.frexp(x)
    sig = int(math.ldexp(m, 53))
    return sig, e - 53


def dyadic_add(a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    """Exact sum of two dyadic values."""
    (sa, ea), (sb, eb) = a, b
    if sa == 0:
        return b
    if sb == 0:
        return a
    e = min(ea, eb)
    return (sa << (ea - e)) + (sb << (eb - e)), e


def _round_shift_rne(mag: int, shift: int) -> int:
    """mag / 2**shift rounded to nearest, ties to even (shift > 0)."""
    q = mag >> shift
    rem = mag - (q << shift)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and (q & 1)):
        q += 1
    return q


def round_to_fp32(sig: int, exp: int) -> float:
    """
    Round sig * 2**exp to the nearest binary32 value (ties to even).

    Subnormals are produced below 2**-126; magnitudes above the largest
    finite binary32 return +-inf. The result is a Python float holding an
    exactly representable binary32 value.
    """
    if sig == 0:
        return 0.0
    sign = -1 if sig < 0 else 1
    mag = -sig if sig < 0 else sig
    top = exp + mag.bit_length() - 1
    if top > FP32_EMAX:
        return math.copysign(math.inf, sign)
    quantum = max(top - FP32_MANT_BITS, FP32_MIN_SUBNORMAL_EXP)
    shift = quantum - exp
    if shift > 0:
        mag = _round_shift_rne(mag, shift)
        exp = quantum
    if mag == 0:
        return 0.0 if sign > 0 else -0.0
    value = math.ldexp(sign * mag, exp)
    if abs(value) > FP32_MAX:
        return math.copysign(math.inf, sign)
    return value


def round_float_to_fp32(x: float) -> float:
    """Round a float64 to binary32, exactly (no double rounding)."""
    if x == 0.0 or not math.isfinite(x):
        return x
    return round_to_fp32(*float_to_dyadic(x))


def ulp32(x: float) -> float:
    """Spacing of binary32 values at the magnitude of x."""
    if x == 0.0 or not math.isfinite(x):
        return math.ldexp(1.0, FP32_MIN_SUBNORMAL_EXP)
    _, e = math.frexp(abs(x))
    top = max(e - 1, FP32_EMIN)
    return math.ldexp(1.0, top - FP32_MANT_BITS)


def is_fp32_exact(x: float) -> bool:
    return round_float_to_fp32(x) == x
