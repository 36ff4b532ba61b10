"""Software emulation of reduced floating-point formats.

A value is computed in binary64, then its significand is rounded to ``p``
explicit bits (round-to-nearest, ties-to-even) and its exponent is checked
against the format's dynamic range. Values that fall below the normal range
flush to a signed zero; values above it follow the format's overflow policy.

Rounding works directly on the binary64 bit pattern, so a carry out of the
significand propagates into the exponent field for free.
"""
from __future__ import annotations

import enum
import math
import operator
import struct
from dataclasses import dataclass, replace
from typing import NewType

import numpy as np

__all__ = [
    "OverflowPolicy",
    "PrecisionFormat",
    "RangeOverflow",
    "RoundedValue",
    "Op",
    "BINARY64",
    "BINARY32",
    "dynamic_range",
    "round_to_precision",
    "round_array",
    "rounded_arith",
    "is_representable",
]

_FRAC_BITS = 52
_EXP_MASK = 0x7FF
_U64 = (1 << 64) - 1

_pack_d = struct.Struct("<d").pack
_unpack_d = struct.Struct("<d").unpack
_pack_q = struct.Struct("<Q").pack
_unpack_q = struct.Struct("<Q").unpack

RoundedValue = NewType("RoundedValue", float)


class OverflowPolicy(enum.IntEnum):
    TO_INFINITY = 0
    SATURATE = 1
    ERROR = 2


class RangeOverflow(ArithmeticError):
    """A rounded value's exponent exceeded the format's ``e_max``."""

    def __init__(self, x: float, fmt: "PrecisionFormat"):
        super().__init__(f"{x!r} overflows {fmt}")
        self.x = x
        self.fmt = fmt


def dynamic_range(e: int) -> tuple[int, int]:
    """Return ``(e_min, e_max)`` for an exponent field of ``e`` bits."""
    if not 2 <= e <= 11:
        raise ValueError(f"exponent bits must be in [2, 11], got {e}")
    return 2 - 2 ** (e - 1), 2 ** (e - 1) - 1


@dataclass(frozen=True)
class PrecisionFormat:
    p: int
    e: int
    overflow_policy: OverflowPolicy = OverflowPolicy.TO_INFINITY

    def __post_init__(self):
        if not 1 <= self.p <= 52:
            raise ValueError(f"mantissa bits must be in [1, 52], got {self.p}")
        if not 2 <= self.e <= 11:
            raise ValueError(f"exponent bits must be in [2, 11], got {self.e}")
        object.__setattr__(self, "overflow_policy", OverflowPolicy(self.overflow_policy))

    @property
    def e_min(self) -> int:
        return dynamic_range(self.e)[0]

    @property
    def e_max(self) -> int:
        return dynamic_range(self.e)[1]

    @property
    def width(self) -> int:
        """Total storage width in bits: mantissa + exponent + sign."""
        return self.p + self.e + 1

    @property
    def max_finite(self) -> float:
        return math.ldexp(2.0 - math.ldexp(1.0, -self.p), self.e_max)

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, self.e_min)

    @property
    def is_identity(self) -> bool:
        return self.p == 52 and self.e == 11

    def __str__(self) -> str:
        return f"fmt(p={self.p}, e={self.e})"


BINARY64 = PrecisionFormat(52, 11)
BINARY32 = PrecisionFormat(23, 8)


def _overflow(x: float, sign_negative: bool, fmt: PrecisionFormat) -> float:
    policy = fmt.overflow_policy
    if policy is OverflowPolicy.ERROR:
        raise RangeOverflow(x, fmt)
    if policy is OverflowPolicy.SATURATE:
        return -fmt.max_finite if sign_negative else fmt.max_finite
    return -math.inf if sign_negative else math.inf


def round_to_precision(x: float, fmt: PrecisionFormat) -> float:
    """Round ``x`` into ``fmt``.

    NaN, infinities and zeros pass through. Binary64 subnormals count as
    exponent -1022, so they survive only when ``fmt.e == 11``.
    """
    x = float(x)
    if x != x or x == 0.0 or x in (math.inf, -math.inf):
        return x
    bits = _unpack_q(_pack_d(x))[0]
    drop = _FRAC_BITS - fmt.p
    if drop:
        half = 1 << (drop - 1)
        low = bits & ((1 << drop) - 1)
        bits &= ~((1 << drop) - 1) & _U64
        if low > half or (low == half and (bits >> drop) & 1):
            bits += 1 << drop
    negative = bool(bits >> 63)
    exp_field = (bits >> _FRAC_BITS) & _EXP_MASK
    if exp_field == _EXP_MASK:
        return _overflow(x, negative, fmt)
    unbiased = exp_field - 1023 if exp_field else -1022
    if unbiased > fmt.e_max:
        return _overflow(x, negative, fmt)
    if unbiased < fmt.e_min:
        return -0.0 if negative else 0.0
    return _unpack_d(_pack_q(bits))[0]


def round_array(x, fmt: PrecisionFormat) -> np.ndarray:
    """Vectorised :func:`round_to_precision` over a float64 array."""
    x = np.array(x, dtype=np.float64, copy=True)
    bits = x.view(np.uint64)
    special = ~np.isfinite(x) | (x == 0.0)
    drop = _FRAC_BITS - fmt.p
    if drop:
        one = np.uint64(1)
        d = np.uint64(drop)
        mask = (one << d) - one
        half = one << np.uint64(drop - 1)
        low = bits & mask
        trunc = bits & ~mask
        up = (low > half) | ((low == half) & (((trunc >> d) & one) == one))
        bits = trunc + (up.astype(np.uint64) << d)
    negative = (bits >> np.uint64(63)).astype(bool)
    exp_field = ((bits >> np.uint64(_FRAC_BITS)) & np.uint64(_EXP_MASK)).astype(np.int64)
    unbiased = np.where(exp_field == 0, -1022, exp_field - 1023)
    out = bits.view(np.float64).copy()
    over = (exp_field == _EXP_MASK) | (unbiased > fmt.e_max)
    under = unbiased < fmt.e_min
    out[under] = np.where(negative[under], -0.0, 0.0)
    over &= ~special
    if over.any():
        policy = fmt.overflow_policy
        if policy is OverflowPolicy.ERROR:
            raise RangeOverflow(float(x[over][0]), fmt)
        big = fmt.max_finite if policy is OverflowPolicy.SATURATE else math.inf
        out[over] = np.where(negative[over], -big, big)
    out[special] = x[special]
    return out


def is_representable(x: float, fmt: PrecisionFormat) -> bool:
    try:
        r = round_to_precision(x, replace(fmt, overflow_policy=OverflowPolicy.ERROR))
    except RangeOverflow:
        return False
    return r == x or (r != r and x != x)


class Op(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"


def _div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or a != a:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


_APPLY = {Op.ADD: operator.add, Op.SUB: operator.sub, Op.MUL: operator.mul, Op.DIV: _div}


def rounded_arith(op: Op, a: float, b: float, fmt: PrecisionFormat) -> float:
    """Compute ``a op b`` in binary64, then round the result into ``fmt``.

    Operands are used as given; only the result is rounded.
    """
    return round_to_precision(_APPLY[Op(op)](float(a), float(b)), fmt)
