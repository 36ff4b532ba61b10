"""Where reduced precision enters the forest.

Two instrumentation modes are supported on top of the binary64 baseline:

* node instrumentation rounds node bounds at the moment they are stored;
  everything that produced them ran at full precision.
* whole instrumentation rounds every floating-point value entering the
  classifier (features, hyperparameters, random variates, integer counts
  converted for arithmetic) and the result of every arithmetic operation.

Rounding happens at explicit call sites. :class:`Instrument` wraps those
sites and keeps tallies so tests can audit coverage.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .vprec import (
    BINARY64,
    Op,
    OverflowPolicy,
    PrecisionFormat,
    RangeOverflow,
    round_to_precision,
    rounded_arith,
)

__all__ = [
    "Mode",
    "InstrumentationMode",
    "NonFiniteValue",
    "NonFiniteFeature",
    "NonFiniteBound",
    "Instrument",
    "UNINSTRUMENTED",
    "store_bounds",
    "wi_value",
    "wi_op",
]


class NonFiniteValue(ArithmeticError):
    """Reduced-precision rounding produced an infinity inside the classifier."""

    def __init__(self, message: str, value: float | None = None, fmt: PrecisionFormat | None = None):
        super().__init__(message)
        self.value = value
        self.fmt = fmt
        self.elements_seen: int | None = None


class NonFiniteFeature(NonFiniteValue):
    pass


class NonFiniteBound(NonFiniteValue):
    pass


class Mode(enum.IntEnum):
    UNINSTRUMENTED = 0
    NODE = 1
    WHOLE = 2

    @classmethod
    def parse(cls, name: str) -> "Mode":
        aliases = {
            "uninstrumented": cls.UNINSTRUMENTED,
            "none": cls.UNINSTRUMENTED,
            "node": cls.NODE,
            "ni": cls.NODE,
            "whole": cls.WHOLE,
            "wi": cls.WHOLE,
        }
        try:
            return aliases[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown instrumentation mode {name!r}") from None

    @property
    def label(self) -> str:
        return {0: "uninstrumented", 1: "node", 2: "whole"}[int(self)]


@dataclass(frozen=True)
class InstrumentationMode:
    kind: Mode = Mode.UNINSTRUMENTED
    fmt: PrecisionFormat = field(default=BINARY64)

    def __post_init__(self):
        object.__setattr__(self, "kind", Mode(self.kind))

    @classmethod
    def node(cls, p: int, e: int, **kw) -> "InstrumentationMode":
        return cls(Mode.NODE, PrecisionFormat(p, e, **kw))

    @classmethod
    def whole(cls, p: int, e: int, **kw) -> "InstrumentationMode":
        return cls(Mode.WHOLE, PrecisionFormat(p, e, **kw))

    @property
    def rounds_bounds(self) -> bool:
        return self.kind is not Mode.UNINSTRUMENTED

    @property
    def rounds_everything(self) -> bool:
        return self.kind is Mode.WHOLE

    @property
    def storage_format(self) -> PrecisionFormat:
        """Format node bounds are stored in (binary64 when uninstrumented)."""
        return BINARY64 if self.kind is Mode.UNINSTRUMENTED else self.fmt

    def __str__(self) -> str:
        if self.kind is Mode.UNINSTRUMENTED:
            return "uninstrumented"
        return f"{self.kind.label}{self.fmt}"


UNINSTRUMENTED = InstrumentationMode()


def _checked(x: float, fmt: PrecisionFormat, exc: type[NonFiniteValue]) -> float:
    try:
        r = round_to_precision(x, fmt)
    except RangeOverflow as err:
        raise exc(f"{x!r} overflows {fmt}", x, fmt) from err
    if math.isinf(r) and not math.isinf(x):
        raise exc(f"{x!r} overflows {fmt}", x, fmt)
    return r


def store_bounds(node, lower: Sequence[float], upper: Sequence[float], mode: InstrumentationMode):
    """Return ``node`` with ``lower``/``upper`` written as the storage format allows."""
    if mode.rounds_bounds:
        lower = [_checked(v, mode.fmt, NonFiniteBound) for v in lower]
        upper = [_checked(v, mode.fmt, NonFiniteBound) for v in upper]
    return replace(node, lower_bound=tuple(float(v) for v in lower),
                   upper_bound=tuple(float(v) for v in upper))


def wi_value(x: float, mode: InstrumentationMode) -> float:
    if not mode.rounds_everything:
        return float(x)
    return _checked(float(x), mode.fmt, NonFiniteValue)


def wi_op(op: Op, a: float, b: float, mode: InstrumentationMode) -> float:
    if not mode.rounds_everything:
        return rounded_arith(op, a, b, BINARY64)
    try:
        r = rounded_arith(op, a, b, mode.fmt)
    except RangeOverflow as err:
        raise NonFiniteValue(f"{op.value}({a!r}, {b!r}) overflows {mode.fmt}", err.x, mode.fmt) from err
    if math.isinf(r) and math.isfinite(a) and math.isfinite(b):
        raise NonFiniteValue(f"{op.value}({a!r}, {b!r}) overflows {mode.fmt}", r, mode.fmt)
    return r


class Instrument:
    """Stateful call-site wrapper used by the pure-Python kernel.

    ``value`` rounds a value entering the computation, ``op`` rounds an
    arithmetic result and ``store`` rounds one stored bound component.
    The three tallies count how many roundings each site performed.
    """

    def __init__(self, mode: InstrumentationMode = UNINSTRUMENTED):
        self.mode = mode
        fmt = mode.fmt
        if fmt.overflow_policy is OverflowPolicy.ERROR:
            fmt = replace(fmt, overflow_policy=OverflowPolicy.TO_INFINITY)
        self._fmt = fmt
        self.whole = mode.kind is Mode.WHOLE
        self.bounds = mode.kind is not Mode.UNINSTRUMENTED
        self.n_values = 0
        self.n_ops = 0
        self.n_stores = 0

    def _round(self, x: float, exc: type[NonFiniteValue]) -> float:
        r = round_to_precision(x, self._fmt)
        if r in (math.inf, -math.inf) and x not in (math.inf, -math.inf):
            raise exc(f"{x!r} overflows {self._fmt}", x, self._fmt)
        return r

    def value(self, x: float, exc: type[NonFiniteValue] = NonFiniteValue) -> float:
        if not self.whole:
            return x
        self.n_values += 1
        return self._round(x, exc)

    def add(self, a: float, b: float) -> float:
        if not self.whole:
            return a + b
        self.n_ops += 1
        return self._round(a + b, NonFiniteValue)

    def sub(self, a: float, b: float) -> float:
        if not self.whole:
            return a - b
        self.n_ops += 1
        return self._round(a - b, NonFiniteValue)

    def mul(self, a: float, b: float) -> float:
        if not self.whole:
            return a * b
        self.n_ops += 1
        return self._round(a * b, NonFiniteValue)

    def div(self, a: float, b: float) -> float:
        if not self.whole:
            return a / b
        self.n_ops += 1
        return self._round(a / b, NonFiniteValue)

    def store(self, x: float) -> float:
        if not self.bounds:
            return x
        self.n_stores += 1
        return self._round(x, NonFiniteBound)

    def counters(self) -> dict[str, int]:
        return {"values": self.n_values, "ops": self.n_ops, "stores": self.n_stores}
