"""Reduced-precision arithmetic emulation.

Every elementary operation is evaluated in float64 on inputs that were already
rounded to the target format, and the result is rounded again
(round-to-nearest-even, subnormals kept, overflow to inf). Transcendentals are
rounded once at their output.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np


class FloatMode(str, Enum):
    F64 = "f64"
    F32 = "f32"
    F16 = "f16"

    @classmethod
    def parse(cls, text: "str | FloatMode") -> "FloatMode":
        if isinstance(text, FloatMode):
            return text
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown float mode {text!r}; expected f64, f32 or f16") from None


class QuotientVariant(str, Enum):
    """How the log-scale-ratio term of a Gaussian KL is evaluated naively."""

    DIRECT = "direct"
    SQUARED = "squared"


_NUMPY_DTYPE = {FloatMode.F32: np.float32, FloatMode.F16: np.float16}

_OPS = {
    "add": (2, np.add),
    "sub": (2, np.subtract),
    "mul": (2, np.multiply),
    "div": (2, np.true_divide),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sqrt": (1, np.sqrt),
    "neg": (1, np.negative),
}


def as_result(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


def _round(mode: FloatMode, a: np.ndarray) -> np.ndarray:
    # callers suppress the overflow warning raised by the narrowing cast
    if mode is FloatMode.F64:
        return a
    return a.astype(_NUMPY_DTYPE[mode]).astype(np.float64)


def round_to(mode: FloatMode, x):
    """Round ``x`` (scalar or array) to the nearest value representable in ``mode``."""
    with np.errstate(all="ignore"):
        return as_result(_round(FloatMode.parse(mode), np.asarray(x, dtype=np.float64)))


def q_op(mode: FloatMode, op: str, *args):
    """Evaluate one elementary operation as it would come out of ``mode`` hardware."""
    mode = FloatMode.parse(mode)
    try:
        arity, fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown operation {op!r}") from None
    if len(args) != arity:
        raise TypeError(f"{op} takes {arity} argument(s), got {len(args)}")
    with np.errstate(all="ignore"):
        rounded = [_round(mode, np.asarray(a, dtype=np.float64)) for a in args]
        out = _round(mode, np.asarray(fn(*rounded), dtype=np.float64))
    return as_result(out)


class Arith:
    """Bound set of emulated operations for one mode.

    A thin convenience over :func:`q_op` so formulas read naturally.
    """

    __slots__ = ("mode",)

    def __init__(self, mode: FloatMode = FloatMode.F64):
        self.mode = FloatMode.parse(mode)

    def const(self, x):
        return round_to(self.mode, x)

    def add(self, a, b):
        return q_op(self.mode, "add", a, b)

    def sub(self, a, b):
        return q_op(self.mode, "sub", a, b)

    def mul(self, a, b):
        return q_op(self.mode, "mul", a, b)

    def div(self, a, b):
        return q_op(self.mode, "div", a, b)

    def exp(self, a):
        return q_op(self.mode, "exp", a)

    def log(self, a):
        return q_op(self.mode, "log", a)

    def sqrt(self, a):
        return q_op(self.mode, "sqrt", a)

    def neg(self, a):
        return q_op(self.mode, "neg", a)

    def square(self, a):
        return q_op(self.mode, "mul", a, a)

    def sum(self, a, axis: int = -1):
        """Pairwise (tree) sum along ``axis`` with every partial sum rounded."""
        a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, -1)
        if self.mode is FloatMode.F64:
            return as_result(np.asarray(a.sum(axis=-1)))
        if a.shape[-1] == 0:
            return as_result(np.zeros(a.shape[:-1]))
        with np.errstate(all="ignore"):
            a = _round(self.mode, a)
            while a.shape[-1] > 1:
                if a.shape[-1] % 2:
                    a = np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)
                a = _round(self.mode, a[..., 0::2] + a[..., 1::2])
        return as_result(a[..., 0])


def naive_log_ratio(mode: FloatMode, variant: QuotientVariant, sigma1, sigma2):
    """log(sigma2 / sigma1) evaluated from the scales themselves, as tensor libraries do.

    Both variants place the (possibly tiny) ``sigma1`` in the numerator of the
    quotient and negate the logarithm, so underflow of that quotient to zero is
    what produces the infinity.
    """
    ar = Arith(mode)
    variant = QuotientVariant(variant)
    if variant is QuotientVariant.DIRECT:
        return ar.neg(ar.log(ar.div(sigma1, sigma2)))
    ratio = ar.div(ar.square(sigma1), ar.square(sigma2))
    return ar.neg(ar.mul(0.5, ar.log(ratio)))


def min_finite_log_quotient(
    mode: FloatMode, variant: QuotientVariant, lower: int = -300
) -> "tuple[int, float] | None":
    """Smallest integer log-scale for which the naive log-quotient stays finite.

    Sweeps ``p = 0, -1, ..., lower`` with ``sigma1 = exp(p)`` (NaiveExp) and
    ``sigma2 = 1``. Returns ``(p, exp(p))`` for the last finite ``p`` before the
    first non-finite evaluation, or ``None`` if the whole sweep stays finite.
    """
    mode = FloatMode.parse(mode)
    ar = Arith(mode)
    last = None
    for p in range(0, lower - 1, -1):
        sigma1 = ar.exp(float(p))
        if not math.isfinite(naive_log_ratio(mode, variant, sigma1, 1.0)):
            return None if last is None else (last, math.exp(last))
        last = p
    return None
