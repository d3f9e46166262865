"""Maps from a raw network output ``p`` to a positive Normal scale.

Each parameterization provides the scale ``sigma(p)``, its logarithm computed
directly as ``log_sigma(p)`` (never as ``log(sigma(p))`` unless that is the
definition), and analytic derivatives of both.

Piecewise definitions put ``p == 0`` in the ``p <= 0`` branch and evaluate
each branch on a clipped copy of ``p`` so the unused branch cannot overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .precision import Arith, FloatMode, as_result

# Decoded-scale floor for [0, 1] pixels under U[0, 1/256) dequantization noise.
PIXEL_ALPHA = 1.0 / (256.0 * math.sqrt(12.0))
# Same floor for raw pixels in [0, 256).
RAW_PIXEL_ALPHA = 1.0 / math.sqrt(12.0)


class ParamKind(str, Enum):
    NAIVE_EXP = "naive-exp"
    EXP = "exp"
    EXPLIN = "explin"
    UPBOUNDED = "upbounded"
    DOWNBOUNDED = "downbounded"
    BOUNDED = "bounded"


@dataclass(frozen=True)
class ScaleParameterization:
    kind: ParamKind
    omega: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ParamKind(self.kind))
        if self.kind is ParamKind.UPBOUNDED and not self.omega > 0:
            raise ValueError(f"upbounded needs omega > 0, got {self.omega}")
        if self.kind is ParamKind.DOWNBOUNDED and not self.alpha > 0:
            raise ValueError(f"downbounded needs alpha > 0, got {self.alpha}")
        if self.kind is ParamKind.BOUNDED and not 0 <= self.alpha < self.omega:
            raise ValueError(
                f"bounded needs 0 <= alpha < omega, got alpha={self.alpha}, omega={self.omega}"
            )

    @classmethod
    def parse(cls, text: str) -> "ScaleParameterization":
        """Parse ``exp``, ``upbounded:1``, ``bounded:0.001:1`` and friends."""
        name, *args = [t.strip() for t in text.strip().split(":")]
        try:
            kind = ParamKind(name.lower())
        except ValueError:
            raise ValueError(f"unknown parameterization {text!r}") from None
        expected = {
            ParamKind.UPBOUNDED: 1,
            ParamKind.DOWNBOUNDED: 1,
            ParamKind.BOUNDED: 2,
        }.get(kind, 0)
        if len(args) != expected:
            raise ValueError(f"{kind.value} takes {expected} constant(s), got {text!r}")
        values = [float(a) for a in args]
        if kind is ParamKind.UPBOUNDED:
            return cls(kind, omega=values[0])
        if kind is ParamKind.DOWNBOUNDED:
            return cls(kind, alpha=values[0])
        if kind is ParamKind.BOUNDED:
            return cls(kind, alpha=values[0], omega=values[1])
        return cls(kind)

    def __str__(self) -> str:
        if self.kind is ParamKind.UPBOUNDED:
            return f"upbounded:{self.omega:g}"
        if self.kind is ParamKind.DOWNBOUNDED:
            return f"downbounded:{self.alpha:g}"
        if self.kind is ParamKind.BOUNDED:
            return f"bounded:{self.alpha:g}:{self.omega:g}"
        return self.kind.value


NAIVE_EXP = ScaleParameterization(ParamKind.NAIVE_EXP)
EXP = ScaleParameterization(ParamKind.EXP)
EXPLIN = ScaleParameterization(ParamKind.EXPLIN)
UPBOUNDED1 = ScaleParameterization(ParamKind.UPBOUNDED, omega=1.0)


def _split(p):
    p = np.asarray(p, dtype=np.float64)
    return p, np.minimum(p, 0.0), np.maximum(p, 0.0)


def _sigmoid(ar: Arith, p_neg, p_pos, nonneg):
    pos = ar.div(1.0, ar.add(1.0, ar.exp(ar.neg(p_pos))))
    e = ar.exp(p_neg)
    neg = ar.div(e, ar.add(1.0, e))
    return np.where(nonneg, pos, neg)


def sigma(param: ScaleParameterization, p, mode: FloatMode = FloatMode.F64):
    ar = Arith(mode)
    p, p_neg, p_pos = _split(ar.const(p))
    kind = param.kind
    if kind in (ParamKind.NAIVE_EXP, ParamKind.EXP):
        out = ar.exp(p)
    elif kind is ParamKind.EXPLIN:
        out = np.where(p <= 0, ar.exp(p_neg), ar.add(p_pos, 1.0))
    elif kind is ParamKind.UPBOUNDED:
        half = ar.const(param.omega / 2.0)
        out = np.where(
            p <= 0,
            ar.mul(half, ar.exp(p_neg)),
            ar.mul(half, ar.sub(2.0, ar.exp(ar.neg(p_pos)))),
        )
    elif kind is ParamKind.DOWNBOUNDED:
        out = ar.add(param.alpha, ar.exp(p))
    else:
        s = _sigmoid(ar, p_neg, p_pos, p >= 0)
        out = ar.add(param.alpha, ar.mul(ar.sub(param.omega, param.alpha), s))
    return as_result(np.asarray(out))


def log_sigma(param: ScaleParameterization, p, mode: FloatMode = FloatMode.F64):
    ar = Arith(mode)
    p, p_neg, p_pos = _split(ar.const(p))
    kind = param.kind
    if kind is ParamKind.NAIVE_EXP:
        # literal composition; underflow of the exp is the point
        out = ar.log(ar.exp(p))
    elif kind is ParamKind.EXP:
        out = p
    elif kind is ParamKind.EXPLIN:
        out = np.where(p <= 0, p_neg, ar.log(ar.add(p_pos, 1.0)))
    elif kind is ParamKind.UPBOUNDED:
        log_half = ar.log(param.omega / 2.0)
        out = np.where(
            p <= 0,
            ar.add(p_neg, log_half),
            ar.add(ar.log(ar.sub(2.0, ar.exp(ar.neg(p_pos)))), log_half),
        )
    else:
        out = ar.log(sigma(param, p, mode))
    return as_result(np.asarray(out))


def _sigmoid64(p):
    p, p_neg, p_pos = _split(p)
    e = np.exp(p_neg)
    return np.where(p >= 0, 1.0 / (1.0 + np.exp(-p_pos)), e / (1.0 + e))


def dsigma_dp(param: ScaleParameterization, p):
    """d sigma / dp in float64."""
    p, p_neg, p_pos = _split(p)
    kind = param.kind
    if kind in (ParamKind.NAIVE_EXP, ParamKind.EXP, ParamKind.DOWNBOUNDED):
        out = np.exp(p)
    elif kind is ParamKind.EXPLIN:
        out = np.where(p <= 0, np.exp(p_neg), 1.0)
    elif kind is ParamKind.UPBOUNDED:
        half = param.omega / 2.0
        out = np.where(p <= 0, half * np.exp(p_neg), half * np.exp(-p_pos))
    else:
        s = _sigmoid64(p)
        out = (param.omega - param.alpha) * s * (1.0 - s)
    return as_result(np.asarray(out))


def dlog_sigma_dp(param: ScaleParameterization, p):
    """d log(sigma) / dp in float64; NaiveExp shares the Exp derivative."""
    p, p_neg, p_pos = _split(p)
    kind = param.kind
    if kind in (ParamKind.NAIVE_EXP, ParamKind.EXP):
        out = np.ones_like(p)
    elif kind is ParamKind.EXPLIN:
        out = np.where(p <= 0, 1.0, 1.0 / (p_pos + 1.0))
    elif kind is ParamKind.UPBOUNDED:
        e = np.exp(-p_pos)
        out = np.where(p <= 0, 1.0, e / (2.0 - e))
    elif kind is ParamKind.DOWNBOUNDED:
        # e^p / (alpha + e^p), written to stay finite for large p
        with np.errstate(over="ignore"):
            out = 1.0 / (1.0 + param.alpha * np.exp(-p))
    else:
        s = _sigmoid64(p)
        out = (param.omega - param.alpha) * s * (1.0 - s) / (
            param.alpha + (param.omega - param.alpha) * s
        )
    return as_result(np.asarray(out))
