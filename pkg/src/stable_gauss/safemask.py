"""Vectorized piecewise formulas evaluated with multiplicative masks.

``eval_naive`` evaluates both branches on the raw input and masks them, which
turns ``inf * 0`` into NaN once the unused branch overflows. ``eval_safe``
feeds each branch a copy of the input clipped to that branch's domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .precision import Arith, FloatMode, as_result

Branch = Callable[[Arith, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PiecewiseSpec:
    f_neg: Branch  # used where p <= 0
    f_pos: Branch  # used where p > 0
    name: str = "piecewise"


def explin_spec() -> PiecewiseSpec:
    return PiecewiseSpec(
        f_neg=lambda ar, p: ar.exp(p),
        f_pos=lambda ar, p: ar.add(p, 1.0),
        name="explin",
    )


def upbounded_spec(omega: float = 1.0) -> PiecewiseSpec:
    def f_neg(ar, p):
        return ar.mul(ar.const(omega / 2.0), ar.exp(p))

    def f_pos(ar, p):
        return ar.mul(ar.const(omega / 2.0), ar.sub(2.0, ar.exp(ar.neg(p))))

    return PiecewiseSpec(f_neg, f_pos, name=f"upbounded:{omega:g}")


def _combine(ar: Arith, neg, pos, p):
    mask_neg = (p <= 0).astype(np.float64)
    mask_pos = (p > 0).astype(np.float64)
    return ar.add(ar.mul(neg, mask_neg), ar.mul(pos, mask_pos))


def eval_naive(spec: PiecewiseSpec, p, mode: FloatMode = FloatMode.F64):
    ar = Arith(mode)
    p = np.asarray(ar.const(p), dtype=np.float64)
    return as_result(np.asarray(_combine(ar, spec.f_neg(ar, p), spec.f_pos(ar, p), p)))


def eval_safe(spec: PiecewiseSpec, p, mode: FloatMode = FloatMode.F64):
    ar = Arith(mode)
    p = np.asarray(ar.const(p), dtype=np.float64)
    p_minus = np.minimum(p, 0.0)
    p_plus = np.maximum(p, 0.0)
    return as_result(
        np.asarray(_combine(ar, spec.f_neg(ar, p_minus), spec.f_pos(ar, p_plus), p))
    )
