"""Seeded random streams.

Uniforms come from numpy's counter-based Philox bit generator; standard
normals are produced from them with the Box-Muller transform so the stream
is fully determined by the seed.
"""

from __future__ import annotations

import math

import numpy as np


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def uniform(gen: np.random.Generator, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    return low + (high - low) * gen.random(shape)


def standard_normal(gen: np.random.Generator, shape) -> np.ndarray:
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    n = math.prod(shape)
    half = (n + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1], keeps the log finite
    u2 = gen.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)
