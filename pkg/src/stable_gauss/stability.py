"""Streaming instability detection on a training-loss trace.

A running mean and variance of the loss are kept with exponential forgetting;
a step whose Z-score against the pre-update statistics exceeds 4 counts as part
of an instability. Only positive anomalies count.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable

Z_THRESHOLD = 4.0
# Loss level that counts as converged when the loss scale is that of the
# original 10-image overfit experiment.
DEFAULT_CONVERGENCE_THRESHOLD = -3000.0


@dataclass
class InstabilityTracker:
    eps: float = 0.998
    delta: float = 0.9995
    mu: float = 0.0
    v: float = 1.0
    n: int = 0
    nonfinite: int = 0
    z_scores: list[float] = field(default_factory=list)
    smoothed: list[float] = field(default_factory=list)

    def update(self, loss: float) -> float:
        """Consume one loss value and return its Z-score (NaN for non-finite losses)."""
        self.n += 1
        if not math.isfinite(loss):
            self.nonfinite += 1
            return math.nan
        z = (loss - self.mu) / math.sqrt(self.v)
        self.mu = self.eps * self.mu + (1.0 - self.eps) * loss
        self.v = self.delta * self.v + (1.0 - self.delta) * (loss - self.mu) ** 2
        self.z_scores.append(z)
        self.smoothed.append(self.mu)
        return z

    def feed(self, trace: Iterable[float]) -> "InstabilityTracker":
        for loss in trace:
            self.update(float(loss))
        return self


@dataclass(frozen=True)
class RunSummary:
    diverged: bool
    min_smoothed_loss: float
    instability_fraction: float
    mean_excess_z: float
    steps: int = 0
    nonfinite_steps: int = 0


def summarize(
    tracker: InstabilityTracker,
    convergence_threshold: float = DEFAULT_CONVERGENCE_THRESHOLD,
) -> RunSummary:
    """Run-level metrics; fractions and means are taken over finite steps only."""
    zs = tracker.z_scores
    min_smoothed = min(tracker.smoothed) if tracker.smoothed else math.nan
    reached = bool(tracker.smoothed) and min_smoothed < convergence_threshold
    if zs:
        fraction = sum(z > Z_THRESHOLD for z in zs) / len(zs)
        excess = sum(max(0.0, z - Z_THRESHOLD) for z in zs) / len(zs)
    else:
        fraction = excess = math.nan
    return RunSummary(
        diverged=tracker.nonfinite > 0 or not reached,
        min_smoothed_loss=min_smoothed,
        instability_fraction=fraction,
        mean_excess_z=excess,
        steps=tracker.n,
        nonfinite_steps=tracker.nonfinite,
    )


def relative_threshold(converged_minima: Iterable[float], factor: float = 0.5) -> float:
    """Convergence threshold derived from the minima of runs that stayed finite.

    The median minimum ``m`` is relaxed by ``factor * |m|``, which equals
    ``factor * m`` for the usual negative losses and stays meaningful for
    positive ones.
    """
    values = [v for v in converged_minima if math.isfinite(v)]
    if not values:
        return math.inf
    median = statistics.median(values)
    return median + factor * abs(median)
