"""Fairness indices, reward computation, and timed-channel reductions.

A feature channel is a sequence of (value, timestamp) samples.  Each channel
is reduced to five scalars: average, 90th percentile (linear interpolation),
population standard deviation, discounted average and weighted discounted
average.  Discount weights are ``0.9 ** (now - t_i)`` with exponents in
seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DISCOUNT_BASE = 0.9


@dataclass(frozen=True)
class TimedSample:
    value: float
    timestamp: float


@dataclass(frozen=True)
class ChannelStats:
    """Five-scalar summary of a timed sample channel."""

    average: float = 0.0
    p90: float = 0.0
    std: float = 0.0
    discounted_average: float = 0.0
    weighted_discounted_average: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.average,
                self.p90,
                self.std,
                self.discounted_average,
                self.weighted_discounted_average,
            ],
            dtype=float,
        )


def reduce_arrays(values: np.ndarray, times: np.ndarray, now: float) -> ChannelStats:
    """Reduce parallel value/timestamp arrays to ChannelStats."""
    if values.size == 0:
        return ChannelStats()
    if values.size != times.size:
        raise ValueError("values and timestamps must have equal length")
    weights = DISCOUNT_BASE ** (now - times)
    weighted = weights * values
    wsum = float(weights.sum())
    return ChannelStats(
        average=float(values.mean()),
        p90=float(np.percentile(values, 90.0)),
        std=float(values.std()),
        discounted_average=float(weighted.sum() / values.size),
        weighted_discounted_average=float(weighted.sum() / wsum),
    )


def reduce(samples: Iterable[TimedSample | tuple[float, float]], now: float) -> ChannelStats:
    """Reduce a sample channel to its five-scalar summary.

    Accepts TimedSample instances or plain (value, timestamp) pairs.  All
    timestamps must be <= ``now``; an empty channel reduces to all zeros.
    """
    values = []
    times = []
    for sample in samples:
        if isinstance(sample, TimedSample):
            v, t = sample.value, sample.timestamp
        else:
            v, t = sample
        if t > now:
            raise ValueError(f"sample timestamp {t} is after now={now}")
        values.append(v)
        times.append(t)
    return reduce_arrays(np.asarray(values, dtype=float), np.asarray(times, dtype=float), now)


def _as_checked(x: Sequence[float]) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        raise ValueError("fairness index of an empty vector is undefined")
    if arr.min() < 0:
        raise ValueError("fairness indices require nonnegative inputs")
    return arr


def jain(x: Sequence[float]) -> float:
    """Jain's fairness index: mean(x)^2 / mean(x^2), in (0, 1].

    An all-zero vector returns 1 by convention (perfectly even).
    """
    arr = _as_checked(x)
    if arr.max() == 0.0:
        return 1.0
    m = arr.mean()
    return float(m * m / np.mean(arr * arr))


def g_fairness(x: Sequence[float]) -> float:
    """Product of sin(pi * x_j / (2 max x)); all-zero input returns 1."""
    arr = _as_checked(x)
    top = arr.max()
    if top == 0.0:
        return 1.0
    return float(np.prod(np.sin(np.pi * arr / (2.0 * top))))


def bossaer(x: Sequence[float]) -> float:
    """Product of x_j / max(x); all-zero input returns 1."""
    arr = _as_checked(x)
    top = arr.max()
    if top == 0.0:
        return 1.0
    return float(np.prod(arr / top))


FAIRNESS_INDICES = {"jain": jain, "g": g_fairness, "bossaer": bossaer}


def reward(w_tilde: Sequence[float], index: str = "jain", literal: bool = False) -> float:
    """Fairness-based reward over per-server discounted-average completion times.

    Default is F(w) - 1, which is <= 0 and maximal at perfect fairness, so a
    return-maximizing learner is pushed toward even completion times.  With
    ``literal=True`` the raw 1 - F(w) form is emitted instead for comparison.
    """
    try:
        fn = FAIRNESS_INDICES[index]
    except KeyError:
        raise ValueError(f"unknown fairness index {index!r}") from None
    f = fn(w_tilde)
    return 1.0 - f if literal else f - 1.0
