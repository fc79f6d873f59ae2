"""Symmetric stochastically-dominating intervals from empirical utilization."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class UtilInterval:
    """Utilization range ``[uc - ur, uc + ur]`` in fractional cores."""

    uc: float
    ur: float

    def __post_init__(self):
        if self.ur < 0:
            raise ValueError(f"radius must be non-negative, got {self.ur}")
        if self.uc - self.ur < -1e-12:
            raise ValueError(f"interval ({self.uc}, {self.ur}) dips below zero")

    @property
    def low(self) -> float:
        return self.uc - self.ur

    @property
    def high(self) -> float:
        return self.uc + self.ur

    def clamped(self, flavor_cores: float) -> "UtilInterval":
        """Clip the range to ``[0, flavor_cores]``."""
        low = max(self.low, 0.0)
        high = min(self.high, float(flavor_cores))
        if high < low:
            high = low
        if low == self.low and high == self.high:
            return self
        return UtilInterval((low + high) / 2.0, (high - low) / 2.0)


def as_sample(values: Iterable[float]) -> np.ndarray:
    sample = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if sample.ndim != 1 or sample.size == 0:
        raise ValueError("utilization sample must be a non-empty 1-d array")
    if np.any(sample < 0) or not np.all(np.isfinite(sample)):
        raise ValueError("utilization readings must be finite and non-negative")
    return sample


def raw_interval(sample) -> UtilInterval:
    """Bounding interval of a sample: midpoint and half-width of its range."""
    sample = as_sample(sample)
    low, high = float(sample.min()), float(sample.max())
    return UtilInterval((low + high) / 2.0, (high - low) / 2.0)


def center_shift(sample) -> float:
    """Minimal shift of the reflected sample that makes it dominate the sample.

    Half of the largest order-statistic gap between the sample and its mirror
    image about the range midpoint, floored at zero.
    """
    sample = np.sort(as_sample(sample), kind="stable")
    top = sample[-1]
    bottom = sample[0]
    center = (bottom + top) / 2.0
    mirrored = np.sort(2.0 * center - sample, kind="stable")
    return max(float(np.max(sample - mirrored)) / 2.0, 0.0)


def _radius_to(top: float, center: float) -> float:
    # pick the radius so that center + radius reproduces top bit-for-bit
    radius = max(top - center, 0.0)
    for _ in range(8):
        total = center + radius
        if total == top:
            break
        radius = max(math.nextafter(radius, -math.inf if total > top else math.inf), 0.0)
    return radius


def symmetrize(sample) -> UtilInterval:
    """Center and radius of the symmetric distribution that dominates ``sample``.

    The returned interval keeps the sample maximum: ``uc + ur == max(sample)``.
    """
    sample = as_sample(sample)
    raw = raw_interval(sample)
    top = float(sample.max())
    center = min(raw.uc + center_shift(sample), top)
    return UtilInterval(center, _radius_to(top, center))


def symmetric_sample(sample) -> np.ndarray:
    """Equal-weight sample of the dominating symmetric distribution.

    Readings above the new center are kept, mirrored below it, and the
    remaining mass sits at the center.
    """
    sample = as_sample(sample)
    center = symmetrize(sample).uc
    # readings within rounding noise of the center count as center mass
    upper = sample[sample > center + 1e-12 * max(1.0, center)]
    n_center = sample.size - 2 * upper.size
    if n_center < 0:
        raise AssertionError("more than half of the sample lies above the new center")
    return np.sort(np.concatenate([2.0 * center - upper, np.full(n_center, center), upper]))


def ecdf(sample, points) -> np.ndarray:
    """Empirical CDF of ``sample`` evaluated at ``points``."""
    ordered = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(ordered, np.asarray(points, dtype=float), side="right") / ordered.size


def dominates(a, b, atol: float = 0.0) -> bool:
    """True when sample ``a`` first-order stochastically dominates sample ``b``.

    Compares empirical CDFs at every point of either sample:
    ``F_a(x) <= F_b(x + atol)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    points = np.union1d(a, b)
    return bool(np.all(ecdf(a, points) <= ecdf(b, points + atol)))
