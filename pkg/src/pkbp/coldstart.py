"""Cold start: utilization-range predictors, their loss, and auto-correction.

A VM without history gets one of four predicted ranges, all starting at 10%
of its flavor.  Once it has run ``t_a`` minutes its range can be replaced by
the symmetrized recent readings (semi-cold start).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .core import VmRecord
from .symmetrize import UtilInterval, symmetrize

SAMPLE_MINUTES = 5
RANGE_FLOOR = 0.10


class RangeClass(enum.IntEnum):
    """Predicted utilization range as a fraction of flavor cores; value is the ordinal rank."""

    UP_TO_25 = 0
    UP_TO_50 = 1
    UP_TO_75 = 2
    UP_TO_100 = 3

    @property
    def upper(self) -> float:
        return (self.value + 1) * 0.25

    @property
    def label(self) -> str:
        return f"10-{int(self.upper * 100)}%"

    def interval(self, flavor_cores: float) -> UtilInterval:
        low = RANGE_FLOOR * flavor_cores
        high = self.upper * flavor_cores
        return UtilInterval((low + high) / 2.0, (high - low) / 2.0)

    @classmethod
    def parse(cls, text: str) -> "RangeClass":
        key = text.strip().lower().rstrip("%")
        for c in cls:
            if key in (c.name.lower(), c.label.lower().rstrip("%"), str(c.value), str(int(c.upper * 100))):
                return c
        raise ValueError(f"unknown range class {text!r}")


@dataclass(frozen=True)
class PredictorConfig:
    w: float = 4.0
    t_a: float = 40.0

    def __post_init__(self):
        if self.w < 1:
            raise ValueError(f"w must be >= 1, got {self.w}")
        if self.t_a <= 0:
            raise ValueError(f"t_a must be positive, got {self.t_a}")


class RangePredictor(Protocol):
    def predict_range(self, vm: VmRecord) -> RangeClass: ...


class ConservativePredictor:
    """Always predicts the widest range."""

    def predict_range(self, vm: VmRecord) -> RangeClass:
        return RangeClass.UP_TO_100


class FlavorTablePredictor:
    """Looks the range up by flavor size; unknown flavors get the widest range."""

    def __init__(self, table: Mapping[int, RangeClass]):
        self.table = dict(table)
        self.fallback = ConservativePredictor()

    @classmethod
    def from_file(cls, path) -> "FlavorTablePredictor":
        """Read ``flavor = class`` lines; ``#`` starts a comment."""
        table = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                key, _, value = line.partition(":")
            try:
                table[int(key.strip())] = RangeClass.parse(value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls(table)

    def predict_range(self, vm: VmRecord) -> RangeClass:
        if vm.flavor_cores in self.table:
            return self.table[vm.flavor_cores]
        return self.fallback.predict_range(vm)


def predicted_interval(predictor: RangePredictor, vm: VmRecord) -> UtilInterval:
    return predictor.predict_range(vm).interval(vm.flavor_cores)


def asymmetric_loss(predicted: Sequence, actual: Sequence, w: float) -> float:
    """Squared rank error with underestimates (predicted below actual) weighted by ``w``."""
    p = np.asarray([int(c) for c in predicted], dtype=float)
    a = np.asarray([int(c) for c in actual], dtype=float)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {a.size} labels")
    r = p - a
    return float(np.sum(np.where(r < 0, w, 1.0) * r * r))


def actual_class(samples, flavor_cores: float) -> RangeClass:
    """Narrowest class whose upper end covers the peak reading."""
    peak = float(np.max(samples)) / flavor_cores
    for c in RangeClass:
        if peak <= c.upper + 1e-12:
            return c
    return RangeClass.UP_TO_100


def auto_correct(vm: VmRecord, age_minutes: float, t_a: float,
                 clamp: bool = True, interval: UtilInterval | None = None) -> UtilInterval:
    """Interval to use for ``vm`` once it has been running ``age_minutes``.

    Before ``t_a`` the predicted interval is kept.  From ``t_a`` on it is the
    symmetrized window of readings from the last ``t_a`` minutes, clipped to
    ``[0, flavor]`` when ``clamp`` is set.
    """
    current = vm.interval if interval is None else interval
    if age_minutes < t_a or vm.samples is None:
        return current
    seen = int(age_minutes // SAMPLE_MINUTES)
    window = max(int(t_a // SAMPLE_MINUTES), 1)
    recent = np.asarray(vm.samples[max(seen - window, 0):seen], dtype=float)
    if recent.size == 0:
        return current
    corrected = symmetrize(recent)
    return corrected.clamped(vm.flavor_cores) if clamp else corrected
