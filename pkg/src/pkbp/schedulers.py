"""Online placement policies: CloseRadiusFit, FirstFit and RandomFit.

Every policy walks the queue in order and stops at the first VM that no
host can take; VMs are never skipped or moved.
"""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import HostState, Mapping, VmRecord, mapping_from_hosts

ALGORITHMS = ("close-radius-fit", "first-fit", "random-fit")


class StopReason(str, enum.Enum):
    QUEUE_EXHAUSTED = "queue-exhausted"
    NO_AVAILABLE_HOST = "no-available-host"


@dataclass
class ScheduleOutcome:
    mapping: Mapping
    placed_count: int
    stop_reason: StopReason

    def to_json(self) -> dict:
        out = self.mapping.to_json()
        out["placed_count"] = self.placed_count
        out["stop_reason"] = self.stop_reason.value
        return out


def _try_order(vm: VmRecord, hosts: Sequence[HostState], order) -> int | None:
    for h in order:
        if hosts[h].try_place(vm):
            return h
    return None


class FirstFit:
    def place(self, vm: VmRecord, hosts: Sequence[HostState]) -> int | None:
        return _try_order(vm, hosts, range(len(hosts)))


class RandomFit:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def place(self, vm: VmRecord, hosts: Sequence[HostState]) -> int | None:
        return _try_order(vm, hosts, self.rng.permutation(len(hosts)).tolist())


def radius_boundaries(placed: Sequence[tuple[float, float]], n_hosts: int) -> list[float]:
    """Predicted lower radius bound of every host.

    ``placed`` holds ``(ur, uc)`` of already placed VMs sorted by radius
    descending.  The VMs are poured into hosts of capacity
    ``sum(uc) / n_hosts``; a host's bound is the radius of the first VM that
    did not go into it (0 once the placed VMs run out).
    """
    cap = math.fsum(uc for _, uc in placed) / n_hosts
    bounds = [0.0] * n_hosts
    p = 0
    for h in range(n_hosts):
        req = 0.0
        while req < cap and p < len(placed):
            req += placed[p][1]
            p += 1
        bounds[h] = placed[p][0] if p < len(placed) else 0.0
    return bounds


def preferred_host(radius: float, bounds: Sequence[float]) -> int:
    """First host whose radius bracket ``[bounds[h], bounds[h-1])`` holds ``radius``."""
    for h, low in enumerate(bounds):
        if radius >= low:
            return h
    return len(bounds) - 1


class CloseRadiusFit:
    """Places each VM on the host whose predicted radius range contains it.

    Phase 1 re-derives radius brackets from everything already placed; phase 2
    tries the preferred host, then hosts below it, then hosts above it.
    """

    def __init__(self):
        self._placed: list[tuple[float, float]] | None = None  # (-ur, uc), ascending
        self._seen: int = -1

    def _snapshot(self, hosts: Sequence[HostState]) -> list[tuple[float, float]]:
        total = sum(len(h) for h in hosts)
        if self._placed is None or total != self._seen:
            # hosts changed behind our back (pre-loaded or re-estimated)
            self._placed = sorted(
                (-iv.ur, iv.uc) for host in hosts for _, iv in host.placed.values()
            )
            self._seen = total
        return self._placed

    def reset(self) -> None:
        self._placed = None
        self._seen = -1

    def place(self, vm: VmRecord, hosts: Sequence[HostState]) -> int | None:
        snapshot = self._snapshot(hosts)
        bounds = radius_boundaries([(-r, c) for r, c in snapshot], len(hosts))
        p = preferred_host(vm.ur, bounds)
        order = list(range(p, -1, -1)) + list(range(p + 1, len(hosts)))
        h = _try_order(vm, hosts, order)
        if h is not None:
            bisect.insort(snapshot, (-vm.ur, vm.uc))
            self._seen += 1
        return h


def make_policy(algo: str, seed: int = 0):
    if algo == "first-fit":
        return FirstFit()
    if algo == "random-fit":
        return RandomFit(seed)
    if algo == "close-radius-fit":
        return CloseRadiusFit()
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def run_policy(policy, queue: Sequence[VmRecord], hosts: Sequence[HostState]) -> ScheduleOutcome:
    """Feed ``queue`` to ``policy`` until it is exhausted or a VM fits nowhere."""
    placed = 0
    reason = StopReason.QUEUE_EXHAUSTED
    for vm in queue:
        if policy.place(vm, hosts) is None:
            reason = StopReason.NO_AVAILABLE_HOST
            break
        placed += 1
    mapping = mapping_from_hosts(hosts)
    queued = {vm.id for vm in queue[:placed]}
    mapping.assignments = {k: v for k, v in mapping.assignments.items() if k in queued}
    return ScheduleOutcome(mapping, placed, reason)


def first_fit(queue, hosts) -> ScheduleOutcome:
    return run_policy(FirstFit(), queue, hosts)


def random_fit(queue, hosts, seed: int = 0) -> ScheduleOutcome:
    return run_policy(RandomFit(seed), queue, hosts)


def close_radius_fit(queue, hosts) -> ScheduleOutcome:
    return run_policy(CloseRadiusFit(), queue, hosts)


SCHEDULERS: dict[str, Callable[..., ScheduleOutcome]] = {
    "first-fit": first_fit,
    "random-fit": random_fit,
    "close-radius-fit": close_radius_fit,
}
