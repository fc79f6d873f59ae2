"""Hosts, VMs and the Gamma-robust host load."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Hashable, Iterable, Sequence

import numpy as np

from .gamma import GammaTable
from .symmetrize import UtilInterval

# absolute slack on core units for capacity comparisons
EPS = 1e-9


@dataclass
class VmRecord:
    """One queue entry.

    ``samples`` holds utilization readings in absolute cores at 5-minute
    spacing (``None`` for a cold-start VM); ``interval`` is the range used
    for scheduling.
    """

    id: Hashable
    flavor_cores: int
    arrival_group: int = 0
    samples: np.ndarray | None = None
    interval: UtilInterval | None = None

    @property
    def uc(self) -> float:
        return self.interval.uc

    @property
    def ur(self) -> float:
        return self.interval.ur


def make_vms(intervals: Iterable[tuple[float, float]], flavor_cores: int = 1) -> list[VmRecord]:
    """VMs numbered 0.. from ``(uc, ur)`` pairs; handy for small instances."""
    return [
        VmRecord(i, flavor_cores, interval=UtilInterval(float(uc), float(ur)))
        for i, (uc, ur) in enumerate(intervals)
    ]


def top_radius_sum(radii: Iterable[float], gamma: int) -> float:
    return math.fsum(sorted(radii, reverse=True)[:gamma])


def direct_load(intervals: Sequence[UtilInterval], table: GammaTable) -> float:
    """Gamma-robust load straight from the formula, no incremental state."""
    g = table(len(intervals))
    return math.fsum(iv.uc for iv in intervals) + top_radius_sum((iv.ur for iv in intervals), g)


class HostState:
    """A physical machine with capacity ``capacity`` cores.

    Radii are kept in a descending sorted list with prefix sums so the load of
    a hypothetical placement costs a bisection instead of a re-sort.  All sums
    are rebuilt from the sorted multiset on mutation, so the load depends only
    on which VMs are present, never on insertion order.
    """

    def __init__(self, capacity: float, table: GammaTable):
        self.capacity = float(capacity)
        self.table = table
        self.placed: dict[Hashable, tuple[VmRecord, UtilInterval]] = {}
        self._neg_radii: list[float] = []  # ascending negatives == descending radii
        self._prefix: list[float] = [0.0]
        self.uc_sum = 0.0

    def __len__(self) -> int:
        return len(self.placed)

    def __repr__(self) -> str:
        return f"HostState(capacity={self.capacity}, n={len(self)}, load={self.load:.6g})"

    @property
    def radius_order(self) -> list[float]:
        return [-r for r in self._neg_radii]

    @property
    def load(self) -> float:
        return self.uc_sum + self._prefix[self.table(len(self.placed))]

    def _rebuild(self) -> None:
        intervals = [iv for _, iv in self.placed.values()]
        self.uc_sum = math.fsum(sorted(iv.uc for iv in intervals))
        self._neg_radii = sorted(-iv.ur for iv in intervals)
        self._prefix = [0.0, *accumulate(-r for r in self._neg_radii)]

    def load_with(self, interval: UtilInterval) -> float:
        """Load if a VM with ``interval`` were added (Gamma re-evaluated)."""
        n = len(self.placed) + 1
        g = self.table(n)
        q = bisect.bisect_left(self._neg_radii, -interval.ur)
        if g <= q:
            overhead = self._prefix[g]
        else:
            overhead = self._prefix[g - 1] + interval.ur
        return self.uc_sum + interval.uc + overhead

    def fits(self, interval: UtilInterval) -> bool:
        if len(self.placed) + 1 > self.table.n_max:
            return False
        return self.load_with(interval) <= self.capacity + EPS

    def try_place(self, vm: VmRecord, interval: UtilInterval | None = None) -> bool:
        interval = vm.interval if interval is None else interval
        if vm.id in self.placed:
            raise ValueError(f"VM {vm.id!r} is already on this host")
        if not self.fits(interval):
            return False
        self.placed[vm.id] = (vm, interval)
        self._rebuild()
        return True

    def remove_vm(self, vm_id: Hashable) -> VmRecord:
        try:
            vm, _ = self.placed.pop(vm_id)
        except KeyError:
            raise KeyError(f"VM {vm_id!r} is not on this host") from None
        self._rebuild()
        return vm

    def set_interval(self, vm_id: Hashable, interval: UtilInterval) -> None:
        """Replace a placed VM's interval; the host may end up over capacity."""
        vm, _ = self.placed[vm_id]
        self.placed[vm_id] = (vm, interval)
        self._rebuild()

    def intervals(self) -> list[UtilInterval]:
        return [iv for _, iv in self.placed.values()]

    def max_set(self) -> list[Hashable]:
        """Ids of the Gamma(n) largest-radius VMs; ties go to the lower id."""
        ranked = sorted(self.placed, key=lambda vid: (-self.placed[vid][1].ur, vid))
        return ranked[: self.table(len(ranked))]

    def min_set(self) -> list[Hashable]:
        chosen = set(self.max_set())
        return [vid for vid in sorted(self.placed) if vid not in chosen]

    def over_capacity(self) -> bool:
        return self.load > self.capacity + EPS

    def flavor_sum(self) -> int:
        return sum(vm.flavor_cores for vm, _ in self.placed.values())


def host_load(host: HostState, table: GammaTable | None = None) -> float:
    """Sum of centers plus the Gamma(|placed|) largest radii."""
    if table is not None and table is not host.table:
        return direct_load(host.intervals(), table)
    return host.load


def try_place(host: HostState, vm: VmRecord) -> bool:
    return host.try_place(vm)


def remove_vm(host: HostState, vm_id: Hashable) -> None:
    host.remove_vm(vm_id)


def make_hosts(n_hosts: int, capacity: float, table: GammaTable) -> list[HostState]:
    return [HostState(capacity, table) for _ in range(n_hosts)]


@dataclass
class Mapping:
    """Assignment of a queue prefix to host indices."""

    assignments: dict = field(default_factory=dict)
    feasible: bool = True

    @property
    def placed_count(self) -> int:
        return len(self.assignments)

    def host_populations(self, n_hosts: int) -> list[int]:
        counts = [0] * n_hosts
        for h in self.assignments.values():
            counts[h] += 1
        return counts

    def check_prefix(self, queue: Sequence[VmRecord]) -> bool:
        """True when the assigned VMs are exactly the first ``placed_count`` of the queue."""
        ids = [vm.id for vm in queue[: self.placed_count]]
        return set(ids) == set(self.assignments)

    def to_json(self) -> dict:
        return {
            "assignments": {str(k): v for k, v in self.assignments.items()},
            "placed_count": self.placed_count,
            "feasible": self.feasible,
        }


def mapping_from_hosts(hosts: Sequence[HostState]) -> Mapping:
    mapping = Mapping()
    for h, host in enumerate(hosts):
        for vid in host.placed:
            mapping.assignments[vid] = h
    mapping.feasible = not any(host.over_capacity() for host in hosts)
    return mapping
