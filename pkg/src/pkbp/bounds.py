"""Offline bounds on the longest placeable queue prefix.

``prefix_ub`` (upper) charges every prefix a provable minimum probabilistic
overhead; ``close_radius_lb`` (lower) packs radius-sorted prefixes with
FirstFit; ``exact_opt`` searches all assignments for tiny instances.
"""
from __future__ import annotations

import enum
import logging
import math
from typing import NamedTuple, Sequence

import numpy as np

from .core import EPS, VmRecord, make_hosts
from .gamma import GammaTable

log = logging.getLogger(__name__)


class BoundKind(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"
    EXACT = "exact"


class BoundResult(NamedTuple):
    value: int
    kind: BoundKind


def next_fit_counts(centers: Sequence[float], n_hosts: int, capacity: float) -> list[int]:
    """VM counts per host from Next-Fit on ascending centers with splitting.

    A VM that overflows a host is counted there and its excess spills into
    the next host.  The last host absorbs whatever is left.
    """
    d = [0] * n_hosts
    if n_hosts == 0:
        return d
    k, n, c = 0, 0, 0.0
    for uc in sorted(centers):
        n += 1
        c += uc
        if c >= capacity and k < n_hosts - 1:
            c -= capacity
            d[k] = n
            n = 0
            k += 1
    d[k] += n
    return d


def gamma_lb(prefix: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable) -> int:
    """Lower bound on the total MaxSet size of any feasible mapping of ``prefix``."""
    if not prefix:
        return 0
    d = next_fit_counts([vm.uc for vm in prefix], n_hosts, capacity)
    # no host holds more than n_max VMs and the approximation is non-decreasing,
    # so capping the count keeps this a lower bound
    return math.ceil(sum(table.tilde(min(n, table.n_max)) for n in d))


def majorizes(a: Sequence[int], b: Sequence[int]) -> bool:
    """True when ``a`` majorizes ``b`` (both sorted non-increasing, equal totals)."""
    a = sorted(a, reverse=True)
    b = sorted(b, reverse=True)
    size = max(len(a), len(b))
    a = a + [0] * (size - len(a))
    b = b + [0] * (size - len(b))
    if sum(a) != sum(b):
        return False
    return all(x >= y for x, y in zip(np.cumsum(a), np.cumsum(b)))


def _radius_order(prefix: Sequence[VmRecord]) -> list[VmRecord]:
    return sorted(prefix, key=lambda vm: -vm.ur)


def overhead_lb_naive(prefix: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable) -> float:
    """Minimum probabilistic overhead of any mapping of ``prefix``, literally."""
    ordered = _radius_order(prefix)
    ur_lb = 0.0
    previous = 0
    for j in range(1, len(ordered) + 1):
        current = gamma_lb(ordered[:j], n_hosts, capacity, table)
        if current > previous:
            ur_lb += ordered[j - 1].ur
        previous = current
    return ur_lb


def _subprefix_gamma_lb(uc: np.ndarray, ur: np.ndarray, n_hosts: int, capacity: float,
                        tilde: np.ndarray) -> np.ndarray:
    """``gamma_lb`` of every radius-sorted sub-prefix j = 0..i at once.

    Rows index the sub-prefix length, columns the VMs in ascending-center
    order; a VM in bucket k is one whose preceding center mass crossed k
    capacities.  Only valid when no single center exceeds ``capacity``.
    """
    i = uc.size
    by_radius = np.argsort(-ur, kind="stable")
    rank = np.empty(i, dtype=np.int64)
    rank[by_radius] = np.arange(i)
    by_center = np.argsort(uc, kind="stable")
    centers = uc[by_center]
    member_rank = rank[by_center]
    lengths = np.arange(i + 1)
    member = member_rank[None, :] < lengths[:, None]
    mass = np.where(member, centers[None, :], 0.0)
    before = np.cumsum(mass, axis=1) - mass
    bucket = np.minimum(np.floor(before / capacity), n_hosts - 1).astype(np.int64)
    flat = (lengths[:, None] * n_hosts + bucket)[member]
    counts = np.bincount(flat, minlength=(i + 1) * n_hosts).reshape(i + 1, n_hosts)
    totals = tilde[np.minimum(counts, tilde.size - 1)].sum(axis=1)
    return np.ceil(totals - 1e-9).astype(np.int64)


def overhead_lb(prefix: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable) -> float:
    """Vectorized ``overhead_lb_naive``."""
    if not prefix:
        return 0.0
    uc = np.array([vm.uc for vm in prefix])
    ur = np.array([vm.ur for vm in prefix])
    if n_hosts < 1 or capacity <= 0 or uc.max() > capacity:
        return overhead_lb_naive(prefix, n_hosts, capacity, table)
    glb = _subprefix_gamma_lb(uc, ur, n_hosts, capacity, table.gamma_tilde_f)
    radii = ur[np.argsort(-ur, kind="stable")]
    rises = glb[1:] > glb[:-1]
    return math.fsum(radii[rises])


def _implaceable(uc_total: float, overhead: float, n_hosts: int, capacity: float) -> bool:
    return uc_total + overhead > capacity * n_hosts + EPS * max(n_hosts, 1)


def prefix_ub_naive(queue: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable) -> BoundResult:
    """Literal PrefixUB scan; quadratic in gamma_lb calls, kept as a test oracle."""
    for i in range(1, len(queue) + 1):
        prefix = queue[:i]
        uc_total = math.fsum(vm.uc for vm in prefix)
        if _implaceable(uc_total, overhead_lb_naive(prefix, n_hosts, capacity, table), n_hosts, capacity):
            return BoundResult(i - 1, BoundKind.UPPER)
    return BoundResult(len(queue), BoundKind.UPPER)


def prefix_ub(queue: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable) -> BoundResult:
    """Upper bound: one less than the shortest provably implaceable prefix.

    Prefixes are scanned in order.  The overhead bound of a prefix never
    exceeds the sum of all its radii, so the full computation only runs once
    centers plus every radius overflow the cluster.  (The Gamma lower bound
    is not monotone over radius-sorted sub-prefixes, so no tighter cheap
    screen is used.)
    """
    ucs: list[float] = []
    urs: list[float] = []
    for i in range(1, len(queue) + 1):
        ucs.append(queue[i - 1].uc)
        urs.append(queue[i - 1].ur)
        uc_total = math.fsum(ucs)
        if not _implaceable(uc_total, math.fsum(urs), n_hosts, capacity):
            continue
        if _implaceable(uc_total, overhead_lb(queue[:i], n_hosts, capacity, table), n_hosts, capacity):
            return BoundResult(i - 1, BoundKind.UPPER)
    return BoundResult(len(queue), BoundKind.UPPER)


def first_fit_feasible(vms: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable) -> bool:
    hosts = make_hosts(n_hosts, capacity, table)
    for vm in vms:
        if not any(host.try_place(vm) for host in hosts):
            return False
    return True


def _radius_sorted_fits(queue, n, n_hosts, capacity, table) -> bool:
    return first_fit_feasible(_radius_order(queue[:n]), n_hosts, capacity, table)


def close_radius_lb(queue: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable,
                    check_monotone: bool = False) -> BoundResult:
    """Lower bound from FirstFit on radius-sorted prefixes, binary-searched.

    The search range stops at the longest prefix whose centers alone fit in
    the cluster.  ``check_monotone`` additionally sweeps longer prefixes and
    logs (without failing) any feasible one the search skipped.
    """
    total = capacity * n_hosts
    high = 0
    uc_sum = 0.0
    while high < len(queue) and uc_sum + queue[high].uc <= total + EPS * max(n_hosts, 1):
        uc_sum += queue[high].uc
        high += 1
    low, lb = 0, 0
    while low <= high:
        n = (low + high) // 2
        if _radius_sorted_fits(queue, n, n_hosts, capacity, table):
            lb = n
            low = n + 1
        else:
            high = n - 1
    if not _radius_sorted_fits(queue, lb, n_hosts, capacity, table):
        raise AssertionError(f"CloseRadiusLB returned infeasible prefix {lb}")
    if check_monotone:
        for n in range(lb + 1, len(queue) + 1):
            if _radius_sorted_fits(queue, n, n_hosts, capacity, table):
                log.warning("radius-sorted FirstFit feasible at %d beyond binary-search result %d", n, lb)
    return BoundResult(lb, BoundKind.LOWER)


class InstanceTooLarge(ValueError):
    pass


def exact_opt(queue: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable,
              max_vms: int = 12, max_hosts: int = 3) -> BoundResult:
    """Longest placeable prefix by exhaustive depth-first search.

    VMs are assigned in queue order; a branch dies as soon as a host would be
    overloaded (load never drops when a VM is added, so nothing feasible is
    lost).  Host permutations and repeated host-content states are pruned.
    """
    if len(queue) > max_vms or n_hosts > max_hosts:
        raise InstanceTooLarge(
            f"exact search limited to {max_vms} VMs and {max_hosts} hosts, "
            f"got {len(queue)} VMs and {n_hosts} hosts"
        )
    if n_hosts == 0 or not queue:
        return BoundResult(0, BoundKind.EXACT)
    hosts = make_hosts(n_hosts, capacity, table)
    best = 0
    seen: set = set()

    def state_key(depth):
        return depth, tuple(sorted(tuple(sorted(map(str, h.placed))) for h in hosts))

    def dfs(depth: int) -> bool:
        nonlocal best
        best = max(best, depth)
        if depth == len(queue):
            return True
        key = state_key(depth)
        if key in seen:
            return False
        seen.add(key)
        vm = queue[depth]
        tried_empty = False
        for host in hosts:
            if not host.placed:
                if tried_empty:
                    continue
                tried_empty = True
            if host.try_place(vm):
                done = dfs(depth + 1)
                host.remove_vm(vm.id)
                if done:
                    return True
        return False

    dfs(0)
    return BoundResult(best, BoundKind.EXACT)


def best_partition_overhead(radii: Sequence[float], gamma: int) -> tuple[float, tuple[int, ...]]:
    """Brute-force minimum overhead splitting 2N VMs into two hosts of N.

    Returns the minimum of ``top_gamma(group1) + top_gamma(group2)`` and one
    minimizing index set for the first group.
    """
    from itertools import combinations

    size = len(radii)
    if size % 2:
        raise ValueError("need an even number of VMs")
    half = size // 2
    best, arg = math.inf, ()
    for group in combinations(range(size), half):
        chosen = set(group)
        first = sorted((radii[i] for i in chosen), reverse=True)[:gamma]
        second = sorted((radii[i] for i in range(size) if i not in chosen), reverse=True)[:gamma]
        value = math.fsum(first) + math.fsum(second)
        if value < best - 1e-15:
            best, arg = value, group
    return best, arg
