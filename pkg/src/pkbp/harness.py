"""Trace I/O, experiment runs and metrics.

Trace CSV layout::

    # units=fraction
    vm_id,flavor_cores,arrival_group,r_1,r_2,...
    vm-0,2,0,0.31,0.29,...

Readings are 5 minutes apart, either as a fraction of the flavor or in
absolute cores, as the first line declares.  Rows may be ragged.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bounds import close_radius_lb, prefix_ub
from .coldstart import (
    SAMPLE_MINUTES,
    ConservativePredictor,
    FlavorTablePredictor,
    auto_correct,
    predicted_interval,
)
from .core import HostState, VmRecord, make_hosts
from .gamma import get_table
from .schedulers import ALGORITHMS, make_policy, run_policy
from .symmetrize import UtilInterval, symmetrize

UNITS = ("fraction", "absolute")
STRATEGIES = ("hot", "cold", "semi-cold", "flavor")
UTIL_MODELS = ("uniform", "two-cluster", "skewed-high")
CONFIG_ENV = "PKBP_CONFIG"


class TraceError(ValueError):
    pass


@dataclass
class TraceRow:
    vm_id: str
    flavor_cores: int
    arrival_group: int
    readings: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, TraceRow)
            and (self.vm_id, self.flavor_cores, self.arrival_group)
            == (other.vm_id, other.flavor_cores, other.arrival_group)
            and np.array_equal(self.readings, other.readings)
        )


@dataclass
class TraceFile:
    rows: list[TraceRow]
    units: str = "fraction"

    def __post_init__(self):
        if self.units not in UNITS:
            raise TraceError(f"units must be one of {UNITS}, got {self.units!r}")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_groups(self) -> int:
        return len({r.arrival_group for r in self.rows})

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, r in enumerate(self.rows):
            out.setdefault(r.arrival_group, []).append(i)
        return out

    def absolute(self, row: TraceRow) -> np.ndarray:
        if self.units == "fraction":
            return row.readings * row.flavor_cores
        return row.readings

    def vms(self) -> list[VmRecord]:
        """Queue of VMs in file order with readings in absolute cores."""
        return [
            VmRecord(r.vm_id, r.flavor_cores, r.arrival_group, samples=self.absolute(r))
            for r in self.rows
        ]


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_trace(trace: TraceFile) -> str:
    buf = io.StringIO()
    buf.write(f"# units={trace.units}\n")
    width = max((r.readings.size for r in trace.rows), default=0)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["vm_id", "flavor_cores", "arrival_group"] + [f"r_{i + 1}" for i in range(width)])
    for r in trace.rows:
        writer.writerow([r.vm_id, r.flavor_cores, r.arrival_group] + [_fmt(x) for x in r.readings])
    return buf.getvalue()


def write_trace(trace: TraceFile, path) -> None:
    Path(path).write_text(dumps_trace(trace))


def loads_trace(text: str, source: str = "<trace>") -> TraceFile:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise TraceError(f"{source}:1: missing '# units=fraction|absolute' header")
    flag = lines[0].lstrip("#").strip()
    key, _, units = flag.partition("=")
    if key.strip() != "units" or units.strip() not in UNITS:
        raise TraceError(f"{source}:1: bad unit flag {flag!r}")
    units = units.strip()
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["vm_id", "flavor_cores", "arrival_group"]:
        raise TraceError(f"{source}:2: header must start with vm_id,flavor_cores,arrival_group")
    rows: list[TraceRow] = []
    seen: set[str] = set()
    last_group = None
    for offset, fields in enumerate(reader):
        lineno = offset + 3
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) < 4:
            raise TraceError(f"{source}:{lineno}: need an id, flavor, group and at least one reading")
        vm_id = fields[0].strip()
        if vm_id in seen:
            raise TraceError(f"{source}:{lineno}: duplicate vm_id {vm_id!r}")
        try:
            flavor = int(fields[1])
            group = int(fields[2])
            readings = np.array([float(f) for f in fields[3:] if f.strip() != ""])
        except ValueError as exc:
            raise TraceError(f"{source}:{lineno}: {exc}") from None
        if flavor <= 0:
            raise TraceError(f"{source}:{lineno}: flavor_cores must be positive")
        if readings.size == 0:
            raise TraceError(f"{source}:{lineno}: no readings")
        if not np.all(np.isfinite(readings)) or np.any(readings < 0):
            raise TraceError(f"{source}:{lineno}: readings must be finite and non-negative")
        top = 1.0 if units == "fraction" else float(flavor)
        if np.any(readings > top):
            raise TraceError(
                f"{source}:{lineno}: reading {readings.max()} above {top} in {units} units"
            )
        if last_group is not None and group < last_group:
            raise TraceError(f"{source}:{lineno}: arrival groups must be non-decreasing")
        last_group = group
        seen.add(vm_id)
        rows.append(TraceRow(vm_id, flavor, group, readings))
    return TraceFile(rows, units)


def load_trace(path) -> TraceFile:
    return loads_trace(Path(path).read_text(), str(path))


# ---------------------------------------------------------------- synthetic traces

DEFAULT_FLAVOR_MIX = {1: 0.4, 2: 0.35, 4: 0.25}


def synth_trace(seed: int, n_vms: int = 2000, flavor_mix: dict | None = None,
                util_model: str = "uniform", n_readings: int = 48, n_groups: int = 24) -> TraceFile:
    """Deterministic synthetic trace, readings as fractions of the flavor.

    Every VM gets a center ``m`` and half-width ``r``; readings are
    ``m + r * z`` with ``z`` drawn from a symmetric Beta(2, 2) on [-1, 1]
    ("uniform", "two-cluster") or from a Beta(4, 1.2) that piles up near the
    top of the range ("skewed-high").  In "two-cluster" the half-widths come
    from a narrow and a wide component.
    """
    if util_model not in UTIL_MODELS:
        raise ValueError(f"util_model must be one of {UTIL_MODELS}, got {util_model!r}")
    mix = dict(DEFAULT_FLAVOR_MIX if flavor_mix is None else flavor_mix)
    weights = np.array(list(mix.values()), dtype=float)
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("flavor mix weights must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    flavors = rng.choice(np.array(list(mix.keys())), size=n_vms, p=weights / weights.sum())
    groups = np.sort(rng.integers(0, n_groups, size=n_vms))

    if util_model == "two-cluster":
        wide = rng.random(n_vms) < 0.5
        radius = np.where(wide, rng.uniform(0.16, 0.24, n_vms), rng.uniform(0.01, 0.04, n_vms))
        center = rng.uniform(0.24, 0.40, n_vms)
    else:
        center = rng.uniform(0.12, 0.52, n_vms)
        radius = rng.uniform(0.0, 1.0, n_vms) * np.minimum(np.minimum(center, 1 - center), 0.25)

    if util_model == "skewed-high":
        z = 2.0 * rng.beta(4.0, 1.2, size=(n_vms, n_readings)) - 1.0
    else:
        z = 2.0 * rng.beta(2.0, 2.0, size=(n_vms, n_readings)) - 1.0
    readings = np.clip(np.round(center[:, None] + radius[:, None] * z, 4), 0.0, 1.0)
    rows = [
        TraceRow(f"vm-{i}", int(flavors[i]), int(groups[i]), readings[i])
        for i in range(n_vms)
    ]
    return TraceFile(rows, "fraction")


# ---------------------------------------------------------------- metrics

def gap(obj_x: float, obj_y: float) -> float:
    """Relative shortfall of ``obj_x`` behind ``obj_y`` in percent."""
    if obj_y == 0:
        raise ZeroDivisionError("gap undefined for a zero reference objective")
    return (obj_y - obj_x) / obj_y * 100.0


def overcommit_ratio(host: HostState) -> float:
    """Placed flavor cores per physical core."""
    if host.capacity <= 0:
        raise ValueError("capacity must be positive")
    return host.flavor_sum() / host.capacity


def hotspot_count(actual: np.ndarray, capacity: float) -> tuple[int, int]:
    """``(hosts with a violation, violating host-ticks)`` from a hosts x ticks load matrix."""
    actual = np.asarray(actual, dtype=float)
    if actual.ndim != 2:
        raise ValueError("actual loads must be a hosts x ticks matrix")
    if np.isnan(actual).any():
        raise ValueError("missing utilization for some host and tick")
    over = actual > capacity
    return int(over.any(axis=1).sum()), int(over.sum())


def host_loads(hosts: Sequence[HostState], reading_at) -> np.ndarray:
    """Actual load per host at one tick; ``reading_at(vm)`` gives a VM's reading."""
    return np.array([math.fsum(reading_at(vm) for vm, _ in h.placed.values()) for h in hosts])


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    n_hosts: int = 20
    capacity: float = 44.0
    alpha: float = 0.05
    t_p: float = 40.0
    t_a: float = 40.0
    seed: int = 0
    replicas: int = 1
    algo: str = "close-radius-fit"
    strategy: str = "hot"
    tail_ticks: int = 12
    with_bounds: bool = False
    n_max: int = 512
    flavor_table: str | None = None

    def __post_init__(self):
        if self.n_hosts <= 0 or self.capacity <= 0 or self.t_p <= 0 or self.t_a <= 0:
            raise ValueError("n_hosts, capacity, t_p and t_a must be positive")
        if self.replicas <= 0 or self.tail_ticks < 0:
            raise ValueError("replicas must be positive and tail_ticks non-negative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.algo not in ALGORITHMS:
            raise ValueError(f"algo must be one of {ALGORITHMS}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Config from JSON ``path`` (or ``$PKBP_CONFIG``), then keyword overrides."""
    data: dict = {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {f.name for f in dataclasses.fields(ExperimentConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


@dataclass
class ExperimentReport:
    algo: str
    strategy: str
    n_hosts: int
    capacity: float
    alpha: float
    seed: int
    placed_count: int
    queue_length: int
    v_ph: float
    or_mean: float
    hotspot_hosts: int
    hotspot_events: int
    host_ticks: int
    lower: int | None = None
    upper: int | None = None
    gaps: dict = field(default_factory=dict)
    hosts: list = field(default_factory=list)

    @property
    def violation_fraction(self) -> float:
        return self.hotspot_events / self.host_ticks if self.host_ticks else 0.0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def hot_intervals(vms: Sequence[VmRecord], t_p: float) -> list[UtilInterval]:
    ticks = max(int(t_p // SAMPLE_MINUTES), 1)
    return [symmetrize(vm.samples[:ticks]) for vm in vms]


def _with_intervals(vms, intervals) -> list[VmRecord]:
    return [dataclasses.replace(vm, interval=iv) for vm, iv in zip(vms, intervals)]


def _host_rows(hosts: Sequence[HostState], events: np.ndarray) -> list[dict]:
    return [
        {
            "host": h,
            "n_vms": len(host),
            "flavor_cores": host.flavor_sum(),
            "or": overcommit_ratio(host),
            "load": host.load,
            "hotspot_events": int(events[h]),
        }
        for h, host in enumerate(hosts)
    ]


def _finish(config: ExperimentConfig, hosts, placed: int, queue_len: int, loads: np.ndarray,
            bounds=None) -> ExperimentReport:
    if loads.size:
        n_hot, n_events = hotspot_count(loads, config.capacity)
        events = (loads > config.capacity).sum(axis=1)
    else:
        n_hot, n_events, events = 0, 0, np.zeros(len(hosts), dtype=int)
    report = ExperimentReport(
        algo=config.algo,
        strategy=config.strategy,
        n_hosts=config.n_hosts,
        capacity=config.capacity,
        alpha=config.alpha,
        seed=config.seed,
        placed_count=placed,
        queue_length=queue_len,
        v_ph=placed / config.n_hosts,
        or_mean=float(np.mean([overcommit_ratio(h) for h in hosts])),
        hotspot_hosts=n_hot,
        hotspot_events=n_events,
        host_ticks=int(loads.size),
        hosts=_host_rows(hosts, events),
    )
    if bounds is not None:
        report.lower, report.upper = bounds
        if report.upper:
            report.gaps["to_upper"] = gap(placed, report.upper)
            report.gaps["lower_to_upper"] = gap(report.lower, report.upper)
        if report.lower:
            report.gaps["to_lower"] = gap(placed, report.lower)
    return report


def run_hot(config: ExperimentConfig, trace: TraceFile) -> ExperimentReport:
    """Intervals from the first ``t_p`` minutes; validate on the readings after that.

    ``strategy="flavor"`` runs the same flow with every VM reserved at its
    full flavor.
    """
    table = get_table(config.alpha, config.n_max)
    vms = trace.vms()
    if config.strategy == "flavor":
        intervals = [UtilInterval(float(vm.flavor_cores), 0.0) for vm in vms]
    else:
        intervals = hot_intervals(vms, config.t_p)
    queue = _with_intervals(vms, intervals)
    hosts = make_hosts(config.n_hosts, config.capacity, table)
    outcome = run_policy(make_policy(config.algo, config.seed), queue, hosts)
    start = max(int(config.t_p // SAMPLE_MINUTES), 1)
    placed = [vm for h in hosts for vm, _ in h.placed.values()]
    end = min((vm.samples.size for vm in placed), default=start)
    loads = np.array([
        [math.fsum(vm.samples[t] for vm, _ in h.placed.values()) for t in range(start, end)]
        for h in hosts
    ]).reshape(len(hosts), max(end - start, 0))
    bounds = None
    if config.with_bounds:
        lb = close_radius_lb(queue, config.n_hosts, config.capacity, table).value
        ub = prefix_ub(queue, config.n_hosts, config.capacity, table).value
        bounds = (lb, ub)
    return _finish(config, hosts, outcome.placed_count, len(queue), loads, bounds)


def _predictor(config: ExperimentConfig):
    if config.flavor_table:
        return FlavorTablePredictor.from_file(config.flavor_table)
    return ConservativePredictor()


def run_cold(config: ExperimentConfig, trace: TraceFile) -> ExperimentReport:
    """Group ``g`` arrives at tick ``g``; every tick measures, corrects, then admits.

    Admission stops for good at the first VM that fits nowhere.  After the
    last admission ``tail_ticks`` more ticks are measured.
    """
    table = get_table(config.alpha, config.n_max)
    predictor = _predictor(config)
    hosts = make_hosts(config.n_hosts, config.capacity, table)
    policy = make_policy(config.algo, config.seed)
    vms = trace.vms()
    groups = trace.groups()
    order = sorted(groups)
    arrival = {}
    placed = 0
    queue_len = 0
    admitting = True
    columns = []
    last_tick = (order[-1] if order else 0) + config.tail_ticks
    for tick in range(0, last_tick + 1):
        if arrival:
            column = []
            for h in hosts:
                total = []
                for vm, _ in h.placed.values():
                    idx = tick - arrival[vm.id] - 1
                    if idx >= vm.samples.size:
                        raise TraceError(f"VM {vm.id} has no reading at tick {tick}")
                    total.append(vm.samples[idx])
                column.append(math.fsum(total))
            columns.append(column)
        if config.strategy == "semi-cold":
            for h in hosts:
                for vm, iv in list(h.placed.values()):
                    age = (tick - arrival[vm.id]) * SAMPLE_MINUTES
                    new = auto_correct(vm, age, config.t_a, interval=iv)
                    if new != iv:
                        h.set_interval(vm.id, new)
            if hasattr(policy, "reset"):
                policy.reset()
        if admitting and tick in groups:
            batch = [vms[i] for i in groups[tick]]
            queue_len += len(batch)
            batch = _with_intervals(batch, [predicted_interval(predictor, vm) for vm in batch])
            outcome = run_policy(policy, batch, hosts)
            for vm in batch[: outcome.placed_count]:
                arrival[vm.id] = tick
            placed += outcome.placed_count
            if outcome.placed_count < len(batch):
                admitting = False
                last_tick = min(last_tick, tick + config.tail_ticks)
        if tick >= last_tick:
            break
    loads = np.array(columns, dtype=float).T.reshape(len(hosts), len(columns))
    return _finish(config, hosts, placed, queue_len, loads)


def run_experiment(config: ExperimentConfig, trace: TraceFile) -> ExperimentReport:
    if config.strategy in ("hot", "flavor"):
        return run_hot(config, trace)
    return run_cold(config, trace)


def run_replicas(config: ExperimentConfig, trace: TraceFile | None = None,
                 util_model: str = "uniform", n_vms: int = 2000) -> list[ExperimentReport]:
    """One report per replica: synthetic traces with seeds ``seed, seed+1, ...``
    unless a fixed ``trace`` is given, in which case only the policy seed varies."""
    reports = []
    for i in range(config.replicas):
        cfg = config.replace(seed=config.seed + i, replicas=1)
        tr = trace if trace is not None else synth_trace(cfg.seed, n_vms=n_vms, util_model=util_model)
        reports.append(run_experiment(cfg, tr))
    return reports


# ---------------------------------------------------------------- aggregation

def fit_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares ``y = slope * x + intercept``; returns ``(slope, intercept, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2) / total) if total > 0 else 1.0
    return float(slope), float(intercept), r2


SUMMARY_COLUMNS = [
    "algo", "strategy", "n_hosts", "runs", "v_ph", "or_mean",
    "hotspot_hosts", "hotspot_events", "violation_fraction", "gap_to_upper", "gap_to_lower", "slope",
]


def summarize(reports: Sequence[dict]) -> list[dict]:
    """Means per (algo, strategy, n_hosts) plus a pooled placed-vs-hosts slope per (algo, strategy)."""
    cells: dict[tuple, list[dict]] = {}
    for r in reports:
        cells.setdefault((r["algo"], r["strategy"], r["n_hosts"]), []).append(r)
    slopes = {}
    for key in {(a, s) for a, s, _ in cells}:
        pts = [(r["n_hosts"], r["placed_count"]) for r in reports if (r["algo"], r["strategy"]) == key]
        if len({x for x, _ in pts}) >= 2:
            slopes[key] = fit_slope([x for x, _ in pts], [y for _, y in pts])[0]
    rows = []
    for (algo, strategy, n_hosts), rs in sorted(cells.items()):
        ticks = sum(r["host_ticks"] for r in rs)

        def mean_gap(name):
            vals = [r["gaps"][name] for r in rs if name in r.get("gaps", {})]
            return float(np.mean(vals)) if vals else None

        rows.append({
            "algo": algo,
            "strategy": strategy,
            "n_hosts": n_hosts,
            "runs": len(rs),
            "v_ph": float(np.mean([r["v_ph"] for r in rs])),
            "or_mean": float(np.mean([r["or_mean"] for r in rs])),
            "hotspot_hosts": float(np.mean([r["hotspot_hosts"] for r in rs])),
            "hotspot_events": float(np.mean([r["hotspot_events"] for r in rs])),
            "violation_fraction": sum(r["hotspot_events"] for r in rs) / ticks if ticks else 0.0,
            "gap_to_upper": mean_gap("to_upper"),
            "gap_to_lower": mean_gap("to_lower"),
            "slope": slopes.get((algo, strategy)),
        })
    return rows


def summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in SUMMARY_COLUMNS})
    return buf.getvalue()


def hosts_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    cols = ["host", "n_vms", "flavor_cores", "or", "load", "hotspot_events"]
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report.hosts)
    return buf.getvalue()
