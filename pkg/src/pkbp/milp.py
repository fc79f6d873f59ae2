"""Offline MILP for probabilistic k-bins packing, as an LP-format file.

Variables (queue index ``v``, host ``h``, population ``k``):

* ``R_h_k``  host ``h`` holds exactly ``k`` VMs
* ``y_v_h``  VM ``v`` sits on ``h`` in its max-radius set
* ``x_v_h``  VM ``v`` sits on ``h`` in its min-radius set
* ``S_h``    radius separating the two sets on ``h``

No solver is bundled.  ``write_lp`` emits CPLEX LP text that any MILP solver
reads; ``parse_solution`` takes the solver's ``name value`` listing back,
rounds it and re-checks every row.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Mapping, VmRecord
from .gamma import GammaTable

ROW_TOL = 1e-6
TERMS_PER_LINE = 6


class MilpError(ValueError):
    pass


@dataclass
class Row:
    name: str
    coeffs: dict[str, float]
    sense: str  # "<=", ">=" or "="
    rhs: float

    def activity(self, values: dict[str, float]) -> float:
        return math.fsum(c * values.get(n, 0.0) for n, c in self.coeffs.items())

    def satisfied(self, values: dict[str, float], tol: float = ROW_TOL) -> bool:
        lhs = self.activity(values)
        if self.sense == "<=":
            return lhs <= self.rhs + tol
        if self.sense == ">=":
            return lhs >= self.rhs - tol
        return abs(lhs - self.rhs) <= tol


@dataclass
class MilpModel:
    n_hosts: int
    capacity: float
    n_max: int
    gammas: tuple[int, ...]
    vm_ids: list
    uc: list[float]
    ur: list[float]
    ur_max: float
    variables: list[str] = field(default_factory=list)
    binaries: set[str] = field(default_factory=set)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    objective: dict[str, float] = field(default_factory=dict)
    rows: list[Row] = field(default_factory=list)

    @property
    def n_vms(self) -> int:
        return len(self.uc)

    @property
    def r_vars(self) -> list[str]:
        return [f"R_{h}_{k}" for h in range(self.n_hosts) for k in range(self.n_max + 1)]

    @property
    def y_vars(self) -> list[str]:
        return [f"y_{v}_{h}" for v in range(self.n_vms) for h in range(self.n_hosts)]

    @property
    def x_vars(self) -> list[str]:
        return [f"x_{v}_{h}" for v in range(self.n_vms) for h in range(self.n_hosts)]

    @property
    def s_vars(self) -> list[str]:
        return [f"S_{h}" for h in range(self.n_hosts)]

    def row(self, name: str) -> Row:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def matrix(self) -> dict[str, tuple[dict[str, float], str, float]]:
        """Constraint rows keyed by name, for exact comparison."""
        return {r.name: (dict(r.coeffs), r.sense, r.rhs) for r in self.rows}

    def to_arrays(self):
        """Dense ``(c, A, row_lo, row_hi, var_lo, var_hi, integrality)`` for maximization.

        ``c`` is the objective to maximize; rows are two-sided ranges.
        """
        index = {name: i for i, name in enumerate(self.variables)}
        c = np.zeros(len(self.variables))
        for name, coef in self.objective.items():
            c[index[name]] = coef
        a = np.zeros((len(self.rows), len(self.variables)))
        lo = np.full(len(self.rows), -np.inf)
        hi = np.full(len(self.rows), np.inf)
        for i, r in enumerate(self.rows):
            for name, coef in r.coeffs.items():
                a[i, index[name]] = coef
            if r.sense in ("<=", "="):
                hi[i] = r.rhs
            if r.sense in (">=", "="):
                lo[i] = r.rhs
        var_lo = np.array([self.bounds.get(n, (0.0, 1.0))[0] for n in self.variables])
        var_hi = np.array([self.bounds.get(n, (0.0, 1.0))[1] for n in self.variables])
        integrality = np.array([1 if n in self.binaries else 0 for n in self.variables])
        return c, a, lo, hi, var_lo, var_hi, integrality


def default_n_max(queue: Sequence[VmRecord], capacity: float, table: GammaTable) -> int:
    """Most VMs a host can hold by centers alone, capped by the table and the queue."""
    cap = min(table.n_max, len(queue))
    positive = [vm.uc for vm in queue if vm.uc > 0]
    if positive and capacity >= 0:
        cap = min(cap, math.ceil(capacity / min(positive)))
    return max(cap, 0)


def _nonzero(coeffs: dict[str, float]) -> dict[str, float]:
    return {n: float(c) for n, c in coeffs.items() if c != 0}


def build_model(queue: Sequence[VmRecord], n_hosts: int, capacity: float, table: GammaTable,
                n_max: int | None = None, max_vms: int = 500, max_hosts: int = 50) -> MilpModel:
    if n_hosts < 1:
        raise MilpError("the model needs at least one host")
    if len(queue) > max_vms or n_hosts > max_hosts:
        raise MilpError(
            f"model limited to {max_vms} VMs and {max_hosts} hosts, "
            f"got {len(queue)} VMs and {n_hosts} hosts"
        )
    if n_max is None:
        n_max = default_n_max(queue, capacity, table)
    if n_max > table.n_max:
        raise MilpError(f"n_max {n_max} exceeds gamma table range {table.n_max}")
    uc = [float(vm.uc) for vm in queue]
    ur = [float(vm.ur) for vm in queue]
    ur_max = max(ur, default=0.0)
    model = MilpModel(
        n_hosts=n_hosts,
        capacity=float(capacity),
        n_max=n_max,
        gammas=tuple(table(k) for k in range(n_max + 1)),
        vm_ids=[vm.id for vm in queue],
        uc=uc,
        ur=ur,
        ur_max=ur_max,
    )
    H, V = range(n_hosts), range(len(queue))
    model.variables = model.r_vars + model.y_vars + model.x_vars + model.s_vars
    model.binaries = set(model.r_vars + model.y_vars + model.x_vars)
    model.bounds = {name: (0.0, 1.0) for name in model.binaries}
    model.bounds.update({s: (0.0, ur_max) for s in model.s_vars})
    model.objective = {n: 1.0 for v in V for h in H for n in (f"x_{v}_{h}", f"y_{v}_{h}")}

    rows = model.rows
    for v in V:
        rows.append(Row(f"c5b_{v}", {n: 1.0 for h in H for n in (f"x_{v}_{h}", f"y_{v}_{h}")}, "<=", 1.0))
    for h in H:
        rows.append(Row(f"c5c_{h}", {f"R_{h}_{k}": 1.0 for k in range(n_max + 1)}, "=", 1.0))
    for h in H:
        coeffs = {n: 1.0 for v in V for n in (f"x_{v}_{h}", f"y_{v}_{h}")}
        coeffs.update({f"R_{h}_{k}": -float(k) for k in range(n_max + 1)})
        rows.append(Row(f"c5d_{h}", _nonzero(coeffs), "=", 0.0))
    for h in H:
        coeffs = {f"y_{v}_{h}": 1.0 for v in V}
        coeffs.update({f"R_{h}_{k}": -float(model.gammas[k]) for k in range(n_max + 1)})
        rows.append(Row(f"c5e_{h}", _nonzero(coeffs), "=", 0.0))
    for v in range(len(queue) - 1):
        coeffs = {n: 1.0 for h in H for n in (f"x_{v}_{h}", f"y_{v}_{h}")}
        coeffs.update({n: -1.0 for h in H for n in (f"x_{v + 1}_{h}", f"y_{v + 1}_{h}")})
        rows.append(Row(f"c5f_{v}", coeffs, ">=", 0.0))
    for v in V:
        for h in H:
            rows.append(Row(f"c5g_{v}_{h}", _nonzero({f"S_{h}": 1.0, f"x_{v}_{h}": -ur[v]}), ">=", 0.0))
    for v in V:
        for h in H:
            coeffs = {f"S_{h}": 1.0, f"y_{v}_{h}": ur_max - ur[v]}
            rows.append(Row(f"c5h_{v}_{h}", _nonzero(coeffs), "<=", ur_max))
    for h in H:
        coeffs = {}
        for v in V:
            coeffs[f"y_{v}_{h}"] = uc[v] + ur[v]
            coeffs[f"x_{v}_{h}"] = uc[v]
        rows.append(Row(f"c5i_{h}", _nonzero(coeffs), "<=", float(capacity)))
    # rows that lost every term (zero centers, empty queue) are vacuous or unsatisfiable
    kept = []
    for r in rows:
        if r.coeffs:
            kept.append(r)
        elif not r.satisfied({}, tol=0.0):
            raise MilpError(f"row {r.name} is empty and unsatisfiable")
    model.rows = kept
    return model


# ---------------------------------------------------------------- LP text

def _num(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _linear(coeffs: dict[str, float]) -> list[str]:
    terms = []
    for i, (name, coef) in enumerate(coeffs.items()):
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = name if mag == 1.0 else f"{_num(mag)} {name}"
        if i == 0:
            terms.append(body if sign == "+" else f"- {body}")
        else:
            terms.append(f"{sign} {body}")
    return terms


def _wrap(head: str, terms: list[str], tail: str = "") -> list[str]:
    lines = []
    for i in range(0, max(len(terms), 1), TERMS_PER_LINE):
        chunk = " ".join(terms[i:i + TERMS_PER_LINE])
        lines.append((f" {head} " if i == 0 else "   ") + chunk)
    if tail:
        lines[-1] += f" {tail}"
    return lines


def dumps_lp(model: MilpModel) -> str:
    out = [
        "\\ probabilistic k-bins packing",
        f"\\ hosts {model.n_hosts} capacity {_num(model.capacity)} n_max {model.n_max}",
        "\\ gammas " + " ".join(str(g) for g in model.gammas),
    ]
    for v, (vid, uc, ur) in enumerate(zip(model.vm_ids, model.uc, model.ur)):
        out.append(f"\\ vm {v} uc {uc!r} ur {ur!r} id {vid}")
    out.append("Maximize")
    out.extend(_wrap("obj:", _linear(model.objective)))
    out.append("Subject To")
    for r in model.rows:
        out.extend(_wrap(f"{r.name}:", _linear(r.coeffs), f"{r.sense} {_num(r.rhs)}"))
    out.append("Bounds")
    for name in model.variables:
        if name in model.binaries:
            continue
        lo, hi = model.bounds[name]
        out.append(f" {_num(lo)} <= {name} <= {_num(hi)}")
    out.append("Binaries")
    names = [n for n in model.variables if n in model.binaries]
    for i in range(0, len(names), 10):
        out.append(" " + " ".join(names[i:i + 10]))
    out.append("End")
    return "\n".join(out) + "\n"


_NAME = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
_SECTIONS = {"maximize": "obj", "subject to": "rows", "bounds": "bounds", "binaries": "bin", "end": "end"}


def _parse_terms(text: str, where: str) -> dict[str, float]:
    tokens = text.split()
    coeffs: dict[str, float] = {}
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            if coef is not None:
                raise MilpError(f"{where}: dangling coefficient before {tok!r}")
            sign = -1.0 if tok == "-" else 1.0
            continue
        if _NAME.match(tok):
            if tok in coeffs:
                raise MilpError(f"{where}: variable {tok} repeated")
            coeffs[tok] = sign * (1.0 if coef is None else coef)
            sign, coef = 1.0, None
            continue
        try:
            coef = float(tok)
        except ValueError:
            raise MilpError(f"{where}: bad token {tok!r}") from None
    if coef is not None:
        raise MilpError(f"{where}: trailing coefficient")
    return coeffs


def loads_lp(text: str) -> MilpModel:
    """Strict reader for the dialect ``dumps_lp`` writes."""
    header: dict = {"vms": []}
    section = None
    entries: list[tuple[str, str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip()
        if line.startswith("\\"):
            parts = line[1:].split()
            if parts[:1] == ["hosts"]:
                header["hosts"] = int(parts[1])
                header["capacity"] = float(parts[3])
                header["n_max"] = int(parts[5])
            elif parts[:1] == ["gammas"]:
                header["gammas"] = tuple(int(p) for p in parts[1:])
            elif parts[:1] == ["vm"]:
                vid = line.split(" id ", 1)[1]
                header["vms"].append((int(parts[1]), float(parts[3]), float(parts[5]), vid))
            continue
        if not line.strip():
            continue
        key = line.strip().lower()
        if key in _SECTIONS and not line.startswith(" "):
            section = _SECTIONS[key]
            continue
        if section is None:
            raise MilpError(f"line {lineno}: content before any section")
        if line.startswith("   ") and entries and entries[-1][0] == section:
            sec, body, start = entries[-1]
            entries[-1] = (sec, body + " " + line.strip(), start)
        else:
            entries.append((section, line.strip(), lineno))

    for key in ("hosts", "gammas"):
        if key not in header:
            raise MilpError(f"missing header comment {key!r}")
    vms = sorted(header["vms"])
    if [v for v, *_ in vms] != list(range(len(vms))):
        raise MilpError("vm header comments are not numbered 0..n-1")
    ur = [u for _, _, u, _ in vms]
    model = MilpModel(
        n_hosts=header["hosts"],
        capacity=header["capacity"],
        n_max=header["n_max"],
        gammas=header["gammas"],
        vm_ids=[vid for *_, vid in vms],
        uc=[c for _, c, _, _ in vms],
        ur=ur,
        ur_max=max(ur, default=0.0),
    )
    model.variables = model.r_vars + model.y_vars + model.x_vars + model.s_vars
    known = set(model.variables)
    seen_rows: set[str] = set()
    for section, body, lineno in entries:
        where = f"line {lineno}"
        if section == "obj":
            name, _, rest = body.partition(":")
            if name.strip() != "obj":
                raise MilpError(f"{where}: expected objective 'obj:'")
            model.objective = _parse_terms(rest, where)
        elif section == "rows":
            name, _, rest = body.partition(":")
            name = name.strip()
            m = re.match(r"^(.*?)(<=|>=|=)\s*(\S+)$", rest.strip())
            if not _NAME.match(name) or not m:
                raise MilpError(f"{where}: malformed constraint")
            if name in seen_rows:
                raise MilpError(f"{where}: duplicate constraint {name}")
            seen_rows.add(name)
            model.rows.append(Row(name, _parse_terms(m.group(1), where), m.group(2), float(m.group(3))))
        elif section == "bounds":
            m = re.match(r"^(\S+)\s*<=\s*(\S+)\s*<=\s*(\S+)$", body)
            if not m:
                raise MilpError(f"{where}: malformed bound")
            model.bounds[m.group(2)] = (float(m.group(1)), float(m.group(3)))
        elif section == "bin":
            for name in body.split():
                model.binaries.add(name)
                model.bounds[name] = (0.0, 1.0)
        elif section == "end":
            raise MilpError(f"{where}: content after End")
    used = set(model.objective) | set(model.bounds) | model.binaries
    for r in model.rows:
        used |= set(r.coeffs)
    unknown = used - known
    if unknown:
        raise MilpError(f"unknown variables: {sorted(unknown)[:5]}")
    return model


def write_lp(model: MilpModel, path) -> None:
    """Write ``model`` and verify the file reads back to the same rows."""
    text = dumps_lp(model)
    Path(path).write_text(text)
    back = loads_lp(Path(path).read_text())
    if back.matrix() != model.matrix() or back.objective != model.objective:
        raise MilpError(f"LP file {path} does not reparse to the written model")


def read_lp(path) -> MilpModel:
    return loads_lp(Path(path).read_text())


# ---------------------------------------------------------------- solutions

def read_solution_values(path) -> dict[str, float]:
    """``name value`` pairs, one per line; ``#`` starts a comment."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("=", " ").split()
        if len(parts) != 2:
            raise MilpError(f"line {lineno}: expected 'name value'")
        try:
            values[parts[0]] = float(parts[1])
        except ValueError:
            raise MilpError(f"line {lineno}: bad value {parts[1]!r}") from None
    return values


def _separator(model: MilpModel, values: dict[str, float], h: int) -> float:
    return max(
        (model.ur[v] for v in range(model.n_vms) if values.get(f"x_{v}_{h}", 0.0) == 1.0),
        default=0.0,
    )


def check_values(model: MilpModel, values: dict[str, float]) -> Mapping:
    """Round binaries, validate every row and return the encoded mapping.

    Missing variables count as 0.  A host with no population indicator set
    gets the one matching its VM count, so a listing of only the placement
    variables (or nothing at all) is accepted.  Separators are recomputed as
    the largest min-set radius on each host, the smallest value the
    separator rows accept, so a solver's continuous ``S`` never decides
    feasibility on its own.
    """
    unknown = set(values) - set(model.variables)
    if unknown:
        raise MilpError(f"solution names unknown variables: {sorted(unknown)[:5]}")
    rounded = {n: (1.0 if values.get(n, 0.0) >= 0.5 else 0.0) for n in model.binaries}
    for h in range(model.n_hosts):
        if not any(rounded[f"R_{h}_{k}"] for k in range(model.n_max + 1)):
            k = sum(rounded[f"x_{v}_{h}"] + rounded[f"y_{v}_{h}"] for v in range(model.n_vms))
            if k <= model.n_max:
                rounded[f"R_{h}_{int(k)}"] = 1.0
        rounded[f"S_{h}"] = _separator(model, rounded, h)
    for r in model.rows:
        if not r.satisfied(rounded):
            detail = ""
            if r.name.startswith("c5f_"):
                v = int(r.name.split("_")[1])
                detail = f" (VM {v + 1} placed while VM {v} is not)"
            raise MilpError(
                f"rounded solution violates {r.name}: activity {r.activity(rounded)!r} "
                f"{r.sense} {r.rhs!r}{detail}"
            )
    mapping = Mapping()
    for v in range(model.n_vms):
        for h in range(model.n_hosts):
            if rounded[f"x_{v}_{h}"] or rounded[f"y_{v}_{h}"]:
                mapping.assignments[model.vm_ids[v]] = h
    objective = math.fsum(c * rounded.get(n, 0.0) for n, c in model.objective.items())
    if round(objective) != mapping.placed_count:
        raise MilpError("objective disagrees with the decoded placement")
    return mapping


def parse_solution(path, model: MilpModel) -> Mapping:
    return check_values(model, read_solution_values(path))


def mapping_to_values(mapping: Mapping, model: MilpModel) -> dict[str, float]:
    """A model solution encoding ``mapping`` (top radii form each max set)."""
    index = {str(vid): v for v, vid in enumerate(model.vm_ids)}
    per_host: dict[int, list[int]] = {h: [] for h in range(model.n_hosts)}
    for vid, h in mapping.assignments.items():
        if str(vid) not in index:
            raise MilpError(f"VM {vid!r} is not in the model")
        per_host[h].append(index[str(vid)])
    values = {n: 0.0 for n in model.variables}
    for h, members in per_host.items():
        k = len(members)
        if k > model.n_max:
            raise MilpError(f"host {h} holds {k} VMs, above n_max {model.n_max}")
        values[f"R_{h}_{k}"] = 1.0
        ranked = sorted(members, key=lambda v: (-model.ur[v], v))
        g = model.gammas[k]
        for v in ranked[:g]:
            values[f"y_{v}_{h}"] = 1.0
        for v in ranked[g:]:
            values[f"x_{v}_{h}"] = 1.0
        values[f"S_{h}"] = max((model.ur[v] for v in ranked[g:]), default=0.0)
    return values


def dumps_solution(values: dict[str, float]) -> str:
    return "".join(f"{n} {_num(v)}\n" for n, v in values.items() if v != 0)


def mapping_to_solution(mapping: Mapping, model: MilpModel, path=None) -> dict[str, float]:
    values = mapping_to_values(mapping, model)
    if path is not None:
        Path(path).write_text(dumps_solution(values))
    return values
