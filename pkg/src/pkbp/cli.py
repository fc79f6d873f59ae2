"""Command line entry point: ``pkbp <subcommand> ...``.

All subcommands print JSON (keys sorted) or CSV to stdout unless ``--out``
is given, so a fixed seed always reproduces the same bytes.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from . import bounds as bnd
from . import harness, milp
from .core import VmRecord, make_hosts
from .gamma import DEFAULT_N_MAX, get_table
from .schedulers import ALGORITHMS, make_policy, run_policy
from .symmetrize import UtilInterval, symmetrize

log = logging.getLogger("pkbp")


def _emit(payload, out=None) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def load_intervals(path) -> list[VmRecord]:
    """VMs from a ``vm_id,uc,ur[,flavor_cores]`` CSV."""
    vms = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"vm_id", "uc", "ur"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: interval file lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                iv = UtilInterval(float(row["uc"]), float(row["ur"]))
                flavor = int(row.get("flavor_cores") or 1)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            vms.append(VmRecord(row["vm_id"], flavor, interval=iv))
    return vms


def _queue(args) -> list[VmRecord]:
    if bool(args.trace) == bool(args.intervals):
        raise ValueError("give exactly one of --trace or --intervals")
    if args.intervals:
        return load_intervals(args.intervals)
    vms = harness.load_trace(args.trace).vms()
    return [
        dataclasses.replace(vm, interval=iv)
        for vm, iv in zip(vms, harness.hot_intervals(vms, args.t_p))
    ]


def _add_instance(p, hosts=True) -> None:
    src = p.add_argument_group("queue source")
    src.add_argument("--trace", help="trace CSV; intervals come from its first --t-p minutes")
    src.add_argument("--intervals", help="CSV with vm_id,uc,ur[,flavor_cores]")
    p.add_argument("--t-p", type=float, default=40.0, help="history window in minutes (default 40)")
    if hosts:
        p.add_argument("--hosts", type=int, required=True)
    p.add_argument("--capacity", type=float, default=44.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX, help="largest host population in the gamma table")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_gamma_table(args) -> None:
    table = get_table(args.alpha, args.n_max)
    rows = [(n, g, float(gt), b) for n, g, gt, b in table.rows()]
    if args.format == "csv":
        body = [[n, g, repr(gt), repr(b)] for n, g, gt, b in rows]
        _emit(_csv_text(["N", "gamma", "gamma_tilde", "B(N, gamma)"], body), args.out)
    else:
        rows = [{"n": n, "gamma": g, "gamma_tilde": gt, "bound": b} for n, g, gt, b in rows]
        _emit({"alpha": args.alpha, "n_max": args.n_max, "rows": rows}, args.out)


def read_sample_rows(path) -> list[list[float]]:
    """Readings from a CSV with one VM per row; rows may differ in length."""
    samples = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            try:
                samples.append([float(c) for c in cells])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return samples


def cmd_symmetrize(args) -> None:
    if sum(map(bool, (args.in_path, args.samples, args.trace))) != 1:
        raise ValueError("give exactly one of --in, --samples or --trace")
    if args.trace:
        vms = harness.load_trace(args.trace).vms()
        rows = [
            [vm.id, repr(iv.uc), repr(iv.ur)]
            for vm, iv in zip(vms, harness.hot_intervals(vms, args.t_p))
        ]
        _emit(_csv_text(["vm_id", "uc", "ur"], rows), args.out)
        return
    if args.samples:
        samples = [[float(x) for x in args.samples.split(",")]]
    else:
        samples = read_sample_rows(args.in_path)
    intervals = [symmetrize(sample) for sample in samples]
    _emit(_csv_text(["uc", "ur"], [[repr(iv.uc), repr(iv.ur)] for iv in intervals]), args.out)


def cmd_schedule(args) -> None:
    queue = _queue(args)
    table = get_table(args.alpha, args.n_max)
    hosts = make_hosts(args.hosts, args.capacity, table)
    outcome = run_policy(make_policy(args.algo, args.seed), queue, hosts)
    payload = outcome.to_json()
    payload["algo"] = args.algo
    payload["host_loads"] = [h.load for h in hosts]
    _emit(payload, args.out)


def cmd_bounds(args) -> None:
    queue = _queue(args)
    table = get_table(args.alpha, args.n_max)
    payload = {
        "lower": bnd.close_radius_lb(queue, args.hosts, args.capacity, table).value,
        "upper": bnd.prefix_ub(queue, args.hosts, args.capacity, table).value,
    }
    if args.exact:
        payload["exact"] = bnd.exact_opt(queue, args.hosts, args.capacity, table).value
    _emit(payload, args.out)


def cmd_milp_export(args) -> None:
    queue = _queue(args)
    table = get_table(args.alpha, args.n_max)
    model = milp.build_model(queue, args.hosts, args.capacity, table, n_max=args.model_n_max)
    milp.write_lp(model, args.out)
    _emit({"model": args.out, "variables": len(model.variables), "constraints": len(model.rows)})


def cmd_milp_check(args) -> None:
    model = milp.read_lp(args.model)
    mapping = milp.parse_solution(args.solution, model)
    _emit(mapping.to_json(), args.out)


def cmd_synth(args) -> None:
    trace = harness.synth_trace(
        args.seed, n_vms=args.n_vms, util_model=args.model,
        n_readings=args.readings, n_groups=args.groups,
    )
    _emit(harness.dumps_trace(trace), args.out)


def cmd_experiment(args) -> None:
    config = harness.load_config(
        args.config,
        n_hosts=args.hosts, capacity=args.capacity, alpha=args.alpha, t_p=args.t_p,
        t_a=args.t_a, seed=args.seed, replicas=args.replicas, algo=args.algo,
        strategy=args.strategy, with_bounds=True if args.bounds else None,
        flavor_table=args.flavor_table,
    )
    trace = harness.load_trace(args.trace) if args.trace else None
    reports = harness.run_replicas(config, trace, util_model=args.model, n_vms=args.n_vms)
    if args.hosts_csv:
        harness_csv = "".join(
            harness.hosts_csv(r) if i == 0 else harness.hosts_csv(r).split("\n", 1)[1]
            for i, r in enumerate(reports)
        )
        Path(args.hosts_csv).write_text(harness_csv)
    payload = [r.to_json() for r in reports]
    _emit(payload[0] if len(payload) == 1 else payload, args.out)


def cmd_report(args) -> None:
    reports = []
    for path in args.reports:
        data = json.loads(Path(path).read_text())
        reports.extend(data if isinstance(data, list) else [data])
    rows = harness.summarize(reports)
    if args.format == "json":
        _emit(rows, args.out)
    else:
        _emit(harness.summary_csv(rows), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkbp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gamma-table", help="gamma(N) and its concave approximation")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gamma_table)

    p = sub.add_parser("symmetrize", help="symmetric dominating interval of readings")
    p.add_argument("--in", dest="in_path", help="CSV of readings, one VM per row")
    p.add_argument("--samples", help="comma-separated readings of one VM")
    p.add_argument("--trace", help="trace CSV; uses its first --t-p minutes")
    p.add_argument("--t-p", type=float, default=40.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_symmetrize)

    p = sub.add_parser("schedule", help="run one online policy over a queue")
    _add_instance(p)
    p.add_argument("--algo", choices=ALGORITHMS, default="close-radius-fit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("bounds", help="lower/upper (and exact) bounds on the placeable prefix")
    _add_instance(p)
    p.add_argument("--exact", action="store_true", help="also run the exhaustive search (tiny instances)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("milp-export", help="write the MILP as an LP file")
    _add_instance(p)
    p.add_argument("--model-n-max", type=int, default=None, help="population cap in the model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_milp_export)

    p = sub.add_parser("milp-check", help="validate a solver solution against an LP file")
    p.add_argument("--model", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_milp_check)

    p = sub.add_parser("synth", help="generate a synthetic trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-vms", type=int, default=2000)
    p.add_argument("--model", choices=harness.UTIL_MODELS, default="uniform")
    p.add_argument("--readings", type=int, default=48)
    p.add_argument("--groups", type=int, default=24)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("experiment", help="hot / cold / semi-cold / flavor experiment")
    p.add_argument("--config", help=f"JSON config (default ${harness.CONFIG_ENV})")
    p.add_argument("--trace", help="trace CSV; synthetic traces per replica when omitted")
    p.add_argument("--model", choices=harness.UTIL_MODELS, default="uniform")
    p.add_argument("--n-vms", type=int, default=2000)
    p.add_argument("--hosts", type=int)
    p.add_argument("--capacity", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--t-p", type=float)
    p.add_argument("--t-a", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--strategy", choices=harness.STRATEGIES)
    p.add_argument("--flavor-table", help="flavor = range-class file for cold start")
    p.add_argument("--bounds", action="store_true", help="also compute offline bounds (hot start)")
    p.add_argument("--hosts-csv", help="write per-host rows here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="aggregate experiment JSON into a table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"pkbp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
