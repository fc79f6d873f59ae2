"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
import random
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest, ttest_rel

from pkbp.bounds import best_partition_overhead, close_radius_lb, exact_opt, prefix_ub
from pkbp.core import HostState, make_vms, top_radius_sum
from pkbp.gamma import GammaTable, bound_b, bound_b_exact, gamma_values, get_table, is_concave
from pkbp.harness import ALGORITHMS, ExperimentConfig, run_experiment, synth_trace
from pkbp.milp import build_model, check_values, read_lp, write_lp
from pkbp.symmetrize import center_shift, dominates, symmetric_sample, symmetrize


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


def test_criterion_01_gamma_machinery(verdict):
    start = time.perf_counter()
    exact = bound_b_exact(10, 4) == Fraction(176, 1024)
    all_reserved = all(
        bound_b_exact(n, n) == Fraction(1, 2**n) and bound_b(n, n) == pytest.approx(2.0**-n, rel=1e-12)
        for n in range(1, 61)
    )
    monotone = all(
        all(b >= a for a, b in zip(values, values[1:]))
        for values in (gamma_values(alpha, 200) for alpha in (0.01, 0.05, 0.1))
    )
    elapsed = time.perf_counter() - start
    verdict(1, exact and all_reserved and monotone and elapsed < 5,
            f"B(10,4)=176/1024 {exact}, B(n,n)=2^-n {all_reserved}, monotone {monotone}, {elapsed:.2f}s")


def test_criterion_02_worked_example(verdict):
    table = GammaTable.from_gamma([0, 1, 2, 2, 2])
    host = HostState(5.0, table)
    vms = make_vms([(1.4, 0.5), (0.7, 0.6), (0.4, 0.4), (0.7, 0.3)])
    placed = all(host.try_place(vm) for vm in vms)
    max_util = math.fsum(vm.uc + vm.ur for vm in vms)
    saving = (max_util - host.load) / max_util
    ok = placed and abs(host.load - 4.3) <= 1e-9 and abs(max_util - 5.0) <= 1e-12 and round(saving, 2) == 0.14
    verdict(2, ok, f"load {host.load!r}, max-utilization {max_util!r}, saving {saving:.1%}")


def mirror_dominates(sample, shift):
    mid = (sample.min() + sample.max()) / 2
    return dominates(2 * (mid + shift) - sample, sample)


def test_criterion_03_symmetrizer(verdict):
    rng = np.random.default_rng(2024)
    regimes = {
        "right": lambda n: rng.beta(5, 1, n),
        "left": lambda n: rng.beta(1, 5, n),
        "flat": lambda n: rng.uniform(0, 1, n),
    }
    start = time.perf_counter()
    failures = []
    minimal_checked = 0
    for i in range(1000):
        name = list(regimes)[i % 3]
        size = int(rng.integers(1, 201))
        sample = np.round(regimes[name](size) * rng.choice([1, 2, 4]), 4)
        iv = symmetrize(sample)
        if iv.uc + iv.ur != sample.max():
            failures.append((i, "max"))
        if not dominates(symmetric_sample(sample), sample, atol=1e-9):
            failures.append((i, "dominance"))
        s = center_shift(sample)
        if s > 1e-6:
            minimal_checked += 1
            if mirror_dominates(sample, s - 1e-6):
                failures.append((i, "minimality"))
    elapsed = time.perf_counter() - start
    verdict(3, not failures and elapsed < 10,
            f"{len(failures)} failures in 1000 samples ({minimal_checked} with a shift), {elapsed:.2f}s")


def random_table(rng, n_max=16):
    gamma = [0]
    for n in range(1, n_max + 1):
        gamma.append(min(n, gamma[-1] + rng.choice([0, 0, 1, 1, 2])))
    return GammaTable.from_gamma(gamma)


def test_criterion_04_bound_sandwich(verdict):
    rng = random.Random(7)
    tables = [get_table(a, 16) for a in (0.05, 0.2, 0.4)] + [random_table(rng) for _ in range(20)]
    start = time.perf_counter()
    violations = binding = 0
    for _ in range(1000):
        table = rng.choice(tables)
        n = rng.randint(1, 10)
        q = make_vms([(u := rng.uniform(0, 1.5), rng.uniform(0, u)) for _ in range(n)])
        h, c = rng.randint(1, 3), rng.uniform(0.5, 5)
        lb = close_radius_lb(q, h, c, table).value
        ex = exact_opt(q, h, c, table).value
        ub = prefix_ub(q, h, c, table).value
        violations += not (lb <= ex <= ub)
        binding += ex < n
    elapsed = time.perf_counter() - start
    verdict(4, violations == 0 and elapsed < 120,
            f"{violations} violations in 1000 instances ({binding} capacity-bound), {elapsed:.1f}s")


def test_criterion_05_concave_approximation(verdict):
    eps = Fraction(1, 64)
    problems = []
    for alpha in (0.01, 0.05, 0.1):
        table = GammaTable.build(alpha, 256)
        f, g = list(table.gamma_tilde), table.gamma
        if any(a > b for a, b in zip(f, g)):
            problems.append((alpha, "above gamma"))
        if not is_concave(f):
            problems.append((alpha, "not concave"))
        for n in range(len(f)):
            bumped = list(f)
            bumped[n] += eps
            if bumped[n] <= g[n] and is_concave(bumped):
                problems.append((alpha, f"not maximal at {n}"))
                break
    verdict(5, not problems, f"alpha in (0.01, 0.05, 0.1), N_max=256, problems: {problems or 'none'}")


def test_criterion_06_lemma_suites(verdict):
    rng = random.Random(11)
    lemma1_bad = 0
    for _ in range(500):
        n = rng.randint(1, 5)
        radii = [rng.random() for _ in range(2 * n)]
        gamma = rng.randint(0, n)
        best, _ = best_partition_overhead(radii, gamma)
        ordered = sorted(radii, reverse=True)
        split = top_radius_sum(ordered[:n], gamma) + top_radius_sum(ordered[n:], gamma)
        lemma1_bad += not math.isclose(split, best, abs_tol=1e-12)
    lemma2_bad = 0
    for _ in range(500):
        n = rng.randint(1, 40)
        gamma = rng.randint(1, n)
        budget = rng.uniform(0.1, 10.0)
        raw = [rng.random() for _ in range(n)]
        radii = [r * budget / top_radius_sum(raw, gamma) for r in raw]
        min_set = math.fsum(sorted(radii, reverse=True)[gamma:])
        equal = (n - gamma) * budget / gamma
        # equal radii also put the host exactly at capacity
        attained = math.isclose(top_radius_sum([budget / gamma] * n, gamma), budget, rel_tol=1e-12)
        lemma2_bad += not (min_set <= equal + 1e-9 and attained)
    verdict(6, lemma1_bad == 0 and lemma2_bad == 0,
            f"sorted split optimal {500 - lemma1_bad}/500, equal radii optimal {500 - lemma2_bad}/500")


@pytest.mark.slow
def test_criterion_07_heuristic_ordering(verdict):
    placed = {a: [] for a in ALGORITHMS}
    gaps = []
    for seed in range(30):
        trace = synth_trace(seed, n_vms=1600, util_model="two-cluster")
        for algo in ALGORITHMS:
            cfg = ExperimentConfig(n_hosts=20, capacity=44, alpha=0.05, algo=algo, seed=seed,
                                   with_bounds=algo == "first-fit")
            report = run_experiment(cfg, trace)
            placed[algo].append(report.placed_count)
            if report.upper is not None:
                gaps.append(report.gaps["lower_to_upper"])
    crf, ff, rf = (np.array(placed[a]) for a in ("close-radius-fit", "first-fit", "random-fit"))
    p_crf_ff = ttest_rel(crf, ff, alternative="greater").pvalue
    p_ff_rf = ttest_rel(ff, rf, alternative="greater").pvalue
    ordered = crf.mean() > ff.mean() > rf.mean()
    ok = ordered and p_crf_ff < 0.05 and p_ff_rf < 0.05 and max(gaps) <= 5.0
    verdict(7, ok,
            f"V_ph CRF {crf.mean() / 20:.2f} > FF {ff.mean() / 20:.2f} > RF {rf.mean() / 20:.2f}, "
            f"p={p_crf_ff:.1e}/{p_ff_rf:.1e}, LB-UB gap mean {np.mean(gaps):.2f}% max {max(gaps):.2f}%")


@pytest.mark.slow
def test_criterion_08_hotspot_guarantee(verdict):
    details, ok = [], True
    for model in ("uniform", "two-cluster", "skewed-high"):
        events = ticks = 0
        for seed in range(30):
            report = run_experiment(ExperimentConfig(alpha=0.05), synth_trace(seed, 1600, util_model=model))
            events += report.hotspot_events
            ticks += report.host_ticks
        upper = binomtest(events, ticks).proportion_ci(0.95, method="exact").high
        ok &= upper <= 0.05
        details.append(f"{model} {events}/{ticks} (95% upper {upper:.4f})")
    verdict(8, ok, "; ".join(details))


def test_criterion_09_milp_roundtrip(verdict, tmp_path):
    from scipy import optimize

    rng = random.Random(3)
    same = True
    for i in range(10):
        q = make_vms([(u := rng.uniform(0.1, 1.5), rng.uniform(0, u)) for _ in range(rng.randint(0, 8))])
        model = build_model(q, rng.randint(1, 3), rng.uniform(1, 5), get_table(0.05, 32))
        write_lp(model, tmp_path / f"{i}.lp")
        back = read_lp(tmp_path / f"{i}.lp")
        same &= back.matrix() == model.matrix() and back.objective == model.objective
    vms = make_vms([(1.4, 0.5), (0.7, 0.6), (0.4, 0.4), (0.7, 0.3)])
    results = []
    for table in (GammaTable.from_gamma([0, 1, 2, 2, 2]), get_table(0.05, 16)):
        model = build_model(vms, 1, 5.0, table)
        c, a, lo, hi, vlo, vhi, integ = model.to_arrays()
        res = optimize.milp(-c, constraints=[optimize.LinearConstraint(a, lo, hi)],
                            bounds=optimize.Bounds(vlo, vhi), integrality=integ)
        mapping = check_values(model, dict(zip(model.variables, res.x)))
        results.append((round(-res.fun), mapping.placed_count, exact_opt(vms, 1, 5.0, table).value))
    ok = same and all(r == (4, 4, 4) for r in results)
    verdict(9, ok, f"round-trip identical {same}; solver/validated/exact on the example {results}")


CLI_RUNS = [
    ["synth", "--seed", "5", "--n-vms", "300", "--model", "two-cluster", "--out", "trace.csv"],
    ["gamma-table", "--alpha", "0.05", "--n-max", "512", "--out", "gamma.csv"],
    ["gamma-table", "--alpha", "0.1", "--n-max", "32", "--format", "json"],
    ["symmetrize", "--in", "samples.csv", "--out", "sym.csv"],
    ["symmetrize", "--trace", "trace.csv"],
    ["schedule", "--trace", "trace.csv", "--hosts", "3", "--algo", "random-fit", "--seed", "4"],
    ["schedule", "--trace", "trace.csv", "--hosts", "3", "--algo", "close-radius-fit"],
    ["bounds", "--trace", "trace.csv", "--hosts", "3"],
    ["milp-export", "--trace", "trace.csv", "--hosts", "1", "--capacity", "3", "--out", "trace.lp"],
    ["milp-export", "--intervals", "iv.csv", "--hosts", "2", "--capacity", "5", "--out", "model.lp"],
    ["milp-check", "--model", "model.lp", "--solution", "sol.txt"],
    ["experiment", "--trace", "trace.csv", "--hosts", "3", "--algo", "random-fit", "--seed", "2",
     "--bounds", "--out", "report.json", "--hosts-csv", "hosts.csv"],
    ["experiment", "--hosts", "2", "--replicas", "2", "--n-vms", "200", "--strategy", "semi-cold",
     "--t-a", "10", "--seed", "8", "--out", "semi.json"],
    ["report", "report.json", "semi.json"],
]


def run_cli_session(workdir: Path) -> dict:
    (workdir / "iv.csv").write_text("vm_id,uc,ur\na,1.4,0.5\nb,0.7,0.6\nc,0.4,0.4\nd,0.7,0.3\n")
    (workdir / "samples.csv").write_text("0.2,0.9,1.0\n0.5\n0.1,0.3,0.2,0.4,0.35\n")
    (workdir / "sol.txt").write_text("y_0_0 1\ny_1_0 1\ny_2_0 1\ny_3_0 1\n")
    outputs = {}
    for i, argv in enumerate(CLI_RUNS):
        proc = subprocess.run([sys.executable, "-m", "pkbp.cli", *argv], cwd=workdir,
                              capture_output=True, timeout=300)
        assert proc.returncode == 0, (argv, proc.stderr.decode())
        outputs[f"stdout-{i}"] = proc.stdout
    for path in sorted(workdir.iterdir()):
        outputs[path.name] = path.read_bytes()
    return outputs


def test_criterion_10_cli_determinism(verdict, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    a, b = run_cli_session(first), run_cli_session(second)
    differing = sorted(k for k in a if a[k] != b.get(k))
    verdict(10, not differing and a.keys() == b.keys(),
            f"{len(CLI_RUNS)} invocations, {len(a)} artifacts compared, differing: {differing or 'none'}")
