"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) and
then asserts, so a failing criterion shows up both ways.
"""

import dataclasses
import time
from collections import defaultdict

import numpy as np
import pytest

from conftest import record
from uplinkslice.allocator import (
    AllocMethod,
    AllocationProblem,
    allocate_baseline,
    brute_force_oracle,
    kkt_certificate,
    objective,
    water_fill,
)
from uplinkslice.cli import main as cli_main
from uplinkslice.game import (
    GameParams,
    case_inequalities_hold,
    enumerate_pure_nash,
    n1_star,
    n2_star,
    solve_equilibrium_theorem,
)
from uplinkslice.reliability import (
    RetransParams,
    failure_prob_exact_tau3,
    failure_prob_light_traffic,
    failure_prob_monte_carlo,
    failure_prob_per_region,
    light_traffic_coefficient,
)
from uplinkslice.simulator import STRATEGIES, SimConfig, SplitStrategy, run_batch

SEEDS = (1, 2, 3)


def test_criterion_1_tau3_coefficient_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for p in np.linspace(0.0, 1.0, 21):
        p = float(p)
        worst = max(worst, abs(light_traffic_coefficient(p, 3) - (1 - p * p + p**3)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 1.0
    record("1", ok, f"max |coef - (1-p^2+p^3)| = {worst:.2e} over 21 p values; {dt:.3f}s")
    assert ok


def test_criterion_2_monte_carlo_brackets_exact():
    t0 = time.perf_counter()
    hits = 0
    cells = []
    for rt in (0.01, 0.05, 0.1):
        for p in (0.1, 0.3, 0.7):
            params = RetransParams(rt, p, 3)
            est = failure_prob_monte_carlo(params, 10**7, seed=1000 + len(cells))
            exact = failure_prob_exact_tau3(params)
            z = (est.estimate - exact) / est.std_error
            hits += est.brackets(exact)
            cells.append(f"({rt},{p}):z={z:+.2f}")
    dt = time.perf_counter() - t0
    ok = hits >= 8 and dt < 120
    record("2", ok, f"{hits}/9 cells within 3 SE at 1e7 trials; {dt:.1f}s; " + " ".join(cells))
    assert hits >= 8
    assert dt < 120


def test_criterion_3_monotone_in_load():
    t0 = time.perf_counter()
    bad = []
    for p in np.round(np.arange(0.1, 0.95, 0.1), 10):
        vals = [failure_prob_exact_tau3(RetransParams(float(rt), float(p), 3)) for rt in np.arange(0, 51) / 100]
        if any(b < a for a, b in zip(vals, vals[1:])):
            bad.append(float(p))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 1.0
    record("3", ok, f"nondecreasing on 0..0.5 for p=0.1..0.9 (violations at p={bad}); {dt:.3f}s")
    assert ok


def _random_game(rng) -> GameParams:
    N = int(rng.integers(1, 21))
    c = float(rng.uniform(1.0, 5.0))
    return GameParams(
        rho=float(10 ** rng.uniform(-4, -0.5)),
        p=float(rng.uniform(0.0, 1.0)),
        tau=int(rng.choice([2, 3, 8])),
        N=N,
        epsilon=float(10 ** rng.uniform(-4, -1)),
        b=float(rng.uniform(0.05, 0.95)),
        a=float(rng.uniform(0.05, 0.95)),
        c=c,
        r=float(rng.uniform(0.0, 1.3 * N)) * c,
    )


def test_criterion_4_theorem_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = inequality_fail = forbidden = 0
    cases = defaultdict(int)
    for _ in range(200):
        g = _random_game(rng)
        res = solve_equilibrium_theorem(g)
        cases[res.case.value] += 1
        if set(enumerate_pure_nash(g)) != set(res.equilibria):
            mismatches += 1
        if not case_inequalities_hold(res, g.N):
            inequality_fail += 1
        k = n1_star(g)
        if k is not None:
            room = g.N - k
            if n2_star(0, g) <= room and n2_star(k, g) > room:
                forbidden += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and inequality_fail == 0 and forbidden == 0 and dt < 30
    record("4", ok, f"200 configs: {mismatches} set mismatches, {inequality_fail} case-inequality failures, "
                    f"{forbidden} forbidden combinations; cases {dict(sorted(cases.items()))}; {dt:.1f}s")
    assert ok


def _structure_violations(prob, x) -> int:
    z, r = prob.z, prob.r
    tol = 1e-9 * max(1.0, float(r.max()))
    full = np.abs(x - r) <= tol
    empty = x <= tol
    act = np.flatnonzero(r > tol)
    bad = 0
    for i in act:
        for j in act:
            if z[i] + r[i] >= z[j] + r[j] and full[i] and not full[j]:
                bad += 1
            if z[i] >= z[j] and empty[j] and not empty[i]:
                bad += 1
    inner = np.zeros(r.size, bool)
    inner[act] = True
    inner &= ~full & ~empty
    lv = (x + z)[inner]
    if lv.size > 1 and lv.max() - lv.min() > 1e-9 * max(1.0, lv.max()):
        bad += 1
    return bad


def test_criterion_5_water_filling_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_stat = worst_comp = 0.0
    sign_bad = structure_bad = oracle_bad = oracle_n = 0
    worst_gap = -np.inf
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        z = rng.uniform(0, 100, m)
        r = rng.uniform(0, 100, m)
        prob = AllocationProblem(z, r, float(rng.uniform()) * float(r.sum()))
        x = water_fill(prob).x
        cert = kkt_certificate(prob, x)
        worst_stat = max(worst_stat, cert.stationarity_residual)
        worst_comp = max(worst_comp, cert.complementarity_residual)
        sign_bad += cert.sign_violation > 1e-9
        structure_bad += _structure_violations(prob, x)
        if m <= 6:
            oracle_n += 1
            oracle = brute_force_oracle(prob, grid_step=float(r.max()) / 4)
            gap = objective(prob, x) - objective(prob, oracle.x)
            worst_gap = max(worst_gap, gap)
            oracle_bad += gap > 1e-6
    dt = time.perf_counter() - t0
    ok = worst_stat <= 1e-9 and worst_comp <= 1e-9 and not sign_bad and not structure_bad and not oracle_bad
    ok = ok and dt < 300
    record("5", ok, f"1000 instances: max stationarity {worst_stat:.1e}, complementarity {worst_comp:.1e}, "
                    f"{sign_bad} sign violations, {structure_bad} structure violations; "
                    f"{oracle_n} oracle checks, max wf-oracle gap {worst_gap:.1e}; {dt:.1f}s")
    assert ok


def test_criterion_6_max_min_is_water_fill():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(500):
        m = int(rng.integers(1, 11))
        r = rng.uniform(0, 100, m)
        prob = AllocationProblem(np.zeros(m), r, float(rng.uniform()) * float(r.sum()))
        diff = np.abs(allocate_baseline(AllocMethod.MAX_MIN, prob).x - water_fill(prob).x).max()
        worst = max(worst, float(diff))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 10
    record("6", ok, f"500 instances: max |max_min - water_fill(z=0)| = {worst:.1e}; {dt:.2f}s")
    assert ok


def test_criterion_7_urllc_feasibility():
    t0 = time.perf_counter()
    at30 = failure_prob_per_region(6.5e-4, 0.3, 8, 30)
    at29 = failure_prob_per_region(6.5e-4, 0.3, 8, 29)
    k = n1_star(GameParams(rho=6.5e-4, p=0.3, tau=8, N=60, epsilon=1e-5, b=0.8, a=0.5, c=3.2e4, r=1.2e6))
    params = RetransParams(0.01, 0.3, 8)
    mc = failure_prob_monte_carlo(params, 10**6, seed=77)
    lt = failure_prob_light_traffic(params)
    rel = abs(mc.estimate - lt) / lt
    dt = time.perf_counter() - t0
    ok = at30 <= 1e-5 and (at29 > 1e-5 or k == 30) and rel <= 0.15 and dt < 60
    record("7", ok, f"P(E_30)={at30:.3e}, P(E_29)={at29:.3e}, n1*={k}; MC {mc.estimate:.5f} +- {mc.std_error:.1e} "
                    f"vs light traffic {lt:.5f} ({rel:.1%} apart); {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------- criterion 8

FRAMES = 100_000


@pytest.fixture(scope="module")
def figure_runs():
    alloc_cfgs = [SimConfig(frames=FRAMES, allocator=alloc, m=m, seed=s)
                  for m in (4, 8, 12) for alloc in AllocMethod for s in SEEDS]
    strat_cfgs = [SimConfig(frames=FRAMES, split_strategy=st, a=a, seed=s)
                  for a in (0.2, 0.5, 0.8) for st in STRATEGIES for s in SEEDS]

    def key(c):
        return tuple(dataclasses.asdict(c).items())

    seen = {}
    for c in alloc_cfgs + strat_cfgs:
        seen.setdefault(key(c), c)
    t0 = time.perf_counter()
    reports = run_batch(list(seen.values()))
    dt = time.perf_counter() - t0
    by_key = dict(zip(seen, reports))

    return {
        "alloc": [(c, by_key[key(c)]) for c in alloc_cfgs],
        "strategy": [(c, by_key[key(c)]) for c in strat_cfgs],
        "runs": len(seen),
        "seconds": dt,
    }


def _means(pairs, key, metric):
    acc = defaultdict(list)
    for c, rep in pairs:
        acc[key(c)].append(getattr(rep, metric))
    return {k: float(np.mean(v)) for k, v in acc.items()}


@pytest.mark.slow
def test_criterion_8a_water_filling_fairest(figure_runs):
    pairs = figure_runs["alloc"]
    var = _means(pairs, lambda c: (c.m, c.allocator.value), "sample_variance")
    jain = _means(pairs, lambda c: (c.m, c.allocator.value), "jain_index")
    notes, ok = [], True
    for m in (4, 8, 12):
        v = {a.value: var[(m, a.value)] for a in AllocMethod}
        j = {a.value: jain[(m, a.value)] for a in AllocMethod}
        best_v = min(v, key=v.get)
        best_j = max(j, key=j.get)
        wf = AllocMethod.WATER_FILLING.value
        ok &= v[wf] == min(v.values()) and j[wf] == max(j.values())
        notes.append(f"m={m}: lowest variance {best_v} ({v[best_v]:.3g}), highest Jain {best_j} ({j[best_j]:.9f})")
    dt = figure_runs["seconds"]
    ok = ok and dt < 900
    record("8a", ok, "; ".join(notes) + f"; batch of {figure_runs['runs']} runs x {FRAMES} frames took {dt:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_8b_smallest_first_lowest_embb_loss(figure_runs):
    pairs = figure_runs["alloc"]
    loss = _means(pairs, lambda c: (c.m, c.allocator.value), "embb_loss_prob")
    notes, ok = [], True
    for m in (4, 8, 12):
        ranked = sorted(AllocMethod, key=lambda a: loss[(m, a.value)])
        ok &= ranked[0] is AllocMethod.SMALLEST_FIRST
        notes.append(f"m={m}: " + " < ".join(f"{a.value}={loss[(m, a.value)]:.5f}" for a in ranked))
    record("8b", ok, "; ".join(notes))
    assert ok


@pytest.mark.slow
def test_criterion_8c_social_optimum_highest_payoff(figure_runs):
    pairs = figure_runs["strategy"]
    pay = _means(pairs, lambda c: (c.a, c.split_strategy.value), "social_payoff")
    notes, ok = [], True
    for a in (0.2, 0.5, 0.8):
        vals = {s.value: pay[(a, s.value)] for s in STRATEGIES}
        best = vals[SplitStrategy.SOCIAL_OPT.value]
        ok &= all(best >= v for v in vals.values())
        notes.append(f"a={a}: " + ", ".join(f"{k}={v:.4f}" for k, v in vals.items()))
    record("8c", ok, "; ".join(notes))
    assert ok


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = {
        "simulate": ["simulate", "--frames", "300", "--sweep", "allocator=" + ",".join(a.value for a in AllocMethod),
                     "--sweep", "m=4,8,12", "--sweep", "split_strategy=SOCIAL_OPT,RANDOM",
                     "--seed", "1", "--seed", "2", "--seed", "3", "--seed", str(2**64 - 1)],
        "reliability": ["reliability", "--set", "trials=300000", "--sweep", "p=0.1,0.7", "--seed", "5"],
        "game": ["game", "--sweep", "a=0.2,0.5,0.8"],
    }
    same, detail = True, []
    for name, argv in runs.items():
        blobs = []
        for i, workers in enumerate((1, 1, 4)):
            out = tmp_path / f"{name}{i}.csv"
            assert cli_main(argv + ["--workers", str(workers), "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        rows = blobs[0].count(b"\n") - 1
        identical = blobs[0] == blobs[1] == blobs[2]
        same &= identical
        detail.append(f"{name}: {rows} rows identical across 2 runs and workers 1/4 = {identical}")
    dt = time.perf_counter() - t0
    ok = same and dt < 120
    record("9", ok, "; ".join(detail) + f"; {dt:.1f}s")
    assert ok
