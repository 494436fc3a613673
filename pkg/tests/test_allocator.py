import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from uplinkslice.allocator import (
    BASELINES,
    AllocMethod,
    AllocationProblem,
    InfeasibleAllocationError,
    _allocate_core,
    _greedy_core,
    allocate,
    allocate_baseline,
    brute_force_oracle,
    greedy_rows,
    jain_index,
    kkt_certificate,
    level_fill_rows,
    objective,
    sample_variance,
    water_fill,
)


def wf(z, r, L):
    return water_fill(AllocationProblem(np.array(z, float), np.array(r, float), L)).x


def test_objective_examples():
    assert objective(AllocationProblem([0, 0], [5, 5], 4), [2, 2]) == 0.0
    assert objective(AllocationProblem([0, 3], [10, 10], 4), [3.5, 0.5]) == 0.0
    assert objective(AllocationProblem([4.0], [5.0], 2.0), [2.0]) == 0.0


def test_water_fill_examples():
    np.testing.assert_allclose(wf([1, 1, 1], [5, 5, 5], 6), [2, 2, 2])
    np.testing.assert_allclose(wf([0, 3], [10, 10], 4), [3.5, 0.5])
    np.testing.assert_allclose(wf([0, 0, 7], [1, 6, 6], 5), [1, 4, 0])
    np.testing.assert_allclose(wf([3, 1], [2, 2], 0), [0, 0])


def test_water_fill_skips_idle_users():
    np.testing.assert_allclose(wf([0, 0, 0], [0, 4, 4], 6), [0, 3, 3])


def test_infeasible_budget():
    with pytest.raises(InfeasibleAllocationError):
        wf([0, 0], [1, 1], 3)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        AllocationProblem([0, -1], [1, 1], 1)
    with pytest.raises(ValueError):
        AllocationProblem([0, 1], [1, 1], -1)
    with pytest.raises(ValueError):
        AllocationProblem([0], [1, 1], 1)


def test_kkt_examples():
    prob = AllocationProblem([0, 0], [5, 5], 4)
    cert = kkt_certificate(prob, [2, 2])
    assert cert.lam == pytest.approx(0.0)
    assert np.all(cert.mu == 0) and np.all(cert.omega == 0)
    assert cert.certifies()
    # perturbing two interior coordinates leaves a residual
    prob = AllocationProblem([0, 1, 2, 3], [10, 10, 10, 10], 10)
    x = water_fill(prob).x.copy()
    x[0] += 0.3
    x[1] -= 0.3
    bad = kkt_certificate(prob, x)
    assert bad.stationarity_residual > 0.1
    assert not bad.certifies()


def test_kkt_boundary_only_reports_no_lambda():
    prob = AllocationProblem([0, 10], [2, 3], 2)
    x = water_fill(prob).x
    np.testing.assert_allclose(x, [2, 0])
    cert = kkt_certificate(prob, x)
    assert cert.lam is None
    assert cert.certifies()


def test_oracle_examples():
    np.testing.assert_allclose(brute_force_oracle(AllocationProblem([0, 0], [5, 5], 4), 0.5).x, [2, 2])
    np.testing.assert_allclose(brute_force_oracle(AllocationProblem([0, 4], [5, 0], 3), 0.5).x, [3, 0])
    with pytest.raises(ValueError):
        brute_force_oracle(AllocationProblem(np.zeros(7), np.ones(7), 1), 0.5)


def test_baseline_examples():
    prob = AllocationProblem([0, 0, 0], [2, 4, 10], 9)
    np.testing.assert_allclose(allocate_baseline(AllocMethod.MAX_MIN, prob).x, [2, 3.5, 3.5])
    prob = AllocationProblem([0, 0, 0], [2, 4, 10], 5)
    np.testing.assert_allclose(allocate_baseline(AllocMethod.SMALLEST_FIRST, prob).x, [2, 3, 0])
    np.testing.assert_allclose(allocate_baseline(AllocMethod.LARGEST_FIRST, prob).x, [0, 0, 5])
    # step 1: 5/3 each capped at r; step 2: largest residual first
    np.testing.assert_allclose(allocate_baseline(AllocMethod.TWO_STEP, prob).x, [5 / 3, 5 / 3, 5 / 3])
    prob = AllocationProblem([0, 0, 0], [1, 4, 10], 6)
    np.testing.assert_allclose(allocate_baseline(AllocMethod.TWO_STEP, prob).x, [1, 2, 3])


def test_random_order_needs_rng():
    prob = AllocationProblem([0, 0], [1, 1], 1)
    with pytest.raises(ValueError):
        allocate(AllocMethod.RANDOM_ORDER, prob)
    with pytest.raises(ValueError):
        allocate_baseline(AllocMethod.WATER_FILLING, prob)
    x = allocate(AllocMethod.RANDOM_ORDER, prob, np.random.default_rng(0)).x
    assert sorted(x) == [0.0, 1.0]


def test_fairness_metrics():
    assert sample_variance([3, 3, 3]) == 0.0
    assert jain_index([3, 3, 3]) == 1.0
    assert jain_index([1, 0]) == 0.5
    assert jain_index([0, 0]) == 1.0
    with pytest.raises(ValueError):
        sample_variance([1.0])
    with pytest.raises(ValueError):
        jain_index([-1.0, 1.0])


def test_fairness_metrics_against_naive():
    v = np.random.default_rng(1).uniform(1e9, 1e9 + 1e4, size=12)
    naive_jain = v.sum() ** 2 / (v.size * (v**2).sum())
    assert jain_index(v) == pytest.approx(naive_jain, rel=1e-9)
    assert sample_variance(v) == pytest.approx(np.var(v, ddof=1), rel=1e-9)


problems = st.integers(1, 8).flatmap(
    lambda m: st.tuples(
        st.lists(st.floats(0, 100), min_size=m, max_size=m),
        st.lists(st.floats(0, 100), min_size=m, max_size=m),
        st.floats(0, 1),
    )
)


def to_problem(t):
    z, r, u = t
    return AllocationProblem(np.array(z), np.array(r), u * float(np.sum(r)))


@settings(max_examples=300, deadline=None)
@given(problems)
def test_water_fill_feasible_and_certified(t):
    prob = to_problem(t)
    x = water_fill(prob).x
    tol = 1e-12 * max(1.0, float(prob.r.sum()))
    assert np.all(x >= 0) and np.all(x <= prob.r)
    assert abs(x.sum() - prob.L) <= max(tol, 1e-9)
    cert = kkt_certificate(prob, x)
    assert cert.certifies(), cert


@settings(max_examples=200, deadline=None)
@given(problems)
def test_water_fill_structure(t):
    prob = to_problem(t)
    x = water_fill(prob).x
    z, r = prob.z, prob.r
    tol = 1e-9 * max(1.0, float(r.max()))
    full = np.abs(x - r) <= tol
    empty = x <= tol
    # a request below tolerance sits on both bounds at once
    act = r > tol
    for i in np.flatnonzero(act):
        for j in np.flatnonzero(act):
            if z[i] + r[i] >= z[j] + r[j] and full[i]:
                assert full[j]
            if z[i] >= z[j] and empty[j]:
                assert empty[i]
    inner = act & ~full & ~empty
    levels = (x + z)[inner]
    if levels.size > 1:
        assert levels.max() - levels.min() <= 1e-9 * max(1.0, levels.max())


@settings(max_examples=100, deadline=None)
@given(problems, st.randoms(use_true_random=False))
def test_water_fill_permutation_invariant(t, rnd):
    prob = to_problem(t)
    perm = list(range(prob.m))
    rnd.shuffle(perm)
    x = water_fill(prob).x
    xp = water_fill(AllocationProblem(prob.z[perm], prob.r[perm], prob.L)).x
    np.testing.assert_allclose(xp, x[perm], atol=1e-9 * max(1.0, prob.L))


@settings(max_examples=60, deadline=None)
@given(problems)
def test_water_fill_beats_oracle(t):
    prob = to_problem(t)
    assume(prob.active.size <= 5)
    step = max(1.0, float(prob.r.max(initial=0.0)) / 4)
    oracle = brute_force_oracle(prob, step)
    assert objective(prob, water_fill(prob).x) <= objective(prob, oracle.x) + 1e-6


@settings(max_examples=150, deadline=None)
@given(problems)
def test_max_min_is_water_fill_without_history(t):
    z, r, u = t
    prob = AllocationProblem(np.zeros(len(r)), np.array(r), u * float(np.sum(r)))
    np.testing.assert_allclose(allocate_baseline(AllocMethod.MAX_MIN, prob).x, water_fill(prob).x,
                               rtol=0, atol=1e-9)


@settings(max_examples=150, deadline=None)
@given(problems, st.sampled_from(BASELINES))
def test_baselines_feasible(t, method):
    prob = to_problem(t)
    x = allocate(method, prob, np.random.default_rng(0)).x
    assert np.all(x >= 0) and np.all(x <= prob.r)
    assert x.sum() == pytest.approx(prob.L, abs=1e-9 * max(1.0, prob.L))


@settings(max_examples=150, deadline=None)
@given(problems, st.sampled_from(BASELINES))
def test_water_fill_never_worse_than_baselines(t, method):
    prob = to_problem(t)
    x_wf = water_fill(prob).x
    x_b = allocate(method, prob, np.random.default_rng(0)).x
    assert objective(prob, x_wf) <= objective(prob, x_b) + 1e-9 * max(1.0, objective(prob, x_b))


def _rows(rng, rows, m):
    z = rng.uniform(0, 100, size=(rows, m)) * (rng.random((rows, m)) < 0.9)
    r = rng.uniform(0, 100, size=(rows, m)) * (rng.random((rows, m)) < 0.8)
    L = rng.random(rows) * r.sum(axis=1)
    return z, r, L


@pytest.mark.parametrize("m", [1, 2, 5, 8, 12])
def test_level_fill_rows_matches_reference(m):
    rng = np.random.default_rng(m)
    z, r, L = _rows(rng, 300, m)
    x = level_fill_rows(z, r, L)
    for i in range(300):
        ref = np.asarray(_allocate_core(AllocMethod.WATER_FILLING, z[i].tolist(), r[i].tolist(), L[i]))
        np.testing.assert_allclose(x[i], ref, rtol=1e-11, atol=1e-9)


@pytest.mark.parametrize("m", [1, 3, 8])
def test_greedy_rows_matches_reference(m):
    rng = np.random.default_rng(100 + m)
    _, r, L = _rows(rng, 300, m)
    for sign, method in ((1.0, AllocMethod.SMALLEST_FIRST), (-1.0, AllocMethod.LARGEST_FIRST)):
        x = greedy_rows(sign * r, r, L)
        for i in range(300):
            ref = _allocate_core(method, [0.0] * m, r[i].tolist(), L[i])
            np.testing.assert_allclose(x[i], ref, rtol=1e-12, atol=1e-9)
    keys = rng.random((300, m))
    x = greedy_rows(keys, r, L)
    for i in range(300):
        ref = _greedy_core(np.argsort(keys[i], kind="stable").tolist(), r[i].tolist(), L[i])
        np.testing.assert_allclose(x[i], ref, rtol=1e-12, atol=1e-9)


def test_level_fill_rows_padding_is_inert():
    rng = np.random.default_rng(7)
    z, r, L = _rows(rng, 50, 5)
    padded_z = np.hstack([z, np.zeros((50, 3))])
    padded_r = np.hstack([r, np.zeros((50, 3))])
    x = level_fill_rows(z, r, L)
    xp = level_fill_rows(padded_z, padded_r, L)
    np.testing.assert_array_equal(xp[:, 5:], 0.0)
    np.testing.assert_allclose(xp[:, :5], x, rtol=1e-12, atol=1e-9)
