"""Per-frame eMBB grant allocation.

Given cumulative grants ``z``, current requests ``r`` and a frame budget
``L``, choose grants ``x`` with ``sum(x) == L`` and ``0 <= x <= r`` that
minimize the sample variance of ``z + x``. The water-filling routine solves
this exactly; the baselines are the heuristics it is compared against.

The ``_*_core`` functions work on plain lists and are the reference
implementations behind the public, validating wrappers. The ``*_rows``
functions solve many independent instances at once (one per row) and are what
the simulator uses in its frame loop.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

__all__ = [
    "AllocMethod",
    "AllocationProblem",
    "Allocation",
    "KktCertificate",
    "InfeasibleAllocationError",
    "objective",
    "water_fill",
    "kkt_certificate",
    "brute_force_oracle",
    "allocate_baseline",
    "allocate",
    "sample_variance",
    "jain_index",
    "level_fill_rows",
    "greedy_rows",
]


class InfeasibleAllocationError(ValueError):
    """Raised when the budget exceeds the total request."""


class AllocMethod(str, enum.Enum):
    WATER_FILLING = "WATER_FILLING"
    SMALLEST_FIRST = "SMALLEST_FIRST"
    LARGEST_FIRST = "LARGEST_FIRST"
    RANDOM_ORDER = "RANDOM_ORDER"
    TWO_STEP = "TWO_STEP"
    MAX_MIN = "MAX_MIN"


BASELINES = (
    AllocMethod.SMALLEST_FIRST,
    AllocMethod.LARGEST_FIRST,
    AllocMethod.RANDOM_ORDER,
    AllocMethod.TWO_STEP,
    AllocMethod.MAX_MIN,
)


def _budget_tolerance(total_request: float) -> float:
    return 1e-12 * max(1.0, total_request)


@dataclass(frozen=True)
class AllocationProblem:
    """Cumulative grants ``z``, requests ``r`` and frame budget ``L`` for ``m`` users."""

    z: np.ndarray
    r: np.ndarray
    L: float

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float).reshape(-1)
        r = np.asarray(self.r, dtype=float).reshape(-1)
        if z.shape != r.shape:
            raise ValueError(f"z and r must have equal length, got {z.size} and {r.size}")
        if z.size < 1:
            raise ValueError("need at least one user")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(r)) and math.isfinite(self.L)):
            raise ValueError("z, r and L must be finite")
        if np.any(z < 0) or np.any(r < 0) or self.L < 0:
            raise ValueError("z, r and L must be non-negative")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "L", float(self.L))

    @property
    def m(self) -> int:
        return int(self.z.size)

    @property
    def active(self) -> np.ndarray:
        """Indices of users with a non-zero request."""
        return np.flatnonzero(self.r > 0)

    @property
    def eta(self) -> np.ndarray:
        """Grant that would bring each user exactly to the mean level."""
        return (self.z.sum() + self.L) / self.m - self.z

    @property
    def feasible(self) -> bool:
        total = float(self.r.sum())
        return self.L <= total + _budget_tolerance(total)


@dataclass(frozen=True)
class Allocation:
    x: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))

    def __len__(self) -> int:
        return int(self.x.size)


@dataclass
class KktCertificate:
    """Multipliers and active sets that witness (or refute) optimality of ``x``.

    ``lam`` is ``None`` when no user is strictly inside its box; ``mu`` and
    ``omega`` are then built from ``lam_used``, the midpoint of the interval of
    equality multipliers that keeps both sign conditions (or the nearer edge
    when that interval is empty).
    """

    lam: float | None
    mu: np.ndarray
    omega: np.ndarray
    interior: list[int]
    at_zero: list[int]
    at_cap: list[int]
    stationarity_residual: float
    complementarity_residual: float
    primal_residual: float = 0.0
    lam_used: float = 0.0
    idle: list[int] = field(default_factory=list)

    @property
    def active_sets(self) -> tuple[list[int], list[int], list[int]]:
        return self.interior, self.at_zero, self.at_cap

    @property
    def sign_violation(self) -> float:
        """Largest negative entry among ``mu`` and ``omega`` (0 when both are non-negative)."""
        worst = min(float(self.mu.min(initial=0.0)), float(self.omega.min(initial=0.0)))
        return max(0.0, -worst)

    def certifies(self, tol: float = 1e-9) -> bool:
        return (
            self.stationarity_residual <= tol
            and self.complementarity_residual <= tol
            and self.primal_residual <= tol
            and self.sign_violation <= tol
        )


def objective(problem: AllocationProblem, x) -> float:
    """Sample variance of ``z + x`` written as ``sum((x - eta)**2) / (m - 1)``.

    With one user the variance is defined as 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.m:
        raise ValueError(f"x has {x.size} entries, expected {problem.m}")
    if problem.m == 1:
        return 0.0
    d = x - problem.eta
    return float(np.dot(d, d) / (problem.m - 1))


# ---------------------------------------------------------------- water filling


def _water_fill_core(z: list[float], r: list[float], L: float) -> list[float]:
    """Iterative form of the recursive water-filling algorithm.

    Users are taken in order of ``(z, r, id)``. The lowest group of ``k`` equal
    levels is raised by ``min(smallest residual request, gap to next level)``;
    saturated buckets drop out and reached levels merge in, until the
    remaining budget fits as an even split over the group.
    """
    m = len(z)
    x = [0.0] * m
    if L <= 0.0:
        return x
    order = sorted((i for i in range(m) if r[i] > 0.0), key=lambda i: (z[i], r[i], i))
    n_active = len(order)
    if n_active == 0:
        return x
    residual = {i: r[i] for i in order}
    level = z[order[0]]
    nxt = 0
    group: list[int] = []
    while nxt < n_active and z[order[nxt]] - level <= 1e-9 * max(1.0, abs(z[order[nxt]])):
        group.append(order[nxt])
        nxt += 1
    group.sort(key=lambda i: (residual[i], i))

    # each pass removes at least one bucket or merges at least one level
    for _ in range(2 * n_active + 2):
        if not group:
            break
        k = len(group)
        smallest = residual[group[0]]
        gap = z[order[nxt]] - level if nxt < n_active else math.inf
        step = smallest if smallest < gap else gap
        if L <= step * k:
            share = L / k
            for i in group:
                x[i] += share
            return x
        for i in group:
            x[i] += step
            residual[i] -= step
        L -= step * k
        if smallest < gap:
            level += step
        else:
            level = z[order[nxt]]
        group = [i for i in group if residual[i] > 0.0]
        if not group and nxt < n_active:
            level = z[order[nxt]]
        merged = False
        while nxt < n_active and z[order[nxt]] - level <= 1e-9 * max(1.0, abs(z[order[nxt]])):
            group.append(order[nxt])
            nxt += 1
            merged = True
        if merged:
            group.sort(key=lambda i: (residual[i], i))
    return x


def water_fill(problem: AllocationProblem) -> Allocation:
    """Variance-minimizing grant vector (the unique optimum when ``L <= sum(r)``)."""
    if not problem.feasible:
        raise InfeasibleAllocationError(
            f"budget L={problem.L} exceeds total request {float(problem.r.sum())}"
        )
    L = min(problem.L, float(problem.r.sum()))
    x = _water_fill_core(problem.z.tolist(), problem.r.tolist(), L)
    return Allocation(np.minimum(np.asarray(x), problem.r))


# ---------------------------------------------------------------- certificate


def kkt_certificate(problem: AllocationProblem, x, tol: float = 1e-9) -> KktCertificate:
    """Build KKT multipliers for a feasible ``x`` and report how well they fit.

    Users with a positive request are split into interior, at-zero and
    at-cap sets (activity tolerance ``tol * max(1, r_i)``). Users with no
    request, or a request no wider than ``tol``, sit on both bounds and are
    listed as ``idle``; their multipliers are chosen to satisfy stationarity
    with non-negative sign.

    A point within ``tol`` of a bound can be classified either way. When
    tolerant classification leaves a residual above ``tol``, the exact one
    (bounds hit with equality) is tried as well and the better fit returned.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.m:
        raise ValueError(f"x has {x.size} entries, expected {problem.m}")
    cert = _certificate(problem, x, tol, tol)
    if not cert.certifies(tol):
        exact = _certificate(problem, x, tol, 0.0)
        if _misfit(exact) < _misfit(cert):
            return exact
    return cert


def _misfit(c: KktCertificate) -> float:
    return max(c.stationarity_residual, c.complementarity_residual, c.primal_residual, c.sign_violation)


def _certificate(problem: AllocationProblem, x: np.ndarray, tol: float, act_tol: float) -> KktCertificate:
    m = problem.m
    r, eta = problem.r, problem.eta
    half = (m - 1) / 2.0 if m > 1 else 0.5

    interior, at_zero, at_cap, idle = [], [], [], []
    for i in range(m):
        if r[i] <= tol:
            idle.append(i)
        elif x[i] <= act_tol * max(1.0, r[i]):
            at_zero.append(i)
        elif x[i] >= r[i] - act_tol * max(1.0, r[i]):
            at_cap.append(i)
        else:
            interior.append(i)

    if interior:
        lam: float | None = (
            eta[interior].sum() + r[at_cap].sum() + x[idle].sum() - problem.L
        ) / (half * len(interior))
        lam_used = float(lam)
    else:
        lam = None
        lo = max((eta[i] / half for i in at_zero), default=-math.inf)
        hi = min(((eta[i] - r[i]) / half for i in at_cap), default=math.inf)
        if math.isinf(lo) and math.isinf(hi):
            lam_used = 0.0
        elif math.isinf(lo):
            lam_used = hi
        elif math.isinf(hi):
            lam_used = lo
        else:
            lam_used = (lo + hi) / 2.0 if lo <= hi else (lo if abs(lo) < abs(hi) else hi)

    mu = np.zeros(m)
    omega = np.zeros(m)
    for i in at_zero:
        mu[i] = lam_used - eta[i] / half
    for i in at_cap:
        omega[i] = (eta[i] - r[i]) / half - lam_used
    for i in idle:
        v = lam_used - eta[i] / half
        if v >= 0.0:
            mu[i] = v
        else:
            omega[i] = -v

    # stationarity: x_i = eta_i - half * (lam - mu_i + omega_i)
    implied = eta - half * (lam_used - mu + omega)
    gap = np.abs(x - implied)
    gap[idle] = 0.0
    stationarity = float(gap.max(initial=0.0)) if m > 1 else 0.0
    slack = np.concatenate([np.abs(mu * x), np.abs(omega * (x - r))])
    if idle:
        # idle users lie on both bounds up to tol; any mismatch is a primal matter
        slack[idle] = 0.0
        slack[[m + i for i in idle]] = 0.0
    complementarity = float(slack.max(initial=0.0))
    box = np.concatenate([-x, x - r])
    primal = max(abs(float(x.sum()) - problem.L), float(box.max(initial=0.0)), 0.0)
    return KktCertificate(
        lam=None if lam is None else float(lam),
        mu=mu,
        omega=omega,
        interior=interior,
        at_zero=at_zero,
        at_cap=at_cap,
        stationarity_residual=stationarity,
        complementarity_residual=complementarity,
        primal_residual=primal,
        lam_used=float(lam_used),
        idle=idle,
    )


# ---------------------------------------------------------------- brute force


def brute_force_oracle(problem: AllocationProblem, grid_step: float, max_users: int = 6) -> Allocation:
    """Grid search over the feasible set followed by pairwise-transfer refinement.

    Independent of the water-filling logic: it only evaluates the objective.
    The refinement repeatedly moves the objective-optimal amount between each
    pair of users (clipped to both boxes) until no transfer improves by more
    than ``1e-15``.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    if not problem.feasible:
        raise InfeasibleAllocationError("budget exceeds total request")
    act = problem.active.tolist()
    if len(act) > max_users:
        raise ValueError(f"brute force limited to {max_users} active users, got {len(act)}")
    m = problem.m
    x_best = np.zeros(m)
    if not act or problem.L <= 0:
        return Allocation(x_best)
    L = min(problem.L, float(problem.r.sum()))
    r = problem.r
    eta = problem.eta

    def cost(v: np.ndarray) -> float:
        return float(np.sum((v - eta[act]) ** 2))

    best = math.inf
    best_v = None
    head, last = act[:-1], act[-1]
    grids = [np.arange(0.0, r[i] + 1e-12, grid_step) for i in head]
    # enumerate the grid recursively with a running sum to prune
    stack = [(0, 0.0, [])]
    while stack:
        depth, used, vals = stack.pop()
        if depth == len(head):
            rest = L - used
            if -1e-12 <= rest <= r[last] + 1e-12:
                v = np.array(vals + [min(max(rest, 0.0), r[last])])
                c = cost(v)
                if c < best:
                    best, best_v = c, v
            continue
        for g in grids[depth]:
            if used + g > L + 1e-12:
                break
            stack.append((depth + 1, used + g, vals + [g]))
    if best_v is None:
        # coarse grid missed the simplex; start from a proportional split
        best_v = r[act] * (L / r[act].sum())

    v = best_v.copy()
    target = eta[act]
    cap = r[act]
    for _ in range(10000):
        improved = 0.0
        for a, b in combinations(range(len(act)), 2):
            t = ((target[a] - v[a]) - (target[b] - v[b])) / 2.0
            t = min(max(t, max(-v[a], v[b] - cap[b])), min(cap[a] - v[a], v[b]))
            if t == 0.0:
                continue
            before = (v[a] - target[a]) ** 2 + (v[b] - target[b]) ** 2
            after = (v[a] + t - target[a]) ** 2 + (v[b] - t - target[b]) ** 2
            if after < before:
                v[a] += t
                v[b] -= t
                improved = max(improved, before - after)
        if improved <= 1e-15:
            break
    x_best[act] = v
    return Allocation(x_best)


# ---------------------------------------------------------------- baselines


def _greedy_core(order, r: list[float], L: float) -> list[float]:
    x = [0.0] * len(r)
    for i in order:
        if L <= 0.0:
            break
        g = r[i] if r[i] < L else L
        x[i] = g
        L -= g
    return x


def _smallest_first_core(r: list[float], L: float) -> list[float]:
    return _greedy_core(sorted(range(len(r)), key=lambda i: (r[i], i)), r, L)


def _largest_first_core(r: list[float], L: float) -> list[float]:
    return _greedy_core(sorted(range(len(r)), key=lambda i: (-r[i], i)), r, L)


def _two_step_core(r: list[float], L: float) -> list[float]:
    m = len(r)
    v = L / m
    x = [ri if ri < v else v for ri in r]
    left = L - sum(x)
    residual = [r[i] - x[i] for i in range(m)]
    for i in sorted(range(m), key=lambda i: (-residual[i], i)):
        if left <= 0.0:
            break
        g = residual[i] if residual[i] < left else left
        x[i] += g
        left -= g
    return x


def _max_min_core(r: list[float], L: float) -> list[float]:
    """Progressive filling: the j-th smallest request receives ``min(r_j, L_left / (m - j + 1))``."""
    m = len(r)
    x = [0.0] * m
    for j, i in enumerate(sorted(range(m), key=lambda i: (r[i], i))):
        v = L / (m - j)
        g = r[i] if r[i] < v else v
        x[i] = g
        L -= g
    return x


def _allocate_core(method: AllocMethod, z: list[float], r: list[float], L: float, perm=None) -> list[float]:
    if method is AllocMethod.WATER_FILLING:
        return _water_fill_core(z, r, L)
    if method is AllocMethod.SMALLEST_FIRST:
        return _smallest_first_core(r, L)
    if method is AllocMethod.LARGEST_FIRST:
        return _largest_first_core(r, L)
    if method is AllocMethod.RANDOM_ORDER:
        return _greedy_core(perm, r, L)
    if method is AllocMethod.TWO_STEP:
        return _two_step_core(r, L)
    if method is AllocMethod.MAX_MIN:
        return _max_min_core(r, L)
    raise ValueError(f"unknown allocation method {method!r}")


def allocate_baseline(method, problem: AllocationProblem, rng: np.random.Generator | None = None) -> Allocation:
    """Heuristic grant vector; ``rng`` is only consulted by ``RANDOM_ORDER``."""
    method = AllocMethod(method)
    if method is AllocMethod.WATER_FILLING:
        raise ValueError("WATER_FILLING is not a baseline; use water_fill or allocate")
    return allocate(method, problem, rng)


def allocate(method, problem: AllocationProblem, rng: np.random.Generator | None = None) -> Allocation:
    method = AllocMethod(method)
    if not problem.feasible:
        raise InfeasibleAllocationError(
            f"budget L={problem.L} exceeds total request {float(problem.r.sum())}"
        )
    if method is AllocMethod.WATER_FILLING:
        return water_fill(problem)
    perm = None
    if method is AllocMethod.RANDOM_ORDER:
        if rng is None:
            raise ValueError("RANDOM_ORDER needs an rng")
        perm = rng.permutation(problem.m).tolist()
    L = min(problem.L, float(problem.r.sum()))
    x = _allocate_core(method, problem.z.tolist(), problem.r.tolist(), L, perm)
    return Allocation(np.minimum(np.asarray(x), problem.r))


# ---------------------------------------------------------------- row-batched kernels
#
# Row sums go through cumsum, which adds strictly left to right, so padding a
# row with trailing zero-request users never changes the rounding of the real
# users' results.


def _row_sum(a: np.ndarray) -> np.ndarray:
    return a.cumsum(axis=-1)[..., -1]


def level_fill_rows(z: np.ndarray, r: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Row-wise ``x = clip(h - z, 0, r)`` with the water level ``h`` chosen so that ``sum(x) == L``.

    This is the closed form of the water-filling optimum. The fill curve
    ``F(h) = sum(clip(h - z, 0, r))`` is piecewise linear: its slope steps up
    by one at each ``z_j`` and down by one at each ``z_j + r_j``. ``F`` is
    accumulated over the sorted breakpoints and ``h`` interpolated on the
    segment that crosses ``L``. Rows whose ``L`` reaches ``sum(r)`` get
    ``x == r``; rows with ``L == 0`` get zeros.

    Written as a short sequence of raw ufunc calls because the simulator
    calls it once per frame and per-call overhead dominates at these sizes.
    """
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    L = np.asarray(L, dtype=float)
    rows, m = z.shape
    w = 2 * m
    bp = np.empty((rows, w))
    bp[:, :m] = z
    np.add(z, r, out=bp[:, m:])
    order = bp.argsort(axis=1)
    base = _row_base(rows, w)
    flat = np.add(order, base)
    bp = bp.take(flat)
    slope = np.add.accumulate(_slope_events(m).take(order), axis=1)
    seg = np.subtract(bp[:, 1:], bp[:, :-1])
    np.multiply(slope[:, :-1], seg, out=seg)
    F = np.empty((rows, w))
    F[:, 0] = 0.0
    # ties only reorder zero-width segments, which add exactly nothing here
    np.add.accumulate(seg, axis=1, out=F[:, 1:])
    k = np.less(F, L[:, None]).sum(axis=1)
    np.clip(k, 1, w - 1, out=k)
    hi = np.add(k, base[:, 0])
    lo = np.subtract(hi, 1)
    lo_b, hi_b = bp.take(lo), bp.take(hi)
    lo_F, hi_F = F.take(lo), F.take(hi)
    np.subtract(hi_F, lo_F, out=hi_F)
    np.subtract(hi_b, lo_b, out=hi_b)
    np.multiply(np.subtract(L, lo_F), hi_b, out=lo_F)
    # a flat segment only happens at L == 0 or L >= sum(r); the left end is right there
    np.divide(lo_F, hi_F, out=lo_F, where=hi_F > 0.0)
    lo_F[hi_F <= 0.0] = 0.0
    np.add(lo_b, lo_F, out=lo_b)
    x = np.subtract(lo_b[:, None], z)
    np.maximum(x, 0.0, out=x)
    np.minimum(x, r, out=x)
    return x


_CACHE: dict[tuple, np.ndarray] = {}


def _slope_events(m: int) -> np.ndarray:
    key = ("slope", m)
    ev = _CACHE.get(key)
    if ev is None:
        ev = _CACHE[key] = np.concatenate((np.ones(m), -np.ones(m)))
    return ev


def _row_base(rows: int, width: int) -> np.ndarray:
    key = ("base", rows, width)
    base = _CACHE.get(key)
    if base is None:
        base = _CACHE[key] = (np.arange(rows) * width)[:, None]
    return base


def greedy_rows(key: np.ndarray, cap: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Row-wise greedy fill: visit users by ascending ``key`` (ties by index), granting ``min(cap, left)``."""
    key = np.asarray(key, dtype=float)
    cap = np.asarray(cap, dtype=float)
    rows, m = cap.shape
    flat = np.add(key.argsort(axis=1, kind="stable"), _row_base(rows, m))
    cs = cap.take(flat)
    before = np.empty((rows, m))
    before[:, 0] = 0.0
    np.add.accumulate(cs[:, :-1], axis=1, out=before[:, 1:])
    xs = np.subtract(np.asarray(L, dtype=float)[:, None], before)
    np.maximum(xs, 0.0, out=xs)
    np.minimum(xs, cs, out=xs)
    x = np.empty((rows, m))
    x.put(flat, xs)
    return x


# ---------------------------------------------------------------- fairness metrics


def sample_variance(values) -> float:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 2:
        raise ValueError("sample variance needs at least two values")
    d = v - v.mean()
    return float(np.dot(d, d) / (v.size - 1))


def jain_index(values) -> float:
    """Jain's fairness index ``(sum v)^2 / (m * sum v^2)``; all-zero input counts as perfectly fair.

    Evaluated as ``mean^2 / (mean^2 + population variance)``, which is the same
    quantity without the cancellation that hits nearly equal large values.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 1:
        raise ValueError("Jain index needs at least one value")
    if np.any(v < 0):
        raise ValueError("Jain index is defined for non-negative values")
    mean = v.mean()
    if mean == 0.0:
        return 1.0
    d = v - mean
    pop_var = float(np.dot(d, d) / v.size)
    return float(mean * mean / (mean * mean + pop_var))
