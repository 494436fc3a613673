"""Two-player game over the sizes of the common and grant-based regions.

The URLLC agent picks ``n1`` common-region blocks and the eMBB agent picks
``n2`` grant-based blocks, both from ``0..N``. URLLC is rewarded when its
loss bound is met on the blocks not claimed by eMBB; eMBB is rewarded for
blocks up to the amount it needs to carry the frame's request ``r``. Both
pay ``b / N`` per claimed block.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .reliability import failure_prob_per_region, light_traffic_coefficient

__all__ = [
    "GameParams",
    "ActionProfile",
    "Case",
    "EquilibriumResult",
    "throughput",
    "n2_star",
    "n1_star",
    "payoff_urllc",
    "payoff_embb",
    "social_payoff",
    "payoff_tables",
    "enumerate_pure_nash",
    "solve_equilibrium_theorem",
]

log = logging.getLogger(__name__)

MAX_ENUM_BLOCKS = 200
# payoffs are sums of a few O(1) terms; differences below this are ties
PAYOFF_TOL = 1e-12


@dataclass(frozen=True)
class GameParams:
    rho: float
    p: float
    tau: int
    N: int
    epsilon: float
    b: float
    a: float
    c: float
    r: float

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N!r}")
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho!r}")
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"resource cost b must lie in (0, 1), got {self.b!r}")
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"common-region efficiency a must lie in (0, 1), got {self.a!r}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon!r}")
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c!r}")
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r!r}")
        # validates p and tau
        light_traffic_coefficient(self.p, self.tau)

    @cached_property
    def loss_by_blocks(self) -> np.ndarray:
        """Light-traffic URLLC failure probability for ``k = 0..N`` common blocks."""
        return np.array(
            [failure_prob_per_region(self.rho, self.p, self.tau, k) for k in range(self.N + 1)]
        )


@dataclass(frozen=True, order=True)
class ActionProfile:
    n1: int
    n2: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.n1, self.n2)


class Case(str, enum.Enum):
    INFEASIBLE_URLLC = "INFEASIBLE_URLLC"
    CASE1 = "CASE1"
    CASE2 = "CASE2"
    CASE3 = "CASE3"


@dataclass
class EquilibriumResult:
    case: Case
    equilibria: list[ActionProfile]
    socially_optimal: list[ActionProfile]
    n1_star: int | None = None
    n2_star_zero: int = 0
    n2_star_n1: int | None = None
    social_payoffs: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def chosen(self) -> ActionProfile:
        """Deterministic pick among the socially optimal equilibria (the first listed)."""
        return self.socially_optimal[0]


def _check_action(n: int, N: int, name: str) -> None:
    if int(n) != n or not 0 <= n <= N:
        raise ValueError(f"{name} must be an integer in [0, {N}], got {n!r}")


def throughput(n1: int, n2: int, params: GameParams) -> float:
    """Bits eMBB can carry per frame under profile ``(n1, n2)``."""
    N = params.N
    _check_action(n1, N, "n1")
    _check_action(n2, N, "n2")
    return (min(n2, N - n1) + params.a * min(n1, N - n2)) * params.c


def n2_star(n1: int, params: GameParams) -> int:
    """Fewest grant-based blocks that carry ``r`` alongside ``n1`` common blocks (``N`` if none do)."""
    _check_action(n1, params.N, "n1")
    for n2 in range(params.N + 1):
        if throughput(n1, n2, params) >= params.r:
            return n2
    return params.N


def n1_star(params: GameParams) -> int | None:
    """Fewest common blocks meeting the URLLC loss bound, or ``None`` if no size does."""
    pe = params.loss_by_blocks
    hits = np.flatnonzero(pe <= params.epsilon)
    if hits.size == 0:
        return None
    k = int(hits[0])
    if k == 0:
        log.warning("epsilon=%g >= 1 makes the empty common region acceptable", params.epsilon)
    return k


def payoff_urllc(profile: ActionProfile, params: GameParams) -> float:
    n1, n2, N = profile.n1, profile.n2, params.N
    _check_action(n1, N, "n1")
    _check_action(n2, N, "n2")
    met = params.loss_by_blocks[min(n1, N - n2)] <= params.epsilon
    fits = n1 + n2 <= N
    return float(met and fits) - n1 / N * params.b


def payoff_embb(profile: ActionProfile, params: GameParams, _n2_star: int | None = None) -> float:
    n1, n2, N = profile.n1, profile.n2, params.N
    _check_action(n1, N, "n1")
    _check_action(n2, N, "n2")
    need = n2_star(n1, params) if _n2_star is None else _n2_star
    fits = float(n1 + n2 <= N)
    useful = need if n2 > need else n2
    return useful / N * fits - n2 / N * params.b


def social_payoff(profile: ActionProfile, params: GameParams) -> float:
    return payoff_urllc(profile, params) + payoff_embb(profile, params)


def _n2_star_all(params: GameParams) -> np.ndarray:
    """``n2_star(n1)`` for every ``n1`` at once."""
    N = params.N
    n1 = np.arange(N + 1)[:, None]
    n2 = np.arange(N + 1)[None, :]
    tput = (np.minimum(n2, N - n1) + params.a * np.minimum(n1, N - n2)) * params.c
    ok = tput >= params.r
    return np.where(ok.any(axis=1), ok.argmax(axis=1), N)


def payoff_tables(params: GameParams) -> tuple[np.ndarray, np.ndarray]:
    """Both payoff matrices indexed ``[n1, n2]``."""
    N, b = params.N, params.b
    n1 = np.arange(N + 1)[:, None]
    n2 = np.arange(N + 1)[None, :]
    fits = n1 + n2 <= N
    met = params.loss_by_blocks[np.minimum(n1, N - n2)] <= params.epsilon
    urllc = (met & fits).astype(float) - n1 / N * b
    need = _n2_star_all(params)[:, None]
    embb = np.minimum(n2, need) / N * fits - n2 / N * b
    return urllc, embb


def enumerate_pure_nash(params: GameParams) -> list[ActionProfile]:
    """All profiles where each action is a (weak) best response to the other, by exhaustive scan."""
    if params.N > MAX_ENUM_BLOCKS:
        raise ValueError(f"exhaustive scan limited to N <= {MAX_ENUM_BLOCKS}, got {params.N}")
    urllc, embb = payoff_tables(params)
    best_n1 = urllc.max(axis=0)  # best URLLC payoff against each n2
    best_n2 = embb.max(axis=1)  # best eMBB payoff against each n1
    found = []
    for n1 in range(params.N + 1):
        for n2 in range(params.N + 1):
            if urllc[n1, n2] >= best_n1[n2] - PAYOFF_TOL and embb[n1, n2] >= best_n2[n1] - PAYOFF_TOL:
                found.append(ActionProfile(n1, n2))
    return found


def solve_equilibrium_theorem(params: GameParams) -> EquilibriumResult:
    """Closed-form equilibrium set from ``n1*``, ``n2*(0)`` and ``n2*(n1*)``.

    When both equilibria are equally good socially they are both returned,
    the ``(n1*, .)`` one first.
    """
    N = params.N
    k = n1_star(params)
    base = n2_star(0, params)
    fallback = ActionProfile(0, base)
    if k is None:
        return EquilibriumResult(
            case=Case.INFEASIBLE_URLLC,
            equilibria=[fallback],
            socially_optimal=[fallback],
            n1_star=None,
            n2_star_zero=base,
            social_payoffs={fallback.as_tuple(): social_payoff(fallback, params)},
        )
    need = n2_star(k, params)
    room = N - k
    if base <= room:
        if need > room:
            # ruled out analytically; reaching it means the inputs broke an assumption
            raise AssertionError(f"n2*(0)={base} <= N-n1*={room} but n2*(n1*)={need} > N-n1*")
        eq = ActionProfile(k, need)
        return EquilibriumResult(
            case=Case.CASE1,
            equilibria=[eq],
            socially_optimal=[eq],
            n1_star=k,
            n2_star_zero=base,
            n2_star_n1=need,
            social_payoffs={eq.as_tuple(): social_payoff(eq, params)},
        )
    if need <= room:
        case = Case.CASE2
        first = ActionProfile(k, need)
        tie = k == N and base - need == N
    else:
        case = Case.CASE3
        first = ActionProfile(k, room)
        tie = k == N and base == N
    equilibria = [first, fallback]
    return EquilibriumResult(
        case=case,
        equilibria=equilibria,
        socially_optimal=equilibria if tie else [first],
        n1_star=k,
        n2_star_zero=base,
        n2_star_n1=need,
        social_payoffs={e.as_tuple(): social_payoff(e, params) for e in equilibria},
    )


def case_inequalities_hold(result: EquilibriumResult, N: int) -> bool:
    """Check that the reported case matches its defining inequalities."""
    if result.case is Case.INFEASIBLE_URLLC:
        return result.n1_star is None
    room = N - result.n1_star
    base, need = result.n2_star_zero, result.n2_star_n1
    if result.case is Case.CASE1:
        return base <= room and need <= room
    if result.case is Case.CASE2:
        return base > room and need <= room
    return base > room and need > room


def describe(result: EquilibriumResult) -> str:
    lines = [f"case: {result.case.value}"]
    if result.n1_star is not None:
        lines.append(f"n1*: {result.n1_star}  n2*(0): {result.n2_star_zero}  n2*(n1*): {result.n2_star_n1}")
    else:
        lines.append(f"n1*: none  n2*(0): {result.n2_star_zero}")
    for e in result.equilibria:
        tag = " (socially optimal)" if e in result.socially_optimal else ""
        sp = result.social_payoffs.get(e.as_tuple(), math.nan)
        lines.append(f"equilibrium ({e.n1}, {e.n2}) social payoff {sp:.6f}{tag}")
    return "\n".join(lines)
