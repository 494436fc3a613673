"""Failure probability of a tagged URLLC packet under randomized persistent retransmission.

A packet is sent in the mini slot it arrives in and then, in each of the
following ``tau - 1`` mini slots, a copy goes out with probability ``p``.
It fails when every copy it sends collides with another URLLC transmission on
the same resource block.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .sampling import truncated_poisson

__all__ = [
    "RetransParams",
    "MonteCarloEstimate",
    "failure_prob_exact_tau3",
    "light_traffic_coefficient",
    "failure_prob_light_traffic",
    "failure_prob_per_region",
    "failure_prob_monte_carlo",
]

# Fixed chunk size keeps Monte Carlo output independent of the worker count.
MC_CHUNK = 1 << 13


def _check_p(p: float) -> None:
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise ValueError(f"retransmission probability must lie in [0, 1], got {p!r}")


def _check_tau(tau: int) -> None:
    if int(tau) != tau or tau < 1:
        raise ValueError(f"tau must be an integer >= 1, got {tau!r}")


def _check_rate(rate: float, name: str = "rho_tilde") -> None:
    if not (rate >= 0.0) or math.isinf(rate):
        raise ValueError(f"{name} must be a finite number >= 0, got {rate!r}")


@dataclass(frozen=True)
class RetransParams:
    """Per-block arrival intensity, retransmission probability and delay budget."""

    rho_tilde: float
    p: float
    tau: int

    def __post_init__(self) -> None:
        _check_rate(self.rho_tilde)
        _check_p(self.p)
        _check_tau(self.tau)


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    std_error: float
    trials: int
    seed: int
    failures: int

    def brackets(self, value: float, k: float = 3.0) -> bool:
        """True when ``value`` lies within ``k`` standard errors of the estimate."""
        return abs(value - self.estimate) <= k * self.std_error


def failure_prob_exact_tau3(params: RetransParams) -> float:
    """Closed-form failure probability for ``tau == 3``.

    The four exponential terms carry coefficients that sum to zero, so the
    formula is evaluated through ``expm1`` to stay accurate as
    ``rho_tilde -> 0``.
    """
    if params.tau != 3:
        raise ValueError(f"closed form only holds for tau == 3, got tau={params.tau}")
    p, rt = params.p, params.rho_tilde
    q = 1.0 - p
    e1 = math.expm1((-3.0 + 2.0 * q) * rt)
    e2 = math.expm1((-4.0 + q + q * q) * rt)
    e3 = math.expm1((-5.0 + 3.0 * q) * rt)
    e4 = math.expm1((-5.0 + q + q * q) * rt)
    value = -(1.0 + 2.0 * p) * e1 + p * (1.0 + p) * e2 + p * e3 - p * p * e4
    return min(1.0, max(0.0, value))


def light_traffic_coefficient(p: float, tau: int) -> float:
    """Multiplier of ``rho_tilde`` in the first-order (light traffic) failure probability.

    Sums the chance that a single background arrival in mini slot ``i``
    (``-(tau-1) <= i <= 0``) blocks every copy of the tagged packet.
    """
    _check_p(p)
    _check_tau(tau)
    q = 1.0 - p + p * p
    total = q ** (tau - 1)
    for i in range(-(tau - 1), 0):
        total += p * q ** (tau + i - 1) * (1.0 - p) ** (-i)
    return total


def failure_prob_light_traffic(params: RetransParams) -> float:
    """Light-traffic failure probability, clamped to 1.

    Only meaningful for ``rho_tilde << 1``; past that the linear term
    overshoots and the clamp takes over.
    """
    return min(1.0, light_traffic_coefficient(params.p, params.tau) * params.rho_tilde)


def failure_prob_per_region(rho: float, p: float, tau: int, k: int) -> float:
    """Failure probability when URLLC traffic of total rate ``rho`` spreads over ``k`` blocks."""
    _check_rate(rho, "rho")
    if int(k) != k or k < 0:
        raise ValueError(f"block count must be an integer >= 0, got {k!r}")
    if k == 0:
        return 1.0
    return min(1.0, light_traffic_coefficient(p, tau) * rho / k)


def _mc_chunk(rho_tilde: float, p: float, tau: int, n: int, seed_seq: np.random.SeedSequence) -> int:
    """Run ``n`` tagged-packet trials and return the number of failures.

    A trial with no background arrivals in the window always succeeds, so
    only the ``K ~ Binomial(n, P(window not empty))`` other trials are built
    explicitly: their total arrival count is zero-truncated Poisson and each
    arrival lands in a uniformly chosen mini slot of the window.
    """
    rng = np.random.default_rng(seed_seq)
    width = 2 * tau - 1
    window_rate = width * rho_tilde
    if window_rate == 0.0:
        return 0
    k = int(rng.binomial(n, -math.expm1(-window_rate)))
    if k == 0:
        return 0
    totals = truncated_poisson(rng.random(k), window_rate)
    trial = np.repeat(np.arange(k), totals)
    slot = rng.integers(0, width, size=trial.size)
    # row c: background arrivals of every trial in mini slot c - (tau - 1)
    arrivals = np.bincount(slot * k + trial, minlength=width * k).reshape(width, k)
    csum = np.zeros((width + 1, k), dtype=np.int64)
    np.cumsum(arrivals, axis=0, out=csum[1:])
    log_stay = math.log1p(-p) if p < 1.0 else -math.inf
    failed = np.ones(k, dtype=bool)
    for i in range(tau):
        row = i + tau - 1
        busy = arrivals[row] >= 1
        # earlier arrivals still inside their window each resend here with prob p
        backlog = csum[row] - csum[row - (tau - 1)]
        if tau > 1:
            with np.errstate(invalid="ignore"):
                silent = np.exp(backlog * log_stay) if p < 1.0 else (backlog == 0).astype(float)
            busy |= rng.random(k) >= silent
        if i > 0:
            busy |= rng.random(k) >= p
        failed &= busy
    return int(np.count_nonzero(failed))


def failure_prob_monte_carlo(
    params: RetransParams, trials: int, seed: int, workers: int = 1
) -> MonteCarloEstimate:
    """Estimate the tagged-packet failure probability by direct simulation.

    Each trial draws Poisson background arrivals for mini slots
    ``-(tau-1) .. tau-1`` on one block and flips the retransmission coins of
    every background packet and of the tagged packet. Trials run in fixed-size
    chunks with one spawned seed per chunk, so the result depends only on
    ``(params, trials, seed)`` and not on ``workers``.
    """
    if int(trials) != trials or trials < 1:
        raise ValueError(f"trials must be a positive integer, got {trials!r}")
    trials = int(trials)
    sizes = [MC_CHUNK] * (trials // MC_CHUNK)
    if trials % MC_CHUNK:
        sizes.append(trials % MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(params.rho_tilde, params.p, params.tau, n, ss) for n, ss in zip(sizes, children)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            failures = sum(pool.map(lambda job: _mc_chunk(*job), jobs))
    else:
        failures = sum(_mc_chunk(*job) for job in jobs)
    est = failures / trials
    return MonteCarloEstimate(
        estimate=est,
        std_error=math.sqrt(est * (1.0 - est) / trials),
        trials=trials,
        seed=seed,
        failures=failures,
    )
