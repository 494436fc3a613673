"""Exact samplers for sparse Poisson counts.

At URLLC loads almost every mini slot is empty, so drawing one Poisson
variate per slot wastes nearly all of the work. These helpers draw only the
non-empty slots: gaps between them are geometric and the count in a
non-empty slot is a zero-truncated Poisson variate found by inversion.
"""

from __future__ import annotations

import math

import numpy as np


def poisson_cdf_table(lam: float) -> np.ndarray:
    """CDF of Poisson(lam) at 0, 1, 2, ... up to the point it rounds to 1."""
    cdf = []
    term = math.exp(-lam)
    total = 0.0
    k = 0
    while True:
        total += term
        cdf.append(min(total, 1.0))
        k += 1
        term *= lam / k
        if total >= 1.0 or term == 0.0 or k > 10_000:
            break
    cdf[-1] = 1.0
    return np.asarray(cdf)


def truncated_poisson(u: np.ndarray, lam: float) -> np.ndarray:
    """Map uniforms on [0, 1) to Poisson(lam) conditioned on being >= 1."""
    cdf = poisson_cdf_table(lam)
    p0 = cdf[0]
    # conditional CDF of k >= 1
    cond = (cdf[1:] - p0) / (1.0 - p0)
    return 1 + np.searchsorted(cond, u, side="right")


class SparsePoissonSlots:
    """Stream of ``(slot, count)`` pairs for i.i.d. Poisson(lam) counts per slot.

    Only slots with a positive count are produced, in increasing order, so the
    sequence is distributed exactly like scanning every slot with an
    independent Poisson draw. Draws are taken from ``rng`` in fixed-size
    batches; the stream is fully determined by the generator's state.
    """

    def __init__(self, rng: np.random.Generator, lam: float, batch: int = 1024):
        if lam < 0:
            raise ValueError("rate must be non-negative")
        self._rng = rng
        self._lam = lam
        self._batch = batch
        self._busy = -math.expm1(-lam)  # P(count >= 1)
        self._gaps: list[int] = []
        self._counts: list[int] = []
        self._pos = 0
        self._next_slot = -1
        self._advance()

    def _refill(self) -> None:
        gaps = self._rng.geometric(self._busy, size=self._batch)
        counts = truncated_poisson(self._rng.random(self._batch), self._lam)
        self._gaps = gaps.tolist()
        self._counts = counts.tolist()
        self._pos = 0

    def _advance(self) -> None:
        if self._busy <= 0.0:
            self._next_slot = math.inf
            self._next_count = 0
            return
        if self._pos >= len(self._gaps):
            self._refill()
        self._next_slot += self._gaps[self._pos]
        self._next_count = self._counts[self._pos]
        self._pos += 1

    def take_until(self, stop: int) -> list[tuple[int, int]]:
        """Non-empty slots with index ``< stop`` not yet returned."""
        out = []
        while self._next_slot < stop:
            out.append((self._next_slot, self._next_count))
            self._advance()
        return out
