"""Frame-by-frame simulation of the shared uplink.

Each frame the base station splits the ``N`` blocks into ``n1`` common and
``n2`` grant-based blocks, eMBB users request their whole buffer and are
granted bits by the configured allocator, and URLLC packets contend
grant-free on the common blocks, mini slot by mini slot.

A :class:`SimState` advances any number of independent runs in lockstep:
the eMBB side is one set of array operations per frame for all runs, and the
URLLC side is handled per run in blocks of frames (it never interacts with
eMBB). Each run draws only from its own seeded streams, so its results do not
depend on what else shares the batch.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .allocator import AllocMethod, greedy_rows, jain_index, level_fill_rows, sample_variance
from .game import ActionProfile, GameParams, n1_star, n2_star, payoff_tables, solve_equilibrium_theorem
from .sampling import SparsePoissonSlots

__all__ = [
    "SplitStrategy",
    "Overflow",
    "SimConfig",
    "RngStreams",
    "UrllcPacketRecord",
    "UrllcChannel",
    "EmbbUserState",
    "SimState",
    "FrameEvents",
    "MetricsReport",
    "ConfigError",
    "choose_split",
    "step_frame",
    "run_batch",
    "run_simulation",
]

STREAM_NAMES = (
    "embb-arrivals",
    "urllc-arrivals",
    "urllc-blocks",
    "retransmit-coins",
    "random-profile",
    "random-order",
)

# frames of random draws prepared at a time; part of the seed -> output contract
BLOCK = 512
_URLLC_BATCH = 256
# retransmission patterns are packed into an int64 bitmask up to this window
_MASK_BITS = 62

_LEVEL_METHODS = (AllocMethod.WATER_FILLING, AllocMethod.MAX_MIN)
_METHOD_RANK = {m: i for i, m in enumerate(AllocMethod)}


class ConfigError(ValueError):
    pass


class SplitStrategy(str, enum.Enum):
    SOCIAL_OPT = "SOCIAL_OPT"
    NONOPT_NASH = "NONOPT_NASH"
    N1STAR_PLUS1 = "N1STAR_PLUS1"
    NMINUS1_1 = "NMINUS1_1"
    RANDOM = "RANDOM"
    FIXED = "FIXED"


STRATEGIES = (
    SplitStrategy.SOCIAL_OPT,
    SplitStrategy.NONOPT_NASH,
    SplitStrategy.N1STAR_PLUS1,
    SplitStrategy.NMINUS1_1,
    SplitStrategy.RANDOM,
)


class Overflow(str, enum.Enum):
    """What happens to a frame's arrival that does not fit in the buffer."""

    PARTIAL = "PARTIAL"  # store what fits, lose the excess bits
    WHOLE = "WHOLE"  # lose the whole arrival


@dataclass
class SimConfig:
    """Every knob of one simulation run. Defaults are the reference scenario values.

    ``request_bits`` is the per-frame eMBB demand the region game is solved
    for; ``None`` means ``m`` times the mean per-user arrival. ``fixed_n1`` and
    ``fixed_n2`` are only read by the ``FIXED`` strategy. ``minislots_per_slot``
    of ``None`` means ``tau``.
    """

    rho: float = 6.5e-4
    p: float = 0.3
    tau: int = 8
    N: int = 60
    epsilon: float = 1e-5
    b: float = 0.8
    a: float = 0.5
    c: float = 3.2e4
    B: float = 3.8e5
    m: int = 8
    slots_per_frame: int = 10
    minislots_per_slot: int | None = None
    embb_arrival_max: int = 300_000
    embb_overflow: Overflow = Overflow.PARTIAL
    frames: int = 100_000
    allocator: AllocMethod = AllocMethod.WATER_FILLING
    split_strategy: SplitStrategy = SplitStrategy.SOCIAL_OPT
    request_bits: float | None = None
    fixed_n1: int = 0
    fixed_n2: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        for name, kind in (("allocator", AllocMethod), ("split_strategy", SplitStrategy),
                           ("embb_overflow", Overflow)):
            try:
                setattr(self, name, kind(getattr(self, name)))
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        self.validate()

    def validate(self) -> None:
        def integer(name, lo):
            v = getattr(self, name)
            ok = isinstance(v, (int, np.integer)) or (isinstance(v, float) and v.is_integer())
            if isinstance(v, bool) or not ok:
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            if v < lo:
                raise ConfigError(f"{name} must be >= {lo}, got {v!r}")
            setattr(self, name, int(v))

        for name in ("tau", "N", "m", "slots_per_frame"):
            integer(name, 1)
        for name in ("frames", "embb_arrival_max", "fixed_n1", "fixed_n2", "seed"):
            integer(name, 0)
        if self.minislots_per_slot is not None:
            integer("minislots_per_slot", 1)
        if self.seed >= 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed!r}")
        if not self.B > 0:
            raise ConfigError(f"B must be > 0, got {self.B!r}")
        for name in ("fixed_n1", "fixed_n2"):
            if getattr(self, name) > self.N:
                raise ConfigError(f"{name} must not exceed N={self.N}, got {getattr(self, name)!r}")
        if self.split_strategy is SplitStrategy.FIXED and self.fixed_n1 + self.fixed_n2 > self.N:
            raise ConfigError(f"fixed_n1 + fixed_n2 must not exceed N={self.N}")
        if self.request_bits is not None and not self.request_bits >= 0:
            raise ConfigError(f"request_bits must be >= 0, got {self.request_bits!r}")
        try:
            self.game_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def minislots(self) -> int:
        return self.minislots_per_slot if self.minislots_per_slot is not None else self.tau

    @property
    def minislots_per_frame(self) -> int:
        return self.slots_per_frame * self.minislots

    def game_params(self) -> GameParams:
        r = self.m * self.embb_arrival_max / 2.0 if self.request_bits is None else self.request_bits
        return GameParams(
            rho=self.rho, p=self.p, tau=self.tau, N=self.N, epsilon=self.epsilon,
            b=self.b, a=self.a, c=self.c, r=r,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("allocator", "split_strategy", "embb_overflow"):
            d[k] = getattr(self, k).value
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]


class RngStreams:
    """Independent named generators derived from one master seed.

    Turning a component on or off (say, switching allocator to RANDOM_ORDER)
    never shifts the draws any other component sees.
    """

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
        self._gens = {name: np.random.default_rng(ss) for name, ss in zip(STREAM_NAMES, children)}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._gens[name]


# ---------------------------------------------------------------- URLLC


@dataclass
class UrllcPacketRecord:
    arrival_minislot: int
    block: int
    transmit_slots: tuple[int, ...]
    outcome: str = "PENDING"


class UrllcChannel:
    """Grant-free contention on the common blocks of one run.

    A copy gets through when it is the only URLLC transmission on its
    ``(block, mini slot)``. A packet is resolved once every mini slot of its
    window has been generated, since only then are all competing copies known.
    """

    def __init__(self, p: float, tau: int, rng_blocks: np.random.Generator, rng_coins: np.random.Generator,
                 keep_records: bool = False):
        self.p = p
        self.tau = tau
        self._rng_blocks = rng_blocks
        self._rng_coins = rng_coins
        self._blocks: list[float] = []
        self._patterns: list = []
        self._offsets: dict[int, tuple[int, ...]] = {}
        self._weights = np.left_shift(1, np.arange(tau - 1, dtype=np.int64)) if 1 < tau <= _MASK_BITS + 1 else None
        self._i = 0
        self._occupancy: dict[int, dict[int, int]] = {}
        self._pending: deque[UrllcPacketRecord] = deque()
        self.keep_records = keep_records
        self.resolved: list[UrllcPacketRecord] = []
        self.arrived = 0
        self.lost = 0
        self.delivered = 0

    def _refill(self) -> None:
        n = _URLLC_BATCH
        self._blocks = self._rng_blocks.random(n).tolist()
        if self.tau == 1:
            self._patterns = [0] * n
        else:
            resend = self._rng_coins.random((n, self.tau - 1)) < self.p
            if self._weights is not None:
                # bit d-1 set: a copy goes out d mini slots after arrival
                self._patterns = resend.dot(self._weights).tolist()
            else:
                self._patterns = [tuple(np.flatnonzero(row) + 1) for row in resend]
        self._i = 0

    def _retransmissions(self, pattern) -> tuple[int, ...]:
        if self._weights is None:
            return pattern or ()
        offs = self._offsets.get(pattern)
        if offs is None:
            offs = self._offsets[pattern] = tuple(d + 1 for d in range(self.tau - 1) if pattern >> d & 1)
        return offs

    def arrive(self, slot: int, count: int, n1: int) -> None:
        occ = self._occupancy
        for _ in range(count):
            self.arrived += 1
            if n1 <= 0:
                # no common region: nothing can be sent
                self.lost += 1
                if self.keep_records:
                    self.resolved.append(UrllcPacketRecord(slot, -1, (), "LOST"))
                continue
            if self._i >= len(self._blocks):
                self._refill()
            block = int(self._blocks[self._i] * n1)
            slots = (slot,) + tuple(slot + d for d in self._retransmissions(self._patterns[self._i]))
            self._i += 1
            for s in slots:
                row = occ.get(s)
                if row is None:
                    occ[s] = {block: 1}
                else:
                    row[block] = row.get(block, 0) + 1
            self._pending.append(UrllcPacketRecord(slot, block, slots))

    def resolve(self, horizon: float) -> tuple[int, int]:
        """Settle packets whose window ends before mini slot ``horizon``; returns (resolved, lost)."""
        done = lost = 0
        pend, occ = self._pending, self._occupancy
        while pend and pend[0].arrival_minislot + self.tau - 1 < horizon:
            pkt = pend.popleft()
            ok = any(occ[s][pkt.block] == 1 for s in pkt.transmit_slots)
            pkt.outcome = "SUCCESS" if ok else "LOST"
            done += 1
            if ok:
                self.delivered += 1
            else:
                lost += 1
                self.lost += 1
            if self.keep_records:
                self.resolved.append(pkt)
        if not pend:
            occ.clear()
        elif occ:
            cutoff = pend[0].arrival_minislot
            for s in [s for s in occ if s < cutoff]:
                del occ[s]
        return done, lost

    @property
    def pending(self) -> int:
        return len(self._pending)


# ---------------------------------------------------------------- splitting


def _static_profile(strategy: SplitStrategy, config: SimConfig) -> ActionProfile:
    g = config.game_params()
    N = config.N
    if strategy is SplitStrategy.FIXED:
        return ActionProfile(config.fixed_n1, config.fixed_n2)
    if strategy is SplitStrategy.NMINUS1_1:
        if N < 2:
            raise ConfigError("split_strategy: (N-1, 1) needs N >= 2")
        return ActionProfile(N - 1, 1)
    if strategy is SplitStrategy.NONOPT_NASH:
        return ActionProfile(0, n2_star(0, g))
    if strategy is SplitStrategy.SOCIAL_OPT:
        return solve_equilibrium_theorem(g).chosen
    k = n1_star(g)
    if k is None:
        raise ConfigError(f"split_strategy: {strategy.value} needs n1*, but no common-region size meets epsilon")
    if k + 1 > N:
        raise ConfigError(f"split_strategy: n1*+1 = {k + 1} exceeds N = {N}")
    return ActionProfile(k + 1, N - k - 1)


def choose_split(strategy, config: SimConfig, rng: RngStreams | np.random.Generator | None = None) -> ActionProfile:
    """Region split for one frame. Only ``RANDOM`` consumes randomness.

    ``RANDOM`` draws ``n1`` uniformly from ``0..N`` and then ``n2`` uniformly
    from ``0..N-n1``. ``SOCIAL_OPT`` falls back to ``(0, n2*(0))`` when no
    common-region size meets the loss bound; ``N1STAR_PLUS1`` has no such
    fallback and raises :class:`ConfigError`.
    """
    strategy = SplitStrategy(strategy)
    if strategy is SplitStrategy.RANDOM:
        gen = rng["random-profile"] if isinstance(rng, RngStreams) else rng
        if gen is None:
            raise ConfigError("split_strategy: RANDOM needs an rng")
        n1 = int(gen.integers(0, config.N + 1))
        n2 = int(math.floor(gen.random() * (config.N - n1 + 1)))
        return ActionProfile(n1, n2)
    return _static_profile(strategy, config)


# ---------------------------------------------------------------- state


@dataclass
class EmbbUserState:
    buffer_bits: float = 0.0
    z: float = 0.0
    lost_bits: float = 0.0
    arrived_bits: float = 0.0


@dataclass
class FrameEvents:
    """What happened in one frame, one entry per run (in ``SimState.configs`` order)."""

    frame: int
    n1: np.ndarray
    n2: np.ndarray
    budget: np.ndarray
    requests: np.ndarray
    grants: np.ndarray
    embb_arrived: np.ndarray
    embb_lost: np.ndarray
    urllc_arrived: np.ndarray
    urllc_resolved: np.ndarray
    urllc_lost: np.ndarray
    social_payoff: np.ndarray

    def records(self, configs: Sequence[SimConfig]) -> list[dict]:
        out = []
        for i, cfg in enumerate(configs):
            m = cfg.m
            out.append({
                "seed": cfg.seed,
                "allocator": cfg.allocator.value,
                "split_strategy": cfg.split_strategy.value,
                "frame": self.frame,
                "n1": int(self.n1[i]),
                "n2": int(self.n2[i]),
                "budget": float(self.budget[i]),
                "requests": self.requests[i, :m].tolist(),
                "grants": self.grants[i, :m].tolist(),
                "embb_arrived": float(self.embb_arrived[i]),
                "embb_lost": float(self.embb_lost[i]),
                "urllc_arrived": int(self.urllc_arrived[i]),
                "urllc_resolved": int(self.urllc_resolved[i]),
                "urllc_lost": int(self.urllc_lost[i]),
                "social_payoff": float(self.social_payoff[i]),
            })
        return out


class _Run:
    """Per-run pieces that stay scalar: RNG streams, split tables and the URLLC channel."""

    def __init__(self, cfg: SimConfig, keep_records: bool):
        self.cfg = cfg
        self.rng = RngStreams(cfg.seed)
        self.static = None if cfg.split_strategy is SplitStrategy.RANDOM else _static_profile(cfg.split_strategy, cfg)
        urllc, embb = payoff_tables(cfg.game_params())
        self.payoff = urllc + embb
        self.profile_counts = np.zeros((cfg.N + 1) * (cfg.N + 1), dtype=np.int64)
        self.channel = UrllcChannel(cfg.p, cfg.tau, self.rng["urllc-blocks"], self.rng["retransmit-coins"], keep_records)
        self.source = SparsePoissonSlots(self.rng["urllc-arrivals"], cfg.rho)

    def draw_profiles(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.static is not None:
            return np.full(n, self.static.n1, dtype=np.int64), np.full(n, self.static.n2, dtype=np.int64)
        gen = self.rng["random-profile"]
        N = self.cfg.N
        n1 = gen.integers(0, N + 1, size=n)
        n2 = np.floor(gen.random(n) * (N - n1 + 1)).astype(np.int64)
        return n1, n2

    def urllc_frames(self, first_frame: int, n1_seq: np.ndarray) -> tuple[int, int, int]:
        """Feed arrivals of frames ``first_frame ..`` (one ``n1`` each) and settle finished packets."""
        mpf = self.cfg.minislots_per_frame
        ch = self.channel
        before = ch.arrived
        stop = (first_frame + len(n1_seq)) * mpf
        for slot, count in self.source.take_until(stop):
            ch.arrive(slot, count, int(n1_seq[slot // mpf - first_frame]))
        done, lost = ch.resolve(stop)
        return ch.arrived - before, done, lost


class SimState:
    """Lockstep state of one or more independent runs.

    Runs are stored internally with the level-type allocators (water-filling,
    max-min) first so each allocator kernel works on a contiguous slice;
    ``configs`` lists them in that internal order. Users beyond a run's own
    ``m`` are padding: they never receive arrivals or grants.
    """

    def __init__(self, configs: Sequence[SimConfig], keep_records: bool = False):
        if not configs:
            raise ConfigError("at least one run is needed")
        order = sorted(range(len(configs)), key=lambda i: (configs[i].allocator not in _LEVEL_METHODS,
                                                            _METHOD_RANK[configs[i].allocator], i))
        self.positions = order
        self.configs = [configs[i] for i in order]
        self.runs = [_Run(cfg, keep_records) for cfg in self.configs]
        R = len(self.configs)
        M = max(cfg.m for cfg in self.configs)
        self.R, self.M = R, M
        self.buffers = np.zeros((R, M))
        self.z = np.zeros((R, M))
        self.lost_bits = np.zeros((R, M))
        self.arrived_bits = np.zeros((R, M))
        self.frame = 0
        self._B = np.array([[cfg.B] for cfg in self.configs])
        self._a = np.array([cfg.a for cfg in self.configs])
        self._c = np.array([cfg.c for cfg in self.configs])
        self._whole = np.array([[cfg.embb_overflow is Overflow.WHOLE] for cfg in self.configs])
        self._any_whole = bool(self._whole.any())
        self.embb_idle = all(cfg.embb_arrival_max == 0 for cfg in self.configs)

        methods = [cfg.allocator for cfg in self.configs]
        self._nl = nl = sum(mt in _LEVEL_METHODS for mt in methods)
        self._zmask = np.array([[1.0 if mt is AllocMethod.WATER_FILLING else 0.0] for mt in methods[:nl]])
        self._all_wf = all(mt is AllocMethod.WATER_FILLING for mt in methods[:nl])
        greedy = list(zip(methods[nl:], self.configs[nl:]))
        # descending orders sort on -cap
        self._key_sign = np.array([[-1.0 if mt in (AllocMethod.LARGEST_FIRST, AllocMethod.TWO_STEP) else 1.0]
                                   for mt, _ in greedy]).reshape(-1, 1)
        self._two_step = np.array([1.0 / cfg.m if mt is AllocMethod.TWO_STEP else 0.0 for mt, cfg in greedy])
        self._rand_rows = np.array([[mt is AllocMethod.RANDOM_ORDER] for mt, _ in greedy],
                                   dtype=bool).reshape(-1, 1)
        self._any_rand = bool(self._rand_rows.any())
        self._any_two_step = bool(self._two_step.any())

        self._arr = np.zeros((BLOCK, R, M))
        self._n1 = np.empty((BLOCK, R), dtype=np.int64)
        self._n2 = np.empty((BLOCK, R), dtype=np.int64)
        self._keys = np.full((BLOCK, R - nl, M), 2.0) if self._any_rand else None
        for i, run in enumerate(self.runs):
            if run.static is not None:
                self._n1[:, i], self._n2[:, i] = run.draw_profiles(BLOCK)
        self._t = BLOCK  # position inside the current block of draws

    # -- draws

    def _refill(self) -> None:
        n = BLOCK
        arr, n1, n2 = self._arr, self._n1, self._n2
        for i, run in enumerate(self.runs):
            cfg = run.cfg
            if cfg.embb_arrival_max > 0:
                arr[:, i, : cfg.m] = run.rng["embb-arrivals"].integers(0, cfg.embb_arrival_max + 1, size=(n, cfg.m))
            if run.static is None:
                n1[:, i], n2[:, i] = run.draw_profiles(n)
        self._cap = (n2 + self._a * n1) * self._c
        if self._any_rand:
            for j, run in enumerate(self.runs[self._nl:]):
                if self._rand_rows[j, 0]:
                    self._keys[:, j, : run.cfg.m] = run.rng["random-order"].random((n, run.cfg.m))
        self._t = 0

    # -- eMBB

    def _embb_frame(self, t: int, cap: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One frame of arrivals, requests and grants for every run; returns (requests, budget, grants)."""
        arr = self._arr[t]
        buf = self.buffers
        np.add(buf, arr, out=buf)
        over = np.subtract(buf, self._B)
        np.maximum(over, 0.0, out=over)
        if self._any_whole:
            np.copyto(over, arr, where=self._whole & (over > 0.0))
        np.add(self.lost_bits, over, out=self.lost_bits)
        np.subtract(buf, over, out=buf)
        np.minimum(buf, self._B, out=buf)
        requests = buf.copy()
        budget = np.minimum(cap, np.add.accumulate(requests, axis=1)[:, -1])
        grants = self._allocate(requests, budget, t)
        np.minimum(grants, requests, out=grants)
        np.subtract(buf, grants, out=buf)
        np.maximum(buf, 0.0, out=buf)
        np.add(self.z, grants, out=self.z)
        return requests, budget, grants

    def _allocate(self, r: np.ndarray, L: np.ndarray, t: int) -> np.ndarray:
        nl = self._nl
        if nl == 0:
            return self._greedy(r, L, t)
        z = self.z[:nl] if self._all_wf else np.multiply(self.z[:nl], self._zmask)
        if nl == self.R:
            return level_fill_rows(z, r, L)
        x = np.empty_like(r)
        x[:nl] = level_fill_rows(z, r[:nl], L[:nl])
        x[nl:] = self._greedy(r[nl:], L[nl:], t)
        return x

    def _greedy(self, r: np.ndarray, L: np.ndarray, t: int) -> np.ndarray:
        first = None
        cap = r
        if self._any_two_step:
            # first pass of the two-step rule: everyone gets up to the even share L/m
            first = np.minimum(r, (L * self._two_step)[:, None])
            cap = r - first
            L = L - first.cumsum(axis=1)[:, -1]
        key = np.multiply(cap, self._key_sign)
        if self._any_rand:
            np.copyto(key, self._keys[t], where=self._rand_rows)
        x = greedy_rows(key, cap, L)
        if first is not None:
            x += first
        return x

    def users(self, run: int) -> list[EmbbUserState]:
        m = self.configs[run].m
        return [
            EmbbUserState(float(self.buffers[run, j]), float(self.z[run, j]),
                          float(self.lost_bits[run, j]), float(self.arrived_bits[run, j]))
            for j in range(m)
        ]


def _as_profile_arrays(profile, R: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(profile, ActionProfile):
        profile = [profile] * R
    if len(profile) != R:
        raise ValueError(f"need one profile per run ({R}), got {len(profile)}")
    return np.array([p.n1 for p in profile]), np.array([p.n2 for p in profile])


def step_frame(state: SimState, profile=None) -> FrameEvents:
    """Advance every run in ``state`` by one frame.

    Within the frame: eMBB arrivals (what does not fit in ``B`` is lost),
    requests equal to buffer contents, grant budget
    ``L = min((n2 + a*n1)*c, sum(requests))``, allocation, then the URLLC mini
    slots of the frame. ``profile`` overrides the region split: one
    :class:`ActionProfile` for all runs or a sequence with one per run; by
    default each run uses its own split strategy.
    """
    if state._t >= BLOCK:
        state._refill()
    t = state._t
    if profile is None:
        n1, n2 = state._n1[t], state._n2[t]
        cap = state._cap[t]
    else:
        n1, n2 = _as_profile_arrays(profile, state.R)
        for cfg, k1, k2 in zip(state.configs, n1, n2):
            if not (0 <= k1 and 0 <= k2 and k1 + k2 <= cfg.N):
                raise ValueError(f"profile ({k1}, {k2}) does not fit N={cfg.N}")
        cap = (n2 + state._a * n1) * state._c
    arrived = state._arr[t]
    lost_before = state.lost_bits.cumsum(axis=1)[:, -1]
    state.arrived_bits += arrived
    requests, budget, grants = state._embb_frame(t, cap)
    lost = state.lost_bits.cumsum(axis=1)[:, -1] - lost_before
    R = state.R
    u_arr = np.zeros(R, dtype=np.int64)
    u_done = np.zeros(R, dtype=np.int64)
    u_lost = np.zeros(R, dtype=np.int64)
    social = np.empty(R)
    for i, run in enumerate(state.runs):
        u_arr[i], u_done[i], u_lost[i] = run.urllc_frames(state.frame, n1[i : i + 1])
        run.profile_counts[n1[i] * (run.cfg.N + 1) + n2[i]] += 1
        social[i] = run.payoff[n1[i], n2[i]]
    state._t += 1
    state.frame += 1
    return FrameEvents(
        frame=state.frame - 1, n1=np.array(n1), n2=np.array(n2), budget=budget, requests=requests,
        grants=grants, embb_arrived=arrived.sum(axis=1), embb_lost=lost, urllc_arrived=u_arr,
        urllc_resolved=u_done, urllc_lost=u_lost, social_payoff=social,
    )


# ---------------------------------------------------------------- whole run


@dataclass
class MetricsReport:
    allocator: str
    split_strategy: str
    frames: int
    seed: int
    n1: int
    n2: int
    urllc_arrived: int
    urllc_lost: int
    urllc_loss_prob: float
    embb_arrived_bits: float
    embb_lost_bits: float
    embb_loss_prob: float
    sample_variance: float
    jain_index: float
    social_payoff: float
    final_z: list[float] = field(default_factory=list, repr=False)

    METRIC_COLUMNS = (
        "n1", "n2", "urllc_arrived", "urllc_lost", "urllc_loss_prob",
        "embb_arrived_bits", "embb_lost_bits", "embb_loss_prob",
        "sample_variance", "jain_index", "social_payoff",
    )

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in self.METRIC_COLUMNS}


def _report(state: SimState, i: int) -> MetricsReport:
    run = state.runs[i]
    cfg = run.cfg
    m = cfg.m
    ch = run.channel
    arrived = float(state.arrived_bits[i, :m].sum())
    lost = float(state.lost_bits[i, :m].sum())
    z = state.z[i, :m].tolist()
    frames = state.frame
    social = float(np.dot(run.profile_counts, run.payoff.ravel())) / frames if frames else 0.0
    return MetricsReport(
        allocator=cfg.allocator.value,
        split_strategy=cfg.split_strategy.value,
        frames=frames,
        seed=cfg.seed,
        n1=-1 if run.static is None else run.static.n1,
        n2=-1 if run.static is None else run.static.n2,
        urllc_arrived=ch.arrived,
        urllc_lost=ch.lost,
        urllc_loss_prob=ch.lost / ch.arrived if ch.arrived else 0.0,
        embb_arrived_bits=arrived,
        embb_lost_bits=lost,
        embb_loss_prob=lost / arrived if arrived else 0.0,
        sample_variance=sample_variance(z) if m >= 2 else 0.0,
        jain_index=jain_index(z),
        social_payoff=social,
        final_z=z,
    )


def _run_group(configs: Sequence[SimConfig], trace: IO[str] | None) -> list[MetricsReport]:
    state = SimState(configs)
    frames = configs[0].frames
    if trace is not None:
        for _ in range(frames):
            ev = step_frame(state)
            for rec in ev.records(state.configs):
                trace.write(json.dumps(rec, separators=(",", ":")) + "\n")
    else:
        # same arithmetic as step_frame, with the per-run URLLC work done once per block
        while state.frame < frames:
            state._refill()
            n = min(BLOCK, frames - state.frame)
            if not state.embb_idle:
                cap = state._cap
                arr = state._arr
                for t in range(n):
                    np.add(state.arrived_bits, arr[t], out=state.arrived_bits)
                    state._embb_frame(t, cap[t])
            for i, run in enumerate(state.runs):
                n1 = state._n1[:n, i]
                run.urllc_frames(state.frame, n1)
                N = run.cfg.N
                run.profile_counts += np.bincount(n1 * (N + 1) + state._n2[:n, i], minlength=(N + 1) * (N + 1))
            state._t = n
            state.frame += n
    for run in state.runs:
        run.channel.resolve(math.inf)
    reports: list = [None] * len(configs)
    for i, pos in enumerate(state.positions):
        reports[pos] = _report(state, i)
    return reports


def run_batch(configs: Sequence[SimConfig], trace: IO[str] | None = None) -> list[MetricsReport]:
    """Simulate several independent runs together; reports come back in input order.

    Runs with equal ``frames`` share one lockstep state. Each run's report is
    what :func:`run_simulation` gives for it alone. URLLC packets whose window
    runs past the last frame are settled against the transmissions generated
    so far. With ``trace``, one JSON object per run per frame is written.
    """
    configs = list(configs)
    reports: list = [None] * len(configs)
    groups: dict[int, list[int]] = {}
    for i, cfg in enumerate(configs):
        groups.setdefault(cfg.frames, []).append(i)
    for frames in sorted(groups):
        idx = groups[frames]
        for i, rep in zip(idx, _run_group([configs[i] for i in idx], trace)):
            reports[i] = rep
    return reports


def run_simulation(config: SimConfig, trace: IO[str] | None = None) -> MetricsReport:
    """Run ``config.frames`` frames of one configuration and summarize them.

    ``n1``/``n2`` in the report are the static split, or ``-1`` under
    ``RANDOM``. Fairness metrics are taken on the final cumulative grants;
    social payoff is the per-frame average.
    """
    return run_batch([config], trace)[0]
