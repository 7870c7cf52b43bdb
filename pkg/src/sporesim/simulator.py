"""Exact event-driven simulation of the spore/host population.

State is aggregated by type: hosts with the same spore count are
exchangeable, so the population is a sparse map {k: n_k} plus the cached
totals N = sum n_k (hosts) and S = sum k*n_k (spores).  Every event is drawn
exactly from the embedded jump chain:

* next event after Exp(rho*N + beta*S),
* removal with probability rho*N / (rho*N + beta*S), the removed host's type
  chosen with probability n_k / N,
* otherwise a release, the releasing host's type chosen with probability
  k*n_k / S; the host becomes type k-1 (vanishing when k-1 = 0, hosts
  without spores are not tracked) and the released spore spawns a type-J
  host, J drawn from the offspring law (nothing is created when J = 0).

A deliberately naive engine (one exponential clock per host and per spore,
no aggregation) lives in :func:`run_to_extinction_reference` as a
distributional oracle for the aggregated engine.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, sample_offspring

RNG_ALGORITHM = "philox4x64-u01/v1"

# python-side refill blocks grow geometrically; the block schedule never
# changes the draw sequence, only how far ahead it is materialized
_FIRST_BLOCK = 128
_MAX_BLOCK = 4096
_MASK64 = (1 << 64) - 1

DEFAULT_MAX_EVENTS = 10**9


def _check_stream_id(seed: int, index: int) -> None:
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must fit in 64 bits")
    if not 0 <= index <= _MASK64:
        raise ValueError("stream index must fit in 64 bits")


class BudgetError(RuntimeError):
    """Event budget exhausted before extinction or horizon.

    Distinguishes runaway (effectively supercritical) inputs from engine
    bugs; carries the replicate index when raised from a batch run.
    """

    def __init__(self, message: str, replicate: int | None = None):
        super().__init__(message)
        self.replicate = replicate


class RandomStream:
    """Counter-based random stream fully determined by (version, seed, index).

    Distinct stream indices under the same master seed give statistically
    independent streams, so batch replicates can be assigned streams by index
    and produce identical results under any execution schedule.  Uniform
    draws are served from an internal block buffer whose refill schedule does
    not affect the draw sequence (only how far ahead it is materialized).
    """

    __slots__ = ("seed", "index", "_bitgen", "_gen", "_buf", "_i", "_block")

    version = RNG_ALGORITHM

    def __init__(self, seed: int, index: int = 0):
        seed = int(seed)
        index = int(index)
        _check_stream_id(seed, index)
        self.seed = seed
        self.index = index
        self._bitgen = np.random.Philox(key=(seed << 64) | index)
        self._gen = np.random.Generator(self._bitgen)
        self._buf: list[float] = []
        self._i = 0
        self._block = _FIRST_BLOCK

    def reseed(self, seed: int, index: int) -> None:
        """Reset in place to the stream (seed, index).

        Produces exactly the sequence of a freshly constructed stream; lets
        sequential batch loops skip per-replicate generator construction.
        """
        seed = int(seed)
        index = int(index)
        _check_stream_id(seed, index)
        state = self._bitgen.state
        inner = state["state"]
        inner["key"][0] = index  # low word
        inner["key"][1] = seed  # high word
        inner["counter"][:] = 0
        state["buffer_pos"] = 4  # mark the native buffer exhausted
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bitgen.state = state
        self.seed = seed
        self.index = index
        self._buf = []
        self._i = 0
        self._block = _FIRST_BLOCK

    def _refill(self) -> list[float]:
        n = self._block
        if n < _MAX_BLOCK:
            self._block = min(n * 8, _MAX_BLOCK)
        self._buf = self._gen.random(n).tolist()
        self._i = 0
        return self._buf

    def uniform01(self) -> float:
        """Next uniform draw in [0, 1)."""
        i = self._i
        buf = self._buf
        if i == len(buf):
            buf = self._refill()
            i = 0
        self._i = i + 1
        return buf[i]

    def exponential(self, rate: float) -> float:
        """Exp(rate) via inverse CDF -ln(U)/rate with U in (0, 1]."""
        return -math.log1p(-self.uniform01()) / rate

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator, for exact parametric samplers."""
        return self._gen


@dataclass
class PopulationState:
    """Sparse per-type host counts with cached totals and a clock.

    Entries with zero hosts are never retained and type 0 never appears.
    Single-owner: one replicate mutates one state, no sharing.
    """

    counts: dict[int, int] = field(default_factory=dict)
    n_hosts: int = 0
    n_spores: int = 0
    clock: float = 0.0

    @classmethod
    def from_counts(cls, counts: dict[int, int], clock: float = 0.0) -> "PopulationState":
        clean: dict[int, int] = {}
        for k, n in counts.items():
            k = int(k)
            n = int(n)
            if n < 0 or k < 1:
                raise ValueError("counts must map types >= 1 to nonnegative host counts")
            if n > 0:
                clean[k] = clean.get(k, 0) + n
        return cls(
            counts=clean,
            n_hosts=sum(clean.values()),
            n_spores=sum(k * n for k, n in clean.items()),
            clock=float(clock),
        )

    def copy(self) -> "PopulationState":
        return PopulationState(
            counts=dict(self.counts),
            n_hosts=self.n_hosts,
            n_spores=self.n_spores,
            clock=self.clock,
        )

    @property
    def extinct(self) -> bool:
        return self.n_hosts == 0

    def total_rate(self, m: ModelParams) -> float:
        return m.rho * self.n_hosts + m.beta * self.n_spores

    def check_consistency(self) -> None:
        """Recompute the cached totals from the counts; exact match required."""
        assert all(k >= 1 and n > 0 for k, n in self.counts.items()), self.counts
        assert self.n_hosts == sum(self.counts.values()), (self.n_hosts, self.counts)
        assert self.n_spores == sum(k * n for k, n in self.counts.items()), (
            self.n_spores,
            self.counts,
        )


@dataclass(frozen=True)
class EventRecord:
    """One applied event: the new clock value, what happened, to which type,
    and the sampled offspring count (None for removals)."""

    time: float
    kind: str  # "removal" or "release"
    host_type: int
    offspring: int | None


@dataclass(frozen=True)
class SimOutcome:
    """Result of one replicate.

    ``extinction_time`` is None when the run was censored at ``horizon``
    (the population was still alive there); censoring doubles as the
    survival indicator.
    """

    extinction_time: float | None
    horizon: float | None
    event_count: int
    peak_hosts: int

    @property
    def censored(self) -> bool:
        return self.extinction_time is None

    def __post_init__(self) -> None:
        if self.extinction_time is None and self.horizon is None:
            raise ValueError("censored outcome requires a horizon")
        if self.extinction_time is not None and self.extinction_time < 0.0:
            raise ValueError("extinction time must be nonnegative")


def step(state: PopulationState, m: ModelParams, rng: RandomStream) -> EventRecord:
    """Apply one exact event to ``state`` in place.

    Draw order (the fast path in :func:`run_to_extinction` consumes the
    stream identically): one uniform for the waiting time, one for the
    combined event-kind/type selection, and for releases one more for a
    table offspring draw (parametric laws use the generator directly).
    """
    if state.n_hosts < 1:
        raise ValueError("step requires a non-extinct state")
    rho = m.rho
    beta = m.beta
    counts = state.counts

    total = rho * state.n_hosts + beta * state.n_spores
    state.clock += -math.log1p(-rng.uniform01()) / total
    r = rng.uniform01() * total
    removal_rate = rho * state.n_hosts

    if r < removal_rate:
        k = _walk_removal(counts, r, rho)
        _apply_removal(state, k)
        return EventRecord(time=state.clock, kind="removal", host_type=k, offspring=None)

    k = _walk_release(counts, r - removal_rate, beta)
    j = sample_offspring(m.offspring, rng)
    _apply_release(state, k, j)
    return EventRecord(time=state.clock, kind="release", host_type=k, offspring=j)


def _walk_removal(counts: dict[int, int], x: float, rho: float) -> int:
    """Pick the removed type: cumulative walk over rho*n_k in ascending type order."""
    last = 0
    for k in sorted(counts):
        x -= rho * counts[k]
        last = k
        if x < 0.0:
            return k
    return last  # x landed on the top edge by rounding


def _walk_release(counts: dict[int, int], x: float, beta: float) -> int:
    """Pick the releasing type: cumulative walk over beta*k*n_k in ascending order."""
    last = 0
    for k in sorted(counts):
        x -= beta * k * counts[k]
        last = k
        if x < 0.0:
            return k
    return last


def _apply_removal(state: PopulationState, k: int) -> None:
    n = state.counts[k] - 1
    if n:
        state.counts[k] = n
    else:
        del state.counts[k]
    state.n_hosts -= 1
    state.n_spores -= k


def _apply_release(state: PopulationState, k: int, j: int) -> None:
    counts = state.counts
    n = counts[k] - 1
    if n:
        counts[k] = n
    else:
        del counts[k]
    state.n_spores -= 1
    if k > 1:
        counts[k - 1] = counts.get(k - 1, 0) + 1
    else:
        state.n_hosts -= 1  # a type-1 host vanishes with its last spore
    if j >= 1:
        counts[j] = counts.get(j, 0) + 1
        state.n_hosts += 1
        state.n_spores += j


def run_to_extinction(
    init: PopulationState,
    m: ModelParams,
    rng: RandomStream,
    horizon: float | None = None,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> SimOutcome:
    """Run one replicate until the population dies out or passes ``horizon``.

    The input state is not mutated.  Bit-identical to iterating :func:`step`
    on the same stream.  Raises :class:`BudgetError` after ``max_events``
    events, which converts misconfigured (near- or supercritical) runs into
    a clean error instead of a hang.
    """
    if max_events < 1:
        raise ValueError("max_events must be >= 1")

    rho = m.rho
    beta = m.beta
    off = m.offspring
    table_kind = off.kind == "table"
    cum = off.cumulative if table_kind else ()
    gen = rng.generator
    param = off.param

    # dense counts indexed by type; grows on demand
    top = max(init.counts, default=0)
    if table_kind:
        top = max(top, len(off.probs) - 1)
    cnt = [0] * (top + 2)
    for k, n in init.counts.items():
        cnt[k] = n
    n_hosts = init.n_hosts
    n_spores = init.n_spores
    t = init.clock
    peak = n_hosts
    events = 0

    buf = rng._buf
    i = rng._i

    while n_hosts:
        # waiting time
        if i == len(buf):
            buf = rng._refill()
            i = 0
        u = buf[i]
        i += 1
        total = rho * n_hosts + beta * n_spores
        t_next = t + -math.log1p(-u) / total
        if horizon is not None and t_next > horizon:
            rng._i = i
            return SimOutcome(
                extinction_time=None, horizon=horizon, event_count=events, peak_hosts=peak
            )
        t = t_next
        events += 1
        if events > max_events:
            rng._i = i
            raise BudgetError(
                f"event budget {max_events} exhausted at t={t:g} with {n_hosts} hosts; "
                "the model may be critical or supercritical"
            )

        # event kind and type, one uniform across the combined rate
        if i == len(buf):
            buf = rng._refill()
            i = 0
        r = buf[i] * total
        i += 1
        removal_rate = rho * n_hosts

        if r < removal_rate:
            x = r
            k = 0
            last = 0
            for k in range(1, len(cnt)):
                c = cnt[k]
                if c:
                    x -= rho * c
                    last = k
                    if x < 0.0:
                        break
            else:
                k = last
            cnt[k] -= 1
            n_hosts -= 1
            n_spores -= k
        else:
            x = r - removal_rate
            k = 0
            last = 0
            for k in range(1, len(cnt)):
                c = cnt[k]
                if c:
                    x -= beta * k * c
                    last = k
                    if x < 0.0:
                        break
            else:
                k = last
            cnt[k] -= 1
            n_spores -= 1
            if k == 1:
                n_hosts -= 1
            else:
                cnt[k - 1] += 1
            if table_kind:
                if i == len(buf):
                    buf = rng._refill()
                    i = 0
                u = buf[i]
                i += 1
                j = 0
                while u > cum[j]:
                    j += 1
            else:
                rng._i = i
                if off.kind == "poisson":
                    j = int(gen.poisson(param))
                else:
                    j = int(gen.geometric(param)) - 1
                buf = rng._buf
                i = rng._i
            if j:
                if j >= len(cnt):
                    cnt.extend([0] * (j + 1 - len(cnt)))
                cnt[j] += 1
                n_hosts += 1
                n_spores += j
                if n_hosts > peak:
                    peak = n_hosts

    rng._i = i
    return SimOutcome(extinction_time=t, horizon=horizon, event_count=events, peak_hosts=peak)


def survival_indicator(
    k: int,
    t: float,
    m: ModelParams,
    rng: RandomStream,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> bool:
    """One replicate from a single type-k host; True iff alive at time t."""
    if k < 1:
        raise ValueError("type must be >= 1")
    if t < 0.0:
        raise ValueError("horizon must be nonnegative")
    init = PopulationState.from_counts({k: 1})
    outcome = run_to_extinction(init, m, rng, horizon=t, max_events=max_events)
    return outcome.censored


def run_batch(
    init: PopulationState,
    m: ModelParams,
    master_seed: int,
    replicates: int,
    horizon: float | None = None,
    max_events: int = DEFAULT_MAX_EVENTS,
    threads: int = 1,
) -> list[SimOutcome]:
    """Independent replicates, replicate i on RandomStream(master_seed, i).

    Results are returned in replicate-index order and are identical for any
    ``threads`` value; aggregate statistics must be computed from the ordered
    list.  Budget errors carry the offending replicate index.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")

    def one(index: int, rng: RandomStream) -> SimOutcome:
        try:
            return run_to_extinction(init, m, rng, horizon=horizon, max_events=max_events)
        except BudgetError as e:
            raise BudgetError(f"replicate {index}: {e}", replicate=index) from e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(
                pool.map(lambda i: one(i, RandomStream(master_seed, i)), range(replicates))
            )
    # sequential path reuses one stream object; reseed(i) is bit-identical
    # to constructing RandomStream(master_seed, i)
    rng = RandomStream(master_seed, 0)
    results = []
    for index in range(replicates):
        if index:
            rng.reseed(master_seed, index)
        results.append(one(index, rng))
    return results


def run_to_extinction_reference(
    init: PopulationState,
    m: ModelParams,
    rng: RandomStream,
    horizon: float | None = None,
    max_events: int = 10**6,
) -> SimOutcome:
    """Naive per-clock engine: an oracle for the aggregated one.

    Every host carries its own removal clock and every spore its own release
    clock; all clocks are redrawn after each event (memorylessness makes the
    resampling exact).  O(hosts + spores) work per event, intended only for
    small populations in tests.
    """
    hosts = []
    for k, n in init.counts.items():
        hosts.extend([k] * n)
    t = init.clock
    peak = len(hosts)
    events = 0
    gen = rng.generator

    while hosts:
        n = len(hosts)
        removal = gen.exponential(1.0 / m.rho, size=n) if m.rho > 0.0 else None
        best = math.inf
        best_host = -1
        is_removal = False
        if removal is not None:
            idx = int(np.argmin(removal))
            best = float(removal[idx])
            best_host = idx
            is_removal = True
        for i, k in enumerate(hosts):
            spore_clocks = gen.exponential(1.0 / m.beta, size=k)
            w = float(spore_clocks.min())
            if w < best:
                best = w
                best_host = i
                is_removal = False

        t_next = t + best
        if horizon is not None and t_next > horizon:
            return SimOutcome(
                extinction_time=None, horizon=horizon, event_count=events, peak_hosts=peak
            )
        t = t_next
        events += 1
        if events > max_events:
            raise BudgetError(f"reference engine budget {max_events} exhausted at t={t:g}")

        if is_removal:
            hosts.pop(best_host)
        else:
            k = hosts[best_host] - 1
            if k:
                hosts[best_host] = k
            else:
                hosts.pop(best_host)
            j = sample_offspring(m.offspring, rng)
            if j >= 1:
                hosts.append(j)
                if len(hosts) > peak:
                    peak = len(hosts)

    return SimOutcome(extinction_time=t, horizon=horizon, event_count=events, peak_hosts=peak)
