"""Event-driven simulation of dispatch policies on a finite system.

Each task gets its full service time when it arrives, drawn from a stream
indexed by arrival order, and enters a calendar of pending departures. Runs
use three counter-based random streams keyed by (seed, replication, stream):
arrival gaps, service durations, and selection draws. Two runs that share the
seed and replication therefore see identical arrival epochs and identical
per-arrival service durations regardless of policy; only the selection stream
(keyed additionally by a per-policy slot) differs, which is what makes paired
policy comparisons low-variance.

Draw order is fixed: services for initial tasks in pool order, then per
arrival one service duration, one decision draw, and one pool-choice draw.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from heapq import heapify, heappop, heappush
from typing import Callable, Iterable, Sequence

import numpy as np

from .assign import optimal_assignment, upper_bound
from .model import (
    MAX_ENUMERATION,
    Enumeration,
    OccupancyState,
    QVector,
    SystemConfig,
    occupancy_to_q,
)
from .policies import Policy, parse_policy

__all__ = [
    "EventCalendar",
    "RunConfig",
    "Metrics",
    "BoundViolation",
    "init_state",
    "simulate",
    "coupled_simulate",
    "batch_means",
]

_STREAM_ARRIVALS = 0
_STREAM_SERVICES = 1
_STREAM_SELECTION = 2

_BLOCK = 1 << 14

#: Tolerance on the average-utility upper bound; anything beyond this is a bug.
BOUND_TOL = 1e-9


class BoundViolation(RuntimeError):
    """The realized average utility exceeded its theoretical ceiling."""


def _stream(seed: int, replication: int, stream: int, sub: int = 0) -> np.random.Generator:
    entropy = (seed, replication, stream, sub)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class EventCalendar:
    """Pending departures as a heap of (time, task id, pool)."""

    entries: list[tuple[float, int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        heapify(self.entries)

    def push(self, when: float, task: int, pool: int) -> None:
        heappush(self.entries, (when, task, pool))

    def pop(self) -> tuple[float, int, int]:
        return heappop(self.entries)

    def peek(self) -> tuple[float, int, int] | None:
        return self.entries[0] if self.entries else None

    def __len__(self) -> int:
        return len(self.entries)

    def audit(self, state: OccupancyState) -> None:
        """Every pool must have exactly as many pending departures as tasks."""
        per_pool = [0] * state.n
        for _, _, pool in self.entries:
            per_pool[pool] += 1
        assert per_pool == state.occ, "calendar disagrees with occupancies"


@dataclass(frozen=True)
class RunConfig:
    """One simulation run.

    ``warmup`` defaults to 0 when starting from the rounded optimal profile and
    to ``5 / mu`` when starting empty (resolved against the system in
    :func:`simulate`). ``sample_times`` asks for tail-profile snapshots on a
    grid; ``batches`` asks for per-batch averages of the mass, for batch-means
    error bars.
    """

    horizon: float
    warmup: float | None = None
    seed: int = 0
    replication: int = 0
    init: str = "empty"
    selection_slot: int = 0
    sample_times: tuple[float, ...] | None = None
    batches: int = 0

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.warmup is not None and not 0 <= self.warmup < self.horizon:
            raise ValueError(f"warmup must lie in [0, horizon), got {self.warmup}")
        if self.seed < 0 or self.replication < 0:
            raise ValueError("seed and replication must be >= 0")
        if self.init not in ("empty", "optimal", "optimal-rounded"):
            raise ValueError(f"init must be 'empty' or 'optimal', got {self.init!r}")
        if self.batches < 0:
            raise ValueError("batches must be >= 0")
        if self.sample_times is not None:
            object.__setattr__(self, "sample_times", tuple(float(t) for t in self.sample_times))
            times = self.sample_times
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("sample_times must be strictly increasing")

    @property
    def starts_optimal(self) -> bool:
        return self.init in ("optimal", "optimal-rounded")


@dataclass
class Metrics:
    """Outcome of one run. Averages are per pool over [warmup, horizon]."""

    policy: str
    n: int
    rho: float
    seed: int
    replication: int
    horizon: float
    warmup: float
    avg_u: float
    avg_s: float
    empirical_bound: float
    bound_rho: float
    r_final: int | None
    switches: int
    events: int
    arrivals: int
    wall_ms: float
    rank_history: list[tuple[float, int]] = field(default_factory=list)
    trajectory: list[tuple[float, QVector]] | None = None
    s_batches: list[float] | None = None

    @property
    def bound_gap(self) -> float:
        """Slack of the average-utility ceiling; negative means a violation."""
        return self.empirical_bound - self.avg_u


def init_state(config: SystemConfig, init: str) -> tuple[OccupancyState, int]:
    """Starting occupancies plus the matching initial learning rank.

    ``empty`` puts every pool at zero and the rank at the bottom. ``optimal``
    rounds the greedy-fill profile to whole tasks: class totals follow the
    largest-remainder split of ``round(n * rho)`` tasks, and each class spreads
    its total as evenly as possible (all pools within one task of each other).
    The rank is then the best-ranked slot the rounded state leaves unsaturated,
    which always satisfies the learning policy's starting requirement.
    """
    if init == "empty":
        return OccupancyState.empty(config.n, config.alpha), 1
    if init not in ("optimal", "optimal-rounded"):
        raise ValueError(f"unknown init mode {init!r}")
    n = config.n
    assign = optimal_assignment(config.family, config.alpha, config.rho)
    class_mass = assign.q_star.class_mass()
    total = int(round(n * config.rho))
    base = []
    rem = []
    for ci in range(config.m):
        x = n * float(class_mass[ci])
        b = int(np.floor(x + 1e-9))
        base.append(b)
        rem.append(x - b)
    short = total - sum(base)
    if not 0 <= short <= config.m:
        raise AssertionError(f"rounding drift: {short} tasks unassigned")
    order = sorted(range(config.m), key=lambda ci: (-rem[ci], ci))
    for ci in order[:short]:
        base[ci] += 1
    occupancies = []
    for ci, tasks in enumerate(base):
        size = config.class_sizes[ci]
        low, extra = divmod(tasks, size)
        occupancies.append([low + 1] * extra + [low] * (size - extra))
    state = OccupancyState(n, config.alpha, occupancies)
    rank = _first_open_rank(config, state)
    return state, rank


def _first_open_rank(config: SystemConfig, state: OccupancyState) -> int:
    """Rank of the best slot not yet filled by every pool of its class."""
    enum = Enumeration(config.family)
    for rank in range(1, MAX_ENUMERATION + 1):
        cls, level = enum.slot(rank)
        if state.tail_count(cls, level) < state.class_sizes[cls - 1]:
            return rank
    raise RuntimeError("no open slot within the enumerable range")


def simulate(
    config: SystemConfig,
    policy: Policy | str,
    run: RunConfig,
    hook: Callable[[str, float, OccupancyState, Policy], None] | None = None,
) -> Metrics:
    """Run one policy over one sample path and return its metrics.

    ``hook(kind, t, state, policy)`` is called after every processed event with
    kind "arrival" or "departure"; it is for tests and debugging only and slows
    the run down considerably.

    Raises :class:`BoundViolation` if the realized average utility lands above
    the ceiling evaluated at the realized average mass, beyond ``BOUND_TOL``.
    """
    if isinstance(policy, str):
        policy = parse_policy(policy)
    family = config.family
    n = config.n
    mu = config.mu
    lam = config.lam
    horizon = run.horizon
    warmup = run.warmup
    if warmup is None:
        warmup = 0.0 if run.starts_optimal else 5.0 / mu
        if warmup >= horizon:
            warmup = 0.0
    started = time.perf_counter()

    state, base_rank = init_state(config, "optimal" if run.starts_optimal else "empty")
    policy.bind(state, config, initial_rank=base_rank)

    arr_gen = _stream(run.seed, run.replication, _STREAM_ARRIVALS)
    svc_gen = _stream(run.seed, run.replication, _STREAM_SERVICES)
    sel_gen = _stream(run.seed, run.replication, _STREAM_SELECTION, run.selection_slot)

    svc_scale = 1.0 / mu
    arr_rate = n * lam

    # Pending departures for tasks present at time zero, pool by pool.
    entries: list[tuple[float, int, int]] = []
    task_id = 0
    for pool, v in enumerate(state.occ):
        if v:
            for dur in svc_gen.exponential(svc_scale, v).tolist():
                entries.append((dur, task_id, pool))
                task_id += 1
    heapify(entries)

    # Local bindings for the event loop.
    buckets = state.buckets
    occ = state.occ
    pos = state.pos
    pool_class = state.pool_class
    min_occ = state._min_occ
    marg = family._marg
    for cls in range(1, state.m + 1):
        family.marginal(cls, max(state.max_occupied(cls), 0) + 1)

    decide = policy.decide
    tracks = policy.tracks_tokens
    notify_push = policy.notify_push
    apply_learning = policy.apply_learning

    u_agg = state.aggregate_value(family)
    s_tot = state.total_tasks

    inf = float("inf")
    arr_buf: list[float] = []
    arr_i = 0
    svc_buf: list[float] = []
    svc_i = 0
    sel_buf: list[float] = []
    sel_i = 0
    if arr_rate > 0:
        arr_scale = 1.0 / arr_rate
        arr_buf = arr_gen.exponential(arr_scale, _BLOCK).tolist()
        next_arr = arr_buf[0]
        arr_i = 1
    else:
        arr_scale = 0.0
        next_arr = inf

    acc_u = 0.0
    comp_u = 0.0
    acc_s = 0.0
    comp_s = 0.0
    t_last = 0.0
    events = 0
    arrivals = 0
    switches = 0
    rank_history: list[tuple[float, int]] = []
    if policy.rank is not None:
        rank_history.append((0.0, policy.rank))

    sample_times = run.sample_times
    si = 0
    trajectory: list[tuple[float, QVector]] | None = None
    if sample_times is not None:
        trajectory = []

    batches = run.batches
    if batches:
        batch_acc = [0.0] * batches
        batch_width = (horizon - warmup) / batches

    while True:
        td = entries[0][0] if entries else inf
        if td <= next_arr:
            te = td
            is_arrival = False
        else:
            te = next_arr
            is_arrival = True
        if te > horizon:
            te = horizon if horizon > t_last else t_last
            done = True
        else:
            done = False
        # Time integral of the piecewise-constant utility and mass.
        if te > warmup and te > t_last:
            lo = t_last if t_last > warmup else warmup
            w = te - lo
            y = u_agg * w - comp_u
            tt = acc_u + y
            comp_u = (tt - acc_u) - y
            acc_u = tt
            y = s_tot * w - comp_s
            tt = acc_s + y
            comp_s = (tt - acc_s) - y
            acc_s = tt
            if batches:
                b = int((lo - warmup) / batch_width)
                rest = w
                edge = warmup + (b + 1) * batch_width
                while edge < te and b < batches - 1:
                    batch_acc[b] += (edge - lo) * s_tot
                    rest -= edge - lo
                    lo = edge
                    b += 1
                    edge += batch_width
                batch_acc[b if b < batches else batches - 1] += rest * s_tot
        if sample_times is not None:
            while si < len(sample_times) and sample_times[si] < te:
                trajectory.append((sample_times[si], occupancy_to_q(state)))
                si += 1
        if done:
            break
        if is_arrival:
            # Service duration is attached to the arrival index.
            if svc_i == len(svc_buf):
                svc_buf = svc_gen.exponential(svc_scale, _BLOCK).tolist()
                svc_i = 0
            dur = svc_buf[svc_i]
            svc_i += 1
            if sel_i >= len(sel_buf) - 1:
                sel_buf = sel_gen.random(_BLOCK).tolist()
                sel_i = 0
            u1 = sel_buf[sel_i]
            u2 = sel_buf[sel_i + 1]
            sel_i += 2
            target, delta = decide(state, u1)
            cls, level = target
            ci = cls - 1
            v = level - 1
            levels = buckets[ci]
            bucket = levels[v]
            idx = int(u2 * len(bucket))
            pool = bucket[idx]
            last = bucket[-1]
            bucket[idx] = last
            pos[last] = idx
            bucket.pop()
            if v + 2 >= len(levels):
                levels.append([])
            dest = levels[v + 1]
            pos[pool] = len(dest)
            dest.append(pool)
            occ[pool] = v + 1
            s_tot += 1
            cache = marg[ci]
            if v >= len(cache):
                family.marginal(cls, v)
            u_agg += cache[v]
            if tracks:
                notify_push(ci, v)
                if delta:
                    state.total_tasks = s_tot
                    apply_learning(delta)
                    switches += 1
                    rank_history.append((te, policy.rank))
            heappush(entries, (te + dur, task_id, pool))
            task_id += 1
            arrivals += 1
            if arr_i == len(arr_buf):
                arr_buf = arr_gen.exponential(arr_scale, _BLOCK).tolist()
                arr_i = 0
            next_arr = te + arr_buf[arr_i]
            arr_i += 1
        else:
            _, _, pool = heappop(entries)
            ci = pool_class[pool]
            v = occ[pool]
            levels = buckets[ci]
            bucket = levels[v]
            idx = pos[pool]
            last = bucket[-1]
            bucket[idx] = last
            pos[last] = idx
            bucket.pop()
            dest = levels[v - 1]
            pos[pool] = len(dest)
            dest.append(pool)
            occ[pool] = v - 1
            if v - 1 < min_occ[ci]:
                min_occ[ci] = v - 1
            s_tot -= 1
            u_agg -= marg[ci][v - 1]
            if tracks:
                policy.notify_pop(ci, v)
        events += 1
        t_last = te
        if hook is not None:
            state.total_tasks = s_tot
            hook("arrival" if is_arrival else "departure", te, state, policy)

    state.total_tasks = s_tot
    if sample_times is not None:
        while si < len(sample_times) and sample_times[si] <= horizon:
            trajectory.append((sample_times[si], occupancy_to_q(state)))
            si += 1
    span = horizon - warmup
    avg_u = acc_u / (n * span)
    avg_s = acc_s / (n * span)
    empirical_bound = upper_bound(family, config.alpha, avg_s)
    bound_rho = upper_bound(family, config.alpha, config.rho)
    wall_ms = (time.perf_counter() - started) * 1e3

    metrics = Metrics(
        policy=policy.name,
        n=n,
        rho=config.rho,
        seed=run.seed,
        replication=run.replication,
        horizon=horizon,
        warmup=warmup,
        avg_u=avg_u,
        avg_s=avg_s,
        empirical_bound=empirical_bound,
        bound_rho=bound_rho,
        r_final=policy.rank,
        switches=switches,
        events=events,
        arrivals=arrivals,
        wall_ms=wall_ms,
        rank_history=rank_history,
        trajectory=trajectory,
        s_batches=(
            [a / (batch_width * n) for a in batch_acc] if batches else None
        ),
    )
    if metrics.bound_gap < -BOUND_TOL:
        raise BoundViolation(
            f"average utility {avg_u} exceeds its ceiling {empirical_bound} "
            f"(policy {policy.name}, n={n}, seed={run.seed}, rep={run.replication})"
        )
    return metrics


def coupled_simulate(
    config: SystemConfig,
    policies: Sequence[Policy | str],
    run: RunConfig,
    selection_slots: Sequence[int] | None = None,
) -> list[Metrics]:
    """Run several policies on the same arrival epochs and service durations.

    Every policy replays identical arrival and service streams; selections come
    from per-policy substreams (slot = position in the list unless overridden).
    Passing equal slots makes identical policies produce bitwise-equal metrics.
    """
    if selection_slots is None:
        selection_slots = list(range(len(policies)))
    if len(selection_slots) != len(policies):
        raise ValueError("need one selection slot per policy")
    out = []
    for policy, slot in zip(policies, selection_slots):
        out.append(simulate(config, policy, replace(run, selection_slot=slot)))
    return out


def batch_means(values: Iterable[float]) -> tuple[float, float]:
    """Mean and its standard error from per-batch averages."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need at least two batches")
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))
