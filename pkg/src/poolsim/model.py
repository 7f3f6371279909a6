"""Core model types for utility-driven dispatch across heterogeneous server pools.

A system has ``m`` pool classes. Class ``i`` contains a fraction ``alpha[i]`` of
the ``n`` pools and earns utility ``u_i(x)`` when one of its pools holds ``x``
tasks. All utilities are concave in the integer occupancy, so the marginal gain
of slot ``(i, j)`` (raising some class-``i`` pool from ``j-1`` to ``j`` tasks)
is non-increasing in ``j``. Ranking slots by marginal gain, with a fixed
dictionary rule for ties, yields the total order that drives both the greedy
assignment and the dispatch policies.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Coordinate",
    "Utility",
    "LogQuality",
    "Linear",
    "CappedLinear",
    "Tabulated",
    "UtilityFamily",
    "Enumeration",
    "SystemConfig",
    "QVector",
    "OccupancyState",
    "marginal",
    "rank_precedes",
    "enumerate_ranked",
    "overall_utility",
    "occupancy_to_q",
    "utility_from_dict",
]

#: Hard cap on how many slots any ranked walk may visit before giving up.
MAX_ENUMERATION = 10**6

CONCAVITY_TOL = 1e-12


class Coordinate(NamedTuple):
    """Slot ``(cls, level)``: headroom for one task at depth ``level`` in class ``cls``.

    Classes are numbered from 1. ``level >= 1``; the slot is occupied in a pool
    holding at least ``level`` tasks. Tuple comparison on this type is plain
    dictionary order, not rank order; use :meth:`UtilityFamily.rank_precedes`
    to compare slots by rank.
    """

    cls: int
    level: int


# ---------------------------------------------------------------------------
# Utility families
# ---------------------------------------------------------------------------


class Utility:
    """Concave utility of integer per-pool occupancy."""

    kind: str = "?"

    def value(self, x: int) -> float:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        inner = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({inner})"


@dataclass(frozen=True, repr=False)
class LogQuality(Utility):
    """u(x) = x * log(r / x), with u(0) = 0. Peaks near x = r / e."""

    r: float
    kind = "log_quality"

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"log_quality utility needs r > 0, got {self.r}")

    def value(self, x: int) -> float:
        if x == 0:
            return 0.0
        return x * math.log(self.r / x)

    def params(self) -> dict:
        return {"r": self.r}


@dataclass(frozen=True, repr=False)
class Linear(Utility):
    """u(x) = slope * x."""

    slope: float
    kind = "linear"

    def value(self, x: int) -> float:
        return self.slope * x

    def params(self) -> dict:
        return {"slope": self.slope}


@dataclass(frozen=True, repr=False)
class CappedLinear(Utility):
    """u(x) = slope * min(x, cap): linear up to ``cap`` tasks, flat beyond."""

    slope: float
    cap: int
    kind = "capped_linear"

    def __post_init__(self) -> None:
        # A negative slope would make the marginal jump up to 0 at the cap.
        if self.slope < 0:
            raise ValueError("capped_linear utility needs slope >= 0")
        if not (isinstance(self.cap, int) and self.cap >= 1):
            raise ValueError(f"capped_linear cap must be an integer >= 1, got {self.cap!r}")

    def value(self, x: int) -> float:
        return self.slope * min(x, self.cap)

    def params(self) -> dict:
        return {"slope": self.slope, "cap": self.cap}


@dataclass(frozen=True, repr=False)
class Tabulated(Utility):
    """Utility given by a table ``values[x]`` for x = 0..len-1.

    Past the end of the table the function continues linearly with the final
    tabulated marginal, which keeps it concave everywhere.
    """

    values: tuple[float, ...]
    kind = "table"

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("table utility needs at least two values")
        diffs = [vals[k + 1] - vals[k] for k in range(len(vals) - 1)]
        for k in range(len(diffs) - 1):
            if diffs[k + 1] > diffs[k] + CONCAVITY_TOL:
                raise ValueError(
                    f"table utility is not concave: marginal rises from {diffs[k]} to "
                    f"{diffs[k + 1]} at occupancy {k + 1}"
                )

    def value(self, x: int) -> float:
        last = len(self.values) - 1
        if x <= last:
            return self.values[x]
        tail_slope = self.values[last] - self.values[last - 1]
        return self.values[last] + (x - last) * tail_slope

    def params(self) -> dict:
        return {"values": list(self.values)}


_UTILITY_KINDS = {
    "log_quality": lambda p: LogQuality(r=float(p["r"])),
    "linear": lambda p: Linear(slope=float(p["slope"])),
    "capped_linear": lambda p: CappedLinear(slope=float(p["slope"]), cap=int(p["cap"])),
    "table": lambda p: Tabulated(values=tuple(p["values"])),
}

_UTILITY_FIELDS = {
    "log_quality": {"r"},
    "linear": {"slope"},
    "capped_linear": {"slope", "cap"},
    "table": {"values"},
}


def utility_from_dict(spec: dict) -> Utility:
    """Build a utility from its config form, e.g. {"kind": "linear", "slope": 2.0}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"utility spec must be an object with a 'kind' field, got {spec!r}")
    kind = spec["kind"]
    if kind not in _UTILITY_KINDS:
        known = ", ".join(sorted(_UTILITY_KINDS))
        raise ValueError(f"unknown utility kind {kind!r} (known kinds: {known})")
    extra = set(spec) - _UTILITY_FIELDS[kind] - {"kind"}
    missing = _UTILITY_FIELDS[kind] - set(spec)
    if missing:
        raise ValueError(f"utility kind {kind!r} is missing fields: {sorted(missing)}")
    if extra:
        raise ValueError(f"utility kind {kind!r} has unexpected fields: {sorted(extra)}")
    return _UTILITY_KINDS[kind](spec)


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


class UtilityFamily:
    """The per-class utilities of a system plus the slot ranking they induce.

    Marginals are cached per class. Rank comparisons use exact float equality
    to detect ties by default; ``tie_tol`` widens the tie band for diagnostics
    (note that with a positive tolerance the relation is no longer transitive,
    so the lazy enumeration always uses the exact rule).
    """

    def __init__(self, utilities: Sequence[Utility], tie_tol: float = 0.0):
        if not utilities:
            raise ValueError("need at least one class utility")
        self.utilities: tuple[Utility, ...] = tuple(utilities)
        if tie_tol < 0:
            raise ValueError("tie_tol must be >= 0")
        self.tie_tol = float(tie_tol)
        self._marg: list[list[float]] = [[] for _ in self.utilities]

    @property
    def m(self) -> int:
        return len(self.utilities)

    def value(self, cls: int, x: int) -> float:
        return self.utilities[cls - 1].value(x)

    def marginal(self, cls: int, occ: int) -> float:
        """Utility gained by a class-``cls`` pool going from ``occ`` to ``occ + 1`` tasks."""
        if occ < 0:
            raise ValueError(f"occupancy must be >= 0, got {occ}")
        cache = self._marg[cls - 1]
        if occ >= len(cache):
            u = self.utilities[cls - 1]
            lo = u.value(len(cache))
            for x in range(len(cache), occ + 1):
                hi = u.value(x + 1)
                cache.append(hi - lo)
                lo = hi
        return cache[occ]

    def marginals_upto(self, cls: int, occ: int) -> list[float]:
        """Marginals for occupancies 0..occ-1 of one class (a direct list view)."""
        if occ > 0:
            self.marginal(cls, occ - 1)
        return self._marg[cls - 1][:occ]

    def _rank_key(self, coord: Coordinate) -> tuple[float, int, int]:
        # Sorting ascending by this key lists slots from best to worst: higher
        # marginal first, ties resolved toward the dictionary-smaller slot.
        return (-self.marginal(coord.cls, coord.level - 1), coord.cls, coord.level)

    def rank_precedes(self, a: Coordinate, b: Coordinate, tol: float | None = None) -> bool:
        """True when slot ``a`` ranks strictly below slot ``b``."""
        if tol is None:
            tol = self.tie_tol
        da = self.marginal(a.cls, a.level - 1)
        db = self.marginal(b.cls, b.level - 1)
        if da < db - tol:
            return True
        if db < da - tol:
            return False
        # Tie: the dictionary-smaller slot ranks higher.
        return (a.cls, a.level) > (b.cls, b.level)

    def ranked(self) -> Iterator[Coordinate]:
        """Slots from best to worst, lazily merged across classes.

        Within one class the rank strictly decreases with the level (the
        marginal is non-increasing and the dictionary rule breaks exact ties
        toward the shallower slot), so an m-way merge over per-class streams
        enumerates the full order.
        """
        heap: list[tuple[float, int, int]] = []
        for cls in range(1, self.m + 1):
            heap.append((-self.marginal(cls, 0), cls, 1))
        heapq.heapify(heap)
        while True:
            neg, cls, level = heapq.heappop(heap)
            yield Coordinate(cls, level)
            heapq.heappush(heap, (-self.marginal(cls, level), cls, level + 1))

    def enumerate_ranked(self, count: int) -> list[Coordinate]:
        """The best ``count`` slots in rank order."""
        if count < 0:
            raise ValueError("count must be >= 0")
        if count > MAX_ENUMERATION:
            raise ValueError(f"refusing to enumerate more than {MAX_ENUMERATION} slots")
        return list(itertools.islice(self.ranked(), count))

    def value_at_zero(self, cls: int) -> float:
        return self.utilities[cls - 1].value(0)


class Enumeration:
    """Cached, extensible view of the ranked slot list of one family.

    Ranks are 1-based: ``slot(1)`` is the best slot overall.
    """

    def __init__(self, family: UtilityFamily):
        self.family = family
        self._gen = family.ranked()
        self._slots: list[Coordinate] = []
        self._rank_of: dict[Coordinate, int] = {}

    def _extend_to(self, count: int) -> None:
        if count > MAX_ENUMERATION:
            raise RuntimeError(f"ranked walk exceeded {MAX_ENUMERATION} slots")
        while len(self._slots) < count:
            coord = next(self._gen)
            self._slots.append(coord)
            self._rank_of[coord] = len(self._slots)

    def slot(self, rank: int) -> Coordinate:
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        self._extend_to(rank)
        return self._slots[rank - 1]

    def rank_of(self, coord: Coordinate) -> int:
        """1-based position of a slot in the ranking."""
        while coord not in self._rank_of:
            self._extend_to(len(self._slots) + 1)
        return self._rank_of[coord]

    def prefix(self, count: int) -> list[Coordinate]:
        self._extend_to(count)
        return self._slots[:count]

    def class_counts_before(self, rank: int) -> list[int]:
        """Per-class slot counts among ranks 1..rank-1 (how deep each class goes)."""
        self._extend_to(rank - 1)
        counts = [0] * self.family.m
        for coord in self._slots[: rank - 1]:
            counts[coord.cls - 1] += 1
        return counts


# ---------------------------------------------------------------------------
# System configuration
# ---------------------------------------------------------------------------


ALPHA_SUM_TOL = 1e-12
ALPHA_INT_TOL = 1e-9


def _check_fractions(alpha: Sequence[float]) -> tuple[float, ...]:
    alpha = tuple(float(a) for a in alpha)
    if not alpha:
        raise ValueError("need at least one class fraction")
    for k, a in enumerate(alpha):
        if not a > 0:
            raise ValueError(f"class fraction {k + 1} must be > 0, got {a}")
    if abs(sum(alpha) - 1.0) > ALPHA_SUM_TOL:
        raise ValueError(f"class fractions must sum to 1, got {sum(alpha)!r}")
    return alpha


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """A finite system: n pools split by ``alpha``, arrivals at rate n*lam, services at rate mu.

    ``lam`` is the arrival rate per pool of capacity; the offered load per pool
    is ``rho = lam / mu``. Every ``n * alpha[i]`` must be a whole number of pools.
    """

    n: int
    alpha: tuple[float, ...]
    lam: float
    mu: float
    family: UtilityFamily

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", _check_fractions(self.alpha))
        if len(self.alpha) != self.family.m:
            raise ValueError(
                f"got {len(self.alpha)} class fractions but {self.family.m} utilities"
            )
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError(f"n must be an integer >= 1, got {self.n!r}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        # lam == 0 is allowed: it models a draining system with no arrivals.
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        for i, a in enumerate(self.alpha):
            pools = a * self.n
            if abs(pools - round(pools)) > ALPHA_INT_TOL:
                raise ValueError(
                    f"n * alpha must be integral: class {i + 1} would get {pools} pools"
                )

    @classmethod
    def from_rho(
        cls,
        n: int,
        alpha: Sequence[float],
        rho: float,
        mu: float,
        family: UtilityFamily,
    ) -> "SystemConfig":
        return cls(n=n, alpha=tuple(alpha), lam=rho * mu, mu=mu, family=family)

    @property
    def m(self) -> int:
        return len(self.alpha)

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def class_sizes(self) -> tuple[int, ...]:
        return tuple(int(round(a * self.n)) for a in self.alpha)


# ---------------------------------------------------------------------------
# Occupancy descriptors
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class QVector:
    """Tail occupancy profile: ``tail[i-1, j]`` is the fraction of all pools that
    are of class ``i`` and hold at least ``j`` tasks.

    Column 0 equals ``alpha`` by definition. Entries beyond the stored depth
    are zero. Feasible profiles are non-increasing along each row.
    """

    alpha: np.ndarray
    tail: np.ndarray

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.tail = np.asarray(self.tail, dtype=np.float64)
        if self.tail.ndim != 2 or self.tail.shape[0] != self.alpha.shape[0]:
            raise ValueError("tail must be a (classes, depth+1) matrix")
        if not np.allclose(self.tail[:, 0], self.alpha, rtol=0, atol=1e-12):
            raise ValueError("tail column 0 must equal the class fractions")

    @classmethod
    def zeros(cls, alpha: Sequence[float], depth: int) -> "QVector":
        alpha = np.asarray(alpha, dtype=np.float64)
        tail = np.zeros((alpha.shape[0], depth + 1))
        tail[:, 0] = alpha
        return cls(alpha=alpha, tail=tail)

    @property
    def m(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def depth(self) -> int:
        return int(self.tail.shape[1]) - 1

    def get(self, cls: int, level: int) -> float:
        if level < 0:
            raise ValueError("level must be >= 0")
        if level > self.depth:
            return 0.0
        return float(self.tail[cls - 1, level])

    def mass(self) -> float:
        """Total tasks per pool: the sum of all tail entries at levels >= 1."""
        return float(self.tail[:, 1:].sum())

    def class_mass(self) -> np.ndarray:
        return self.tail[:, 1:].sum(axis=1)

    def l1_distance(self, other: "QVector") -> float:
        if self.m != other.m:
            raise ValueError("profiles have different class counts")
        depth = max(self.depth, other.depth)
        a = np.zeros((self.m, depth + 1))
        b = np.zeros((self.m, depth + 1))
        a[:, : self.depth + 1] = self.tail
        b[:, : other.depth + 1] = other.tail
        return float(np.abs(a - b).sum())

    def to_pairs(self, tol: float = 0.0) -> list[tuple[int, int, float]]:
        """Sparse (cls, level, value) triples for levels >= 1 with value > tol."""
        out = []
        for ci in range(self.m):
            for j in range(1, self.depth + 1):
                v = float(self.tail[ci, j])
                if v > tol:
                    out.append((ci + 1, j, v))
        return out


class OccupancyState:
    """Mutable pool-level state of a finite system.

    Pools are numbered 0..n-1 and grouped by class. ``buckets[ci][v]`` lists the
    pools of class ``ci+1`` currently holding exactly ``v`` tasks, and ``pos``
    gives each pool's index inside its bucket so moves are O(1). The counts
    ``N(i, j) = len(buckets[i-1][j])`` have finite support: every level beyond
    the deepest pool is an empty list.

    The event loop in :mod:`poolsim.sim` mutates these structures in place (see
    the inlined equivalents of :meth:`push_task` / :meth:`pop_task` there).
    """

    __slots__ = (
        "n",
        "alpha",
        "class_sizes",
        "pool_class",
        "occ",
        "pos",
        "buckets",
        "total_tasks",
        "_min_occ",
    )

    def __init__(
        self,
        n: int,
        alpha: Sequence[float],
        occupancies: Sequence[Sequence[int]],
    ):
        self.alpha = _check_fractions(alpha)
        self.n = int(n)
        sizes = []
        for a in self.alpha:
            pools = a * self.n
            if abs(pools - round(pools)) > ALPHA_INT_TOL:
                raise ValueError(f"n * alpha must be integral, got {pools}")
            sizes.append(int(round(pools)))
        self.class_sizes = sizes
        if len(occupancies) != len(sizes):
            raise ValueError("need one occupancy list per class")
        self.pool_class: list[int] = []
        self.occ: list[int] = []
        self.pos: list[int] = []
        self.buckets: list[list[list[int]]] = []
        self.total_tasks = 0
        self._min_occ = [0] * len(sizes)
        pool = 0
        for ci, (size, occs) in enumerate(zip(sizes, occupancies)):
            if len(occs) != size:
                raise ValueError(
                    f"class {ci + 1} needs {size} pool occupancies, got {len(occs)}"
                )
            depth = max(occs, default=0)
            levels: list[list[int]] = [[] for _ in range(depth + 2)]
            for v in occs:
                if v < 0:
                    raise ValueError("occupancies must be >= 0")
                self.pool_class.append(ci)
                self.occ.append(v)
                self.pos.append(len(levels[v]))
                levels[v].append(pool)
                self.total_tasks += v
                pool += 1
            self.buckets.append(levels)
            self._min_occ[ci] = min(occs, default=0)

    # -- constructors -------------------------------------------------------

    @classmethod
    def empty(cls, n: int, alpha: Sequence[float]) -> "OccupancyState":
        alpha = _check_fractions(alpha)
        sizes = [int(round(a * n)) for a in alpha]
        return cls(n, alpha, [[0] * s for s in sizes])

    @classmethod
    def from_counts(
        cls, n: int, alpha: Sequence[float], counts: Sequence[Sequence[int]]
    ) -> "OccupancyState":
        """Build from per-class occupancy histograms (count of pools per level)."""
        occupancies = []
        for per_level in counts:
            occs: list[int] = []
            for v, c in enumerate(per_level):
                occs.extend([v] * c)
            occupancies.append(occs)
        return cls(n, alpha, occupancies)

    # -- read access ---------------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.class_sizes)

    def count(self, cls: int, occ: int) -> int:
        """Number of class-``cls`` pools holding exactly ``occ`` tasks."""
        levels = self.buckets[cls - 1]
        if occ < 0 or occ >= len(levels):
            return 0
        return len(levels[occ])

    def tail_count(self, cls: int, level: int) -> int:
        """Number of class-``cls`` pools holding at least ``level`` tasks."""
        levels = self.buckets[cls - 1]
        return sum(len(b) for b in levels[level:])

    def frac_at_least(self, cls: int, level: int) -> float:
        return self.tail_count(cls, level) / self.n

    def min_occupied(self, cls: int) -> int:
        """Smallest occupancy among class-``cls`` pools (advances a lazy pointer)."""
        ci = cls - 1
        levels = self.buckets[ci]
        v = self._min_occ[ci]
        while not levels[v]:
            v += 1
        self._min_occ[ci] = v
        return v

    def max_occupied(self, cls: int) -> int:
        levels = self.buckets[cls - 1]
        for v in range(len(levels) - 1, -1, -1):
            if levels[v]:
                return v
        raise ValueError(f"class {cls} has no pools")

    # -- mutation ------------------------------------------------------------

    def push_task(self, pool: int) -> int:
        """Add one task to ``pool``; returns its previous occupancy."""
        ci = self.pool_class[pool]
        v = self.occ[pool]
        levels = self.buckets[ci]
        bucket = levels[v]
        idx = self.pos[pool]
        last = bucket[-1]
        bucket[idx] = last
        self.pos[last] = idx
        bucket.pop()
        if v + 2 >= len(levels):
            levels.append([])
        dest = levels[v + 1]
        self.pos[pool] = len(dest)
        dest.append(pool)
        self.occ[pool] = v + 1
        self.total_tasks += 1
        return v

    def pop_task(self, pool: int) -> int:
        """Remove one task from ``pool``; returns its previous occupancy."""
        ci = self.pool_class[pool]
        v = self.occ[pool]
        if v == 0:
            raise ValueError(f"pool {pool} has no tasks")
        levels = self.buckets[ci]
        bucket = levels[v]
        idx = self.pos[pool]
        last = bucket[-1]
        bucket[idx] = last
        self.pos[last] = idx
        bucket.pop()
        dest = levels[v - 1]
        self.pos[pool] = len(dest)
        dest.append(pool)
        self.occ[pool] = v - 1
        if v - 1 < self._min_occ[ci]:
            self._min_occ[ci] = v - 1
        self.total_tasks -= 1
        return v

    # -- conversions and checks ----------------------------------------------

    def histogram(self, cls: int) -> list[int]:
        return [len(b) for b in self.buckets[cls - 1]]

    def aggregate_value(self, family: UtilityFamily) -> float:
        """Sum of per-pool utilities across the whole system (not normalized)."""
        total = 0.0
        for ci, levels in enumerate(self.buckets):
            for v, bucket in enumerate(levels):
                if bucket:
                    total += len(bucket) * family.value(ci + 1, v)
        return total

    def check_consistency(self) -> None:
        """Full O(n) structural audit; used by tests and debug hooks."""
        tasks = 0
        for ci, levels in enumerate(self.buckets):
            seen = 0
            for v, bucket in enumerate(levels):
                for idx, pool in enumerate(bucket):
                    assert self.pool_class[pool] == ci
                    assert self.occ[pool] == v
                    assert self.pos[pool] == idx
                seen += len(bucket)
                tasks += v * len(bucket)
            assert seen == self.class_sizes[ci], "bucket sizes disagree with class size"
            assert self._min_occ[ci] <= self.min_occupied(ci + 1)
        assert tasks == self.total_tasks, "cached task total is stale"


def occupancy_to_q(state: OccupancyState) -> QVector:
    """Tail fractions of an occupancy state: right cumulative counts over n."""
    depth = 0
    for cls in range(1, state.m + 1):
        levels = state.buckets[cls - 1]
        for v in range(len(levels) - 1, -1, -1):
            if levels[v]:
                depth = max(depth, v)
                break
    tail = np.zeros((state.m, depth + 1))
    for ci in range(state.m):
        hist = np.zeros(depth + 1)
        for v, bucket in enumerate(state.buckets[ci]):
            if bucket and v <= depth:
                hist[v] = len(bucket)
        tail[ci] = hist[::-1].cumsum()[::-1] / state.n
    tail[:, 0] = state.alpha
    return QVector(alpha=np.asarray(state.alpha), tail=tail)


# ---------------------------------------------------------------------------
# The overall utility functional
# ---------------------------------------------------------------------------


def overall_utility(family: UtilityFamily, q: QVector) -> float:
    """Average per-pool utility of a tail profile.

    Summing per-level marginals against the tail profile telescopes to the
    occupancy-weighted utility, so this equals
    ``sum_i sum_j u_i(j) * (fraction of pools of class i at exactly j tasks)``.
    """
    total = 0.0
    for ci in range(q.m):
        cls = ci + 1
        total += family.value_at_zero(cls) * float(q.alpha[ci])
        row = q.tail[ci]
        if q.depth >= 1:
            margs = family.marginals_upto(cls, q.depth)
            # row[j] multiplies the marginal of the step (j-1) -> j
            total += float(np.dot(margs, row[1:]))
    return total


# Module-level conveniences mirroring the family methods.


def marginal(family: UtilityFamily, cls: int, occ: int) -> float:
    return family.marginal(cls, occ)


def rank_precedes(
    family: UtilityFamily, a: Coordinate, b: Coordinate, tol: float | None = None
) -> bool:
    return family.rank_precedes(a, b, tol=tol)


def enumerate_ranked(family: UtilityFamily, count: int) -> list[Coordinate]:
    return family.enumerate_ranked(count)
