"""Dispatch policies over occupancy states.

Every policy sees only the occupancy counts, never pool identities: it returns
the slot ``(cls, level)`` an arriving task should fill, meaning "some pool of
that class currently holding level-1 tasks". Pools sharing a slot are
exchangeable, so the simulator picks the concrete pool uniformly.

Policies are configured by string: ``jlmu``, ``slta``, ``random``, or
``fixed:<cls>``.
"""

from __future__ import annotations

from typing import NamedTuple

from .model import (
    Coordinate,
    Enumeration,
    OccupancyState,
    SystemConfig,
    UtilityFamily,
)

__all__ = [
    "PolicyDecision",
    "Policy",
    "Jlmu",
    "Slta",
    "RandomDispatch",
    "FixedClassDispatch",
    "parse_policy",
    "jlmu_target",
    "slta_thresholds",
    "token_counts",
    "slta_target",
    "slta_learn",
    "random_target",
    "fixed_class_target",
]

DEFAULT_LEARNING_EXPONENT = 0.45


class PolicyDecision(NamedTuple):
    """Outcome of one arrival decision: the slot to fill and, for the learning
    policy, the rank adjustment in {-1, 0, +1} to apply after dispatch."""

    target: Coordinate
    learning_delta: int


class Policy:
    """Base dispatcher. Subclasses override :meth:`decide`.

    ``decide`` consumes exactly one uniform draw per arrival (passed in as
    ``u``) whether or not the policy is randomized, which keeps draw
    consumption identical across policies.
    """

    name = "?"
    #: When True the simulator reports every occupancy change via notify_push /
    #: notify_pop so the policy can keep running counters.
    tracks_tokens = False
    #: Current learning rank, for policies that have one.
    rank: int | None = None

    def bind(
        self,
        state: OccupancyState,
        config: SystemConfig,
        initial_rank: int | None = None,
    ) -> None:
        """Attach to a fresh run. Called once before any decision."""

    def decide(self, state: OccupancyState, u: float) -> PolicyDecision:
        raise NotImplementedError

    def notify_push(self, ci: int, prev_occ: int) -> None:  # pragma: no cover
        pass

    def notify_pop(self, ci: int, prev_occ: int) -> None:  # pragma: no cover
        pass

    def apply_learning(self, delta: int) -> None:  # pragma: no cover
        pass


# ---------------------------------------------------------------------------
# Greedy marginal dispatch
# ---------------------------------------------------------------------------


class Jlmu(Policy):
    """Send each task to the best-ranked slot that some pool can currently fill.

    Per class the best fillable slot sits just above the least-loaded pool, so
    the decision reduces to comparing one candidate slot per class. With a
    single class this is exactly join-the-shortest-queue.
    """

    name = "jlmu"

    def __init__(self) -> None:
        self._family: UtilityFamily | None = None

    def bind(self, state, config, initial_rank=None):
        self._family = config.family

    def decide(self, state: OccupancyState, u: float) -> PolicyDecision:
        family = self._family
        marg = family._marg
        buckets = state.buckets
        min_occ = state._min_occ
        best_d = -float("inf")
        best_cls = 0
        best_level = 0
        for ci in range(len(buckets)):
            levels = buckets[ci]
            v = min_occ[ci]
            while not levels[v]:
                v += 1
            min_occ[ci] = v
            cache = marg[ci]
            if v >= len(cache):
                family.marginal(ci + 1, v)
            d = cache[v]
            if d > best_d or (
                d == best_d and (ci + 1, v + 1) < (best_cls, best_level)
            ):
                best_d = d
                best_cls = ci + 1
                best_level = v + 1
        return PolicyDecision(Coordinate(best_cls, best_level), 0)


def jlmu_target(family: UtilityFamily, state: OccupancyState) -> Coordinate:
    """The slot greedy dispatch fills in this state."""
    policy = Jlmu()
    policy._family = family
    return policy.decide(state, 0.0).target


# ---------------------------------------------------------------------------
# Threshold learning dispatch
# ---------------------------------------------------------------------------


def slta_thresholds(family: UtilityFamily, rank: int) -> list[int]:
    """Per-class fill depths at learning rank ``rank``.

    Class ``i`` may fill levels 1..depth[i]; these are exactly the class-``i``
    slots ranked above slot ``rank``, so depth[i] counts those slots.
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return Enumeration(family).class_counts_before(rank)


def token_counts(
    state: OccupancyState, thresholds: list[int], boundary: Coordinate
) -> tuple[list[int], int]:
    """From-scratch token census.

    A pool holds a green token when its occupancy is below its class threshold,
    and a yellow token when it belongs to the boundary class with occupancy
    below the boundary level. Returns (per-class green counts, yellow count).
    """
    green = []
    for ci, depth in enumerate(thresholds):
        size = state.class_sizes[ci]
        green.append(size - state.tail_count(ci + 1, depth) if depth > 0 else 0)
    bci = boundary.cls - 1
    yellow = state.class_sizes[bci] - state.tail_count(boundary.cls, boundary.level)
    return green, yellow


class Slta(Policy):
    """Static-priority dispatch behind learned per-class thresholds.

    The policy keeps a rank ``r`` into the slot enumeration. Slots ranked above
    ``r`` define per-class fill depths (thresholds); pools below their class
    threshold hold green tokens and boundary-class pools below the boundary
    level hold yellow tokens. Arrivals fill green slots first, avoiding the
    class of the previous boundary slot while possible, then the boundary slot;
    with no tokens at all the task lands on a uniformly random pool.

    The rank moves at arrival instants: down when greens are plentiful (at
    least ``n * beta`` of them) and the previous boundary class still has a
    green pool, up when every slot above the boundary is saturated and at most
    one yellow pool remains.
    """

    name = "slta"
    tracks_tokens = True

    def __init__(self, beta: float | None = None):
        # beta defaults to n ** -0.45, resolved when the run size is known.
        self._beta_override = beta
        self.rank = 1
        self._enum: Enumeration | None = None
        self._thr: list[int] = []
        self._green: list[int] = []
        self._total_green = 0
        self._yellow = 0
        self._boundary = Coordinate(0, 0)
        self._prev: Coordinate | None = None
        self._quota = 0.0
        self._n = 0
        self._pending: OccupancyState | None = None

    @property
    def beta(self) -> float:
        return self._quota / self._n if self._n else 0.0

    @property
    def boundary(self) -> Coordinate:
        return self._boundary

    @property
    def thresholds(self) -> list[int]:
        return list(self._thr)

    def bind(self, state, config, initial_rank=None):
        self._enum = Enumeration(config.family)
        self._n = state.n
        beta = (
            self._beta_override
            if self._beta_override is not None
            else state.n ** -DEFAULT_LEARNING_EXPONENT
        )
        if not 0 < beta <= 1:
            raise ValueError(f"learning fraction beta must be in (0, 1], got {beta}")
        self._quota = state.n * beta
        self.rank = int(initial_rank) if initial_rank is not None else 1
        if self.rank < 1:
            raise ValueError(f"initial rank must be >= 1, got {self.rank}")
        self._reload(state)
        self._check_goodness(state)

    def _reload(self, state: OccupancyState) -> None:
        """Recompute thresholds, boundary and token counts from scratch."""
        r = self.rank
        self._boundary = self._enum.slot(r)
        self._prev = self._enum.slot(r - 1) if r > 1 else None
        self._thr = self._enum.class_counts_before(r)
        self._green, self._yellow = token_counts(state, self._thr, self._boundary)
        self._total_green = sum(self._green)
        self._pending = state

    def _check_goodness(self, state: OccupancyState) -> None:
        """The boundary must sit strictly above every saturated slot."""
        if self._yellow < 1:
            raise ValueError(
                f"bad starting state: boundary slot {tuple(self._boundary)} is saturated"
            )
        for ci, depth in enumerate(self._thr):
            if ci == self._boundary.cls - 1:
                continue
            if state.tail_count(ci + 1, depth + 1) >= state.class_sizes[ci]:
                raise ValueError(
                    f"bad starting state: class {ci + 1} is saturated beyond its threshold"
                )

    # -- token upkeep --------------------------------------------------------

    def notify_push(self, ci: int, prev_occ: int) -> None:
        if prev_occ + 1 == self._thr[ci]:
            self._green[ci] -= 1
            self._total_green -= 1
        b = self._boundary
        if ci == b.cls - 1 and prev_occ + 1 == b.level:
            self._yellow -= 1

    def notify_pop(self, ci: int, prev_occ: int) -> None:
        if prev_occ == self._thr[ci]:
            self._green[ci] += 1
            self._total_green += 1
        b = self._boundary
        if ci == b.cls - 1 and prev_occ == b.level:
            self._yellow += 1

    def apply_learning(self, delta: int) -> None:
        if delta == 0:
            return
        state = self._pending
        self.rank += delta
        self._reload(state)

    # -- decisions ------------------------------------------------------------

    def decide(self, state: OccupancyState, u: float) -> PolicyDecision:
        self._pending = state
        delta = slta_learn(state, self)
        target = self._pick_target(state, u)
        return PolicyDecision(target, delta)

    def _pick_target(self, state: OccupancyState, u: float) -> Coordinate:
        buckets = state.buckets
        thr = self._thr
        b = self._boundary
        prev_ci = self._prev.cls - 1 if self._prev is not None else -1
        total_green = self._total_green
        if total_green > 0:
            prev_green = self._green[prev_ci] if prev_ci >= 0 else 0
            other = total_green - prev_green
            if other > 0:
                # Uniform over green pools outside the previous boundary class.
                x = u * other
                acc = 0
                for ci in range(len(thr)):
                    if ci == prev_ci:
                        continue
                    levels = buckets[ci]
                    for v in range(thr[ci]):
                        acc += len(levels[v])
                        if x < acc:
                            return Coordinate(ci + 1, v + 1)
                # Float roundoff can push x to the boundary; take the last slot.
                return self._last_green(state, skip=prev_ci)
            # Only the previous boundary class has green pools.
            x = u * prev_green
            acc = 0
            levels = buckets[prev_ci]
            for v in range(thr[prev_ci]):
                acc += len(levels[v])
                if x < acc:
                    return Coordinate(prev_ci + 1, v + 1)
            return self._last_green(state, only=prev_ci)
        # No green tokens: aim at the boundary slot while it has room.
        if state.count(b.cls, b.level - 1) > 0:
            return b
        # Nothing to aim at: uniform over all pools.
        pool = int(u * state.n)
        if pool >= state.n:
            pool = state.n - 1
        return Coordinate(state.pool_class[pool] + 1, state.occ[pool] + 1)

    def _last_green(self, state: OccupancyState, skip: int = -1, only: int = -1):
        for ci in range(len(self._thr) - 1, -1, -1):
            if ci == skip or (only >= 0 and ci != only):
                continue
            levels = state.buckets[ci]
            for v in range(self._thr[ci] - 1, -1, -1):
                if levels[v]:
                    return Coordinate(ci + 1, v + 1)
        raise AssertionError("no green pool found despite positive green count")

    # -- diagnostics -----------------------------------------------------------

    def recount(self, state: OccupancyState) -> tuple[list[int], int]:
        """Scratch token census with the current thresholds and boundary."""
        return token_counts(state, self._thr, self._boundary)

    def verify_tokens(self, state: OccupancyState) -> None:
        green, yellow = self.recount(state)
        assert green == self._green, f"green counters drifted: {self._green} vs {green}"
        assert yellow == self._yellow, f"yellow counter drifted: {self._yellow} vs {yellow}"
        assert self._total_green == sum(green)

    def is_good(self, state: OccupancyState) -> bool:
        try:
            self._check_goodness(state)
        except ValueError:
            return False
        return True


def slta_learn(state: OccupancyState, slta: Slta) -> int:
    """Rank adjustment decided at an arrival, from the pre-arrival state.

    Down when green pools are plentiful (at least ``n * beta``, compared as
    reals) and the previous boundary class still has one; up when every slot
    above the boundary is saturated and at most one yellow pool remains. The
    two conditions are mutually exclusive. The adjustment is applied only
    after the arrival is dispatched.
    """
    if slta.rank > 1:
        prev_ci = slta._prev.cls - 1
        if slta._total_green >= slta._quota and slta._green[prev_ci] > 0:
            return -1
    if slta._total_green == 0 and slta._yellow <= 1:
        return 1
    return 0


def slta_target(state: OccupancyState, slta: Slta, u: float) -> Coordinate:
    """The slot the learning policy fills given one uniform draw."""
    return slta._pick_target(state, u)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


class RandomDispatch(Policy):
    """Send each task to a uniformly random pool."""

    name = "random"

    def decide(self, state: OccupancyState, u: float) -> PolicyDecision:
        return PolicyDecision(random_target(state, u), 0)


def random_target(state: OccupancyState, u: float) -> Coordinate:
    """Slot of a uniformly chosen pool. Pools are indexed in construction
    order, so the draw maps straight to a pool id."""
    pool = int(u * state.n)
    if pool >= state.n:
        pool = state.n - 1
    return Coordinate(state.pool_class[pool] + 1, state.occ[pool] + 1)


class FixedClassDispatch(Policy):
    """Send every task to a uniformly random pool of one fixed class."""

    name = "fixed"

    def __init__(self, cls: int):
        if cls < 1:
            raise ValueError(f"class index must be >= 1, got {cls}")
        self.cls = cls
        self._offset = 0
        self._size = 0

    def bind(self, state, config, initial_rank=None):
        if self.cls > state.m:
            raise ValueError(
                f"fixed:{self.cls} needs class {self.cls} but the system has {state.m}"
            )
        self.name = f"fixed:{self.cls}"
        self._offset = sum(state.class_sizes[: self.cls - 1])
        self._size = state.class_sizes[self.cls - 1]

    def decide(self, state: OccupancyState, u: float) -> PolicyDecision:
        return PolicyDecision(
            fixed_class_target(state, self.cls, u, self._offset, self._size), 0
        )


def fixed_class_target(
    state: OccupancyState,
    cls: int,
    u: float,
    offset: int | None = None,
    size: int | None = None,
) -> Coordinate:
    """Slot of a uniformly chosen pool within one class."""
    if offset is None or size is None:
        offset = sum(state.class_sizes[: cls - 1])
        size = state.class_sizes[cls - 1]
    k = int(u * size)
    if k >= size:
        k = size - 1
    pool = offset + k
    return Coordinate(cls, state.occ[pool] + 1)


def parse_policy(spec: str, beta: float | None = None) -> Policy:
    """Build a policy from its config string."""
    if spec == "jlmu":
        return Jlmu()
    if spec == "slta":
        return Slta(beta=beta)
    if spec == "random":
        return RandomDispatch()
    if spec.startswith("fixed:"):
        tail = spec.split(":", 1)[1]
        try:
            cls = int(tail)
        except ValueError:
            raise ValueError(f"bad fixed-class policy {spec!r}: class must be an integer")
        return FixedClassDispatch(cls)
    raise ValueError(
        f"unknown policy {spec!r} (known: jlmu, slta, random, fixed:<cls>)"
    )
