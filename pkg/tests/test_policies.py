import pytest

from poolsim.model import (
    Coordinate,
    LogQuality,
    OccupancyState,
    SystemConfig,
    UtilityFamily,
)
from poolsim.policies import (
    FixedClassDispatch,
    Jlmu,
    RandomDispatch,
    Slta,
    fixed_class_target,
    jlmu_target,
    parse_policy,
    random_target,
    slta_learn,
    slta_target,
    slta_thresholds,
    token_counts,
)
from poolsim.sim import RunConfig, simulate

from conftest import (
    THREE_CLASS_ALPHA,
    TWO_CLASS_ALPHA,
    piecewise_family,
    two_class_family,
    two_class_system,
)


def bound_slta(family, alpha, occupancies, rank, beta=None):
    """Slta attached to a concrete state at the given learning rank."""
    n = sum(len(occ) for occ in occupancies)
    state = OccupancyState(n, alpha, occupancies)
    cfg = SystemConfig(n=n, alpha=alpha, mu=1.0, lam=1.0, family=family)
    policy = Slta(beta=beta)
    policy.bind(state, cfg, initial_rank=rank)
    return state, policy


# ---------------------------------------------------------------------------
# greedy dispatch


def test_jlmu_empty_two_class():
    fam = two_class_family()
    state = OccupancyState.empty(4, TWO_CLASS_ALPHA)
    assert jlmu_target(fam, state) == Coordinate(2, 1)


def test_jlmu_is_jsq_with_one_class():
    fam = UtilityFamily((LogQuality(9.0),))
    state = OccupancyState(3, (1.0,), [[0, 0, 3]])
    assert jlmu_target(fam, state) == Coordinate(1, 1)


def test_jlmu_piecewise_crossover():
    # class-2 pools at 5 tasks push the next marginal to 1.45, below the
    # capped class at 1.5
    fam = piecewise_family()
    state = OccupancyState(8, THREE_CLASS_ALPHA, [[0] * 4, [5, 5], [0, 0]])
    assert jlmu_target(fam, state) == Coordinate(3, 1)


def brute_force_target(fam, state):
    best = None
    for pool in range(state.n):
        cand = Coordinate(state.pool_class[pool] + 1, state.occ[pool] + 1)
        if best is None or fam.rank_precedes(best, cand):
            best = cand
    return best


def test_jlmu_maximizes_over_all_pools(rng):
    cases = [
        (two_class_family(), TWO_CLASS_ALPHA, (4, 4)),
        (piecewise_family(), THREE_CLASS_ALPHA, (4, 2, 2)),
    ]
    for fam, alpha, sizes in cases:
        for _ in range(60):
            occs = [rng.integers(0, 14, size=s).tolist() for s in sizes]
            state = OccupancyState(sum(sizes), alpha, occs)
            assert jlmu_target(fam, state) == brute_force_target(fam, state)


def test_jlmu_trace_matches_jsq(rng):
    fam = UtilityFamily((LogQuality(50.0),))
    state = OccupancyState.empty(5, (1.0,))
    for _ in range(200):
        if state.total_tasks and rng.uniform() < 0.4:
            occupied = [p for p in range(5) if state.occ[p] > 0]
            state.pop_task(int(rng.choice(occupied)))
        else:
            target = jlmu_target(fam, state)
            assert target.level - 1 == min(state.occ)
            pool = min(p for p in range(5) if state.occ[p] == target.level - 1)
            state.push_task(pool)


# ---------------------------------------------------------------------------
# thresholds and tokens


def test_thresholds_rank_one_is_zero():
    assert slta_thresholds(two_class_family(), 1) == [0, 0]
    assert slta_thresholds(piecewise_family(), 1) == [0, 0, 0]


def test_thresholds_at_boundary_ranks():
    fam = two_class_family()
    assert slta_thresholds(fam, 20) == [8, 11]
    assert slta_thresholds(fam, 21) == [8, 12]


def test_thresholds_monotone_and_consistent():
    fam = piecewise_family()
    from poolsim.model import Enumeration

    enum = Enumeration(fam)
    prev = [0, 0, 0]
    for r in range(1, 40):
        thr = slta_thresholds(fam, r)
        assert all(a <= b for a, b in zip(prev, thr))
        assert sum(thr) == r - 1
        boundary = enum.slot(r)
        assert thr[boundary.cls - 1] == boundary.level - 1
        prev = thr


def test_token_counts_worked_example():
    # N(1,0)=1, N(1,2)=1, N(2,0)=2 with thresholds (2,1), boundary (2,2)
    state = OccupancyState(4, TWO_CLASS_ALPHA, [[0, 2], [0, 0]])
    green, yellow = token_counts(state, [2, 1], Coordinate(2, 2))
    assert green == [1, 2]
    assert yellow == 2


def test_token_counts_empty_and_rank_one():
    state = OccupancyState.empty(8, TWO_CLASS_ALPHA)
    green, yellow = token_counts(state, [3, 2], Coordinate(1, 4))
    assert green == [4, 4]
    assert yellow == 4
    green, yellow = token_counts(state, [0, 0], Coordinate(2, 1))
    assert green == [0, 0]
    assert yellow == 4


# ---------------------------------------------------------------------------
# learning-policy dispatch clauses
#
# rank 3 of the two-class family has boundary (2,2), thresholds (1,1) and
# previous boundary (1,1), which exercises every clause with four pools.


def test_slta_prefers_green_outside_previous_class():
    state, policy = bound_slta(two_class_family(), TWO_CLASS_ALPHA, [[0, 1], [0, 1]], 3)
    for u in (0.0, 0.3, 0.9):
        assert policy.decide(state, u).target == Coordinate(2, 1)


def test_slta_falls_back_to_previous_class_green():
    state, policy = bound_slta(two_class_family(), TWO_CLASS_ALPHA, [[0, 1], [1, 1]], 3)
    for u in (0.0, 0.5):
        assert policy.decide(state, u).target == Coordinate(1, 1)


def test_slta_yellow_only_targets_boundary():
    state, policy = bound_slta(two_class_family(), TWO_CLASS_ALPHA, [[1, 1], [1, 1]], 3)
    assert policy.decide(state, 0.7).target == Coordinate(2, 2)


def test_slta_no_tokens_uniform_over_pools():
    fam = UtilityFamily((LogQuality(9.0),))
    state = OccupancyState(3, (1.0,), [[5, 5, 5]])
    policy = Slta()
    policy._thr = [0]
    policy._boundary = Coordinate(1, 1)
    policy._prev = None
    policy._green = [0]
    policy._total_green = 0
    policy._yellow = 0
    assert slta_target(state, policy, 0.1) == Coordinate(1, 6)
    assert slta_target(state, policy, 0.99) == Coordinate(1, 6)


def test_slta_single_class_saturated_below_boundary():
    # all pools at 5 with the boundary at (1,6): the boundary level itself
    # still has room, so the task lands there regardless of the draw
    fam = UtilityFamily((LogQuality(9.0),))
    state, policy = bound_slta(fam, (1.0,), [[5, 5, 5]], 6)
    for u in (0.0, 0.42, 0.9999):
        assert policy.decide(state, u).target == Coordinate(1, 6)


def test_slta_green_draw_is_proportional():
    # two green pools in class 2 at levels 0; draws split between them evenly
    state, policy = bound_slta(two_class_family(), TWO_CLASS_ALPHA, [[1, 1], [0, 0]], 3)
    assert policy.decide(state, 0.2).target == Coordinate(2, 1)
    assert policy.decide(state, 0.8).target == Coordinate(2, 1)


def test_slta_routing_stays_at_or_above_boundary(rng):
    fam = two_class_family()
    for _ in range(40):
        occs = [rng.integers(0, 3, size=2).tolist(), rng.integers(0, 3, size=2).tolist()]
        state = OccupancyState(4, TWO_CLASS_ALPHA, occs)
        policy = Slta()
        cfg = SystemConfig(n=4, alpha=TWO_CLASS_ALPHA, mu=1.0, lam=1.0, family=fam)
        try:
            policy.bind(state, cfg, initial_rank=3)
        except ValueError:
            continue  # state not good at this rank
        green, yellow = policy.recount(state)
        if sum(green) + yellow == 0:
            continue
        target = policy.decide(state, rng.uniform()).target
        assert not fam.rank_precedes(target, policy.boundary)


# ---------------------------------------------------------------------------
# learning rule


def test_learn_stays_put_on_empty_start():
    state, policy = bound_slta(two_class_family(), TWO_CLASS_ALPHA, [[0, 0], [0, 0]], 1)
    assert slta_learn(state, policy) == 0


def test_learn_decrements_at_exact_quota():
    fam = two_class_family()
    # rank 2: boundary (1,1), previous boundary (2,1), thresholds (0,1)
    state, policy = bound_slta(fam, TWO_CLASS_ALPHA, [[0, 0], [0, 0]], 2, beta=0.5)
    assert policy.thresholds == [0, 1]
    green, _ = policy.recount(state)
    assert sum(green) == 2  # equals n * beta exactly
    assert slta_learn(state, policy) == -1


def test_learn_increments_when_one_yellow_left():
    state, policy = bound_slta(two_class_family(), TWO_CLASS_ALPHA, [[1, 1], [1, 2]], 3)
    green, yellow = policy.recount(state)
    assert sum(green) == 0 and yellow == 1
    assert slta_learn(state, policy) == 1


def test_learn_never_fires_both_ways(rng):
    fam = two_class_family()
    cfg = SystemConfig(n=4, alpha=TWO_CLASS_ALPHA, mu=1.0, lam=1.0, family=fam)
    seen = set()
    for _ in range(120):
        occs = [rng.integers(0, 4, size=2).tolist(), rng.integers(0, 4, size=2).tolist()]
        state = OccupancyState(4, TWO_CLASS_ALPHA, occs)
        policy = Slta(beta=0.5)
        try:
            policy.bind(state, cfg, initial_rank=int(rng.integers(1, 8)))
        except ValueError:
            continue
        delta = slta_learn(state, policy)
        assert delta in (-1, 0, 1)
        seen.add(delta)
    assert seen == {-1, 0, 1}


def test_learning_applied_after_dispatch():
    # the decrement decided pre-arrival must not change where the task goes
    fam = two_class_family()
    state, policy = bound_slta(fam, TWO_CLASS_ALPHA, [[0, 0], [0, 0]], 2, beta=0.5)
    decision = policy.decide(state, 0.0)
    assert decision.learning_delta == -1
    assert policy.rank == 2  # unchanged until the simulator applies it
    state.push_task(2)
    policy.notify_push(1, 0)
    policy.apply_learning(decision.learning_delta)
    assert policy.rank == 1
    policy.verify_tokens(state)


# ---------------------------------------------------------------------------
# goodness and token upkeep under simulation


def test_goodness_and_tokens_preserved_in_simulation():
    config = two_class_system(20, 9.75)

    def audit(kind, t, state, policy):
        policy.verify_tokens(state)
        assert policy.is_good(state), f"goodness lost after {kind} at t={t}"

    metrics = simulate(
        config, "slta", RunConfig(horizon=30.0, seed=7, init="empty"), hook=audit
    )
    assert metrics.events > 200


# ---------------------------------------------------------------------------
# baselines


def test_random_target_examples():
    single = OccupancyState(1, (1.0,), [[2]])
    assert random_target(single, 0.99) == Coordinate(1, 3)
    state = OccupancyState(2, (1.0,), [[0, 4]])
    assert random_target(state, 0.3) == Coordinate(1, 1)
    assert random_target(state, 0.8) == Coordinate(1, 5)


def test_fixed_class_target_examples():
    state = OccupancyState.empty(4, TWO_CLASS_ALPHA)
    assert fixed_class_target(state, 2, 0.1) == Coordinate(2, 1)
    state = OccupancyState(4, TWO_CLASS_ALPHA, [[0, 0], [3, 7]])
    assert fixed_class_target(state, 2, 0.3) == Coordinate(2, 4)
    assert fixed_class_target(state, 2, 0.9) == Coordinate(2, 8)


def test_fixed_class_validation():
    with pytest.raises(ValueError):
        FixedClassDispatch(0)
    policy = FixedClassDispatch(3)
    state = OccupancyState.empty(4, TWO_CLASS_ALPHA)
    cfg = SystemConfig(
        n=4, alpha=TWO_CLASS_ALPHA, mu=1.0, lam=1.0, family=two_class_family()
    )
    with pytest.raises(ValueError):
        policy.bind(state, cfg)


def test_parse_policy():
    assert isinstance(parse_policy("jlmu"), Jlmu)
    assert isinstance(parse_policy("random"), RandomDispatch)
    slta = parse_policy("slta", beta=0.25)
    assert isinstance(slta, Slta)
    fixed = parse_policy("fixed:2")
    assert isinstance(fixed, FixedClassDispatch) and fixed.cls == 2
    with pytest.raises(ValueError):
        parse_policy("fixed:two")
    with pytest.raises(ValueError):
        parse_policy("lru")
