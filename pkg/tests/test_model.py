import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poolsim.model import (
    CappedLinear,
    Coordinate,
    Linear,
    LogQuality,
    OccupancyState,
    QVector,
    SystemConfig,
    Tabulated,
    UtilityFamily,
    occupancy_to_q,
    overall_utility,
    utility_from_dict,
)

from conftest import (
    QUAD_VALUES,
    THREE_CLASS_ALPHA,
    TWO_CLASS_ALPHA,
    piecewise_family,
    two_class_family,
)


def concave_values(first: float, drops: list[float], start: float = 0.0) -> list[float]:
    """Values whose increments fall by the given amounts: concave by build."""
    values = [start]
    inc = first
    for d in drops:
        values.append(values[-1] + inc)
        inc -= d
    return values


# ---------------------------------------------------------------------------
# utilities and marginals


def test_log_quality_values():
    u = LogQuality(20.0)
    assert u.value(0) == 0.0
    assert u.value(1) == pytest.approx(math.log(20.0), rel=1e-15)
    assert u.value(4) == pytest.approx(4.0 * math.log(5.0), rel=1e-15)


def test_log_quality_known_marginals():
    fam = two_class_family()
    assert fam.marginal(1, 0) == pytest.approx(2.995732273553991, abs=1e-12)
    assert fam.marginal(2, 0) == pytest.approx(3.4011973816621555, abs=1e-12)
    # second task in a class-2 pool: 2 log 15 - log 30 = log 7.5
    assert fam.marginal(2, 1) == pytest.approx(math.log(7.5), rel=1e-12)


def test_linear_and_capped():
    lin = Linear(2.5)
    assert lin.value(3) == 7.5
    assert UtilityFamily((Linear(1.0),)).marginal(1, 17) == 1.0
    cap = CappedLinear(1.5, 20)
    assert cap.value(19) == pytest.approx(28.5)
    assert cap.value(20) == 30.0
    assert cap.value(25) == 30.0
    fam = UtilityFamily((cap,))
    assert fam.marginal(1, 19) == pytest.approx(1.5)
    assert fam.marginal(1, 20) == 0.0


def test_tabulated_quadratic_marginals():
    u = Tabulated(QUAD_VALUES)
    fam = UtilityFamily((u,))
    assert fam.marginal(1, 0) == pytest.approx(1.95, abs=1e-12)
    assert fam.marginal(1, 4) == pytest.approx(1.55, abs=1e-12)
    # past the table the last marginal is carried on
    assert fam.marginal(1, 25) == pytest.approx(fam.marginal(1, 40), abs=1e-12)
    assert u.value(26) == pytest.approx(u.value(25) + fam.marginal(1, 25), rel=1e-12)


def test_tabulated_rejects_convex_segments():
    with pytest.raises(ValueError):
        Tabulated((0.0, 1.0, 3.0))


def test_marginals_never_increase():
    for util in (LogQuality(7.0), Linear(0.3), CappedLinear(2.0, 5), Tabulated(QUAD_VALUES)):
        fam = UtilityFamily((util,))
        deltas = fam.marginals_upto(1, 40)
        assert len(deltas) == 40
        assert all(a >= b - 1e-12 for a, b in zip(deltas, deltas[1:]))


@given(
    start=st.floats(min_value=-5, max_value=5),
    first=st.floats(min_value=0.01, max_value=10),
    drops=st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=12),
)
def test_concave_tables_accepted(start, first, drops):
    u = Tabulated(concave_values(first, drops, start))
    fam = UtilityFamily((u,))
    deltas = fam.marginals_upto(1, len(drops) + 4)
    assert all(a >= b - 1e-9 for a, b in zip(deltas, deltas[1:]))


def test_utility_from_dict_round_trip():
    specs = [
        {"kind": "log_quality", "r": 20.0},
        {"kind": "linear", "slope": 1.0},
        {"kind": "capped_linear", "slope": 1.5, "cap": 20},
        {"kind": "table", "values": list(QUAD_VALUES)},
    ]
    for spec in specs:
        u = utility_from_dict(spec)
        again = utility_from_dict({"kind": u.kind, **u.params()})
        assert all(u.value(x) == again.value(x) for x in range(30))


def test_utility_from_dict_rejects_bad_specs():
    with pytest.raises(ValueError):
        utility_from_dict({"kind": "nope"})
    with pytest.raises(ValueError):
        utility_from_dict({"kind": "linear"})  # missing slope
    with pytest.raises(ValueError):
        utility_from_dict({"kind": "linear", "slope": 1.0, "cap": 3})
    with pytest.raises(ValueError):
        utility_from_dict({"kind": "log_quality", "r": -2.0})


# ---------------------------------------------------------------------------
# ranking and enumeration
#
# rank_precedes(a, b) reads "a ranks strictly below b".


def test_rank_orders_by_marginal():
    fam = two_class_family()
    # log 20 < log 30, so the first class-1 slot sits below the first class-2 slot
    assert fam.rank_precedes(Coordinate(1, 1), Coordinate(2, 1))
    assert not fam.rank_precedes(Coordinate(2, 1), Coordinate(1, 1))
    # within a strictly concave class, deeper slots rank lower
    assert fam.rank_precedes(Coordinate(1, 2), Coordinate(1, 1))
    assert fam.rank_precedes(Coordinate(2, 2), Coordinate(2, 1))


def test_rank_tie_break_is_dictionary_order():
    fam = UtilityFamily((Linear(1.0), Linear(1.0)))
    # identical marginals everywhere: the dictionary-smaller slot wins
    assert fam.rank_precedes(Coordinate(2, 1), Coordinate(1, 1))
    assert fam.rank_precedes(Coordinate(1, 3), Coordinate(1, 2))
    assert not fam.rank_precedes(Coordinate(1, 3), Coordinate(2, 3))


def test_rank_crossover_between_flat_and_falling_marginals():
    fam = piecewise_family()
    # 1.5 (capped class at level 1) against 1.55 (quadratic class at level 5)
    assert fam.rank_precedes(Coordinate(3, 1), Coordinate(2, 5))
    assert fam.rank_precedes(Coordinate(2, 6), Coordinate(3, 20))


def test_enumeration_two_class_prefix():
    fam = two_class_family()
    assert fam.enumerate_ranked(5) == [
        Coordinate(2, 1),
        Coordinate(1, 1),
        Coordinate(2, 2),
        Coordinate(1, 2),
        Coordinate(2, 3),
    ]


def test_enumeration_single_class():
    fam = UtilityFamily((LogQuality(9.0),))
    assert fam.enumerate_ranked(4) == [Coordinate(1, j) for j in range(1, 5)]


def test_enumeration_piecewise_prefix():
    fam = piecewise_family()
    slots = fam.enumerate_ranked(31)
    assert slots[:5] == [Coordinate(2, j) for j in range(1, 6)]
    assert slots[5:25] == [Coordinate(3, j) for j in range(1, 21)]
    assert slots[25:30] == [Coordinate(2, j) for j in range(6, 11)]
    assert slots[30] == Coordinate(1, 1)


def test_enumeration_is_strictly_decreasing():
    fam = two_class_family()
    slots = fam.enumerate_ranked(40)
    for a, b in zip(slots, slots[1:]):
        assert fam.rank_precedes(b, a)
    # within each class, levels appear without gaps
    for cls in (1, 2):
        levels = [c.level for c in slots if c.cls == cls]
        assert levels == list(range(1, len(levels) + 1))


def test_enumeration_exhausts_boxes():
    # log-quality marginals fall without bound, so a long enough prefix
    # contains every slot up to any fixed level exactly once
    fam = two_class_family()
    slots = fam.enumerate_ranked(400)
    assert len(set(slots)) == len(slots)
    want = {Coordinate(i, j) for i in (1, 2) for j in range(1, 31)}
    assert want <= set(slots)


@settings(max_examples=20, deadline=None)
@given(data=st.data())
def test_rank_total_order_laws(data):
    tables = []
    for _ in range(2):
        first = data.draw(st.floats(min_value=0.5, max_value=3.0))
        drops = data.draw(
            st.lists(st.floats(min_value=0, max_value=0.5), min_size=4, max_size=8)
        )
        tables.append(Tabulated(concave_values(first, drops)))
    fam = UtilityFamily(tables)
    box = [Coordinate(i, j) for i in (1, 2) for j in range(1, 9)]

    def key(c):
        return (-fam.marginal(c.cls, c.level - 1), c.cls, c.level)

    # the relation must agree everywhere with the sort key, which makes it a
    # strict total order (irreflexive, antisymmetric, transitive, total)
    for a in box:
        assert not fam.rank_precedes(a, a)
        for b in box:
            if a != b:
                assert fam.rank_precedes(a, b) == (key(a) > key(b))


# ---------------------------------------------------------------------------
# tail profiles


def test_qvector_basics():
    q = QVector.zeros(TWO_CLASS_ALPHA, 3)
    assert q.mass() == 0.0
    assert q.get(1, 0) == 0.5
    assert q.get(2, 17) == 0.0
    assert q.to_pairs() == []

    tail = np.array([[0.5, 0.5, 0.25, 0.0], [0.5, 0.1, 0.1, 0.05]])
    q = QVector(alpha=np.array(TWO_CLASS_ALPHA), tail=tail)
    assert q.mass() == pytest.approx(1.0)
    assert q.class_mass() == pytest.approx([0.75, 0.25])
    assert (1, 2, 0.25) in q.to_pairs()


def test_qvector_rejects_mismatched_base():
    tail = np.array([[0.4, 0.2], [0.5, 0.1]])
    with pytest.raises(ValueError):
        QVector(alpha=np.array(TWO_CLASS_ALPHA), tail=tail)


def test_point_mass_tail():
    # 4 pools of one class, all holding 2 tasks
    state = OccupancyState(4, (1.0,), [[2, 2, 2, 2]])
    q = occupancy_to_q(state)
    assert q.get(1, 1) == 1.0
    assert q.get(1, 2) == 1.0
    assert q.get(1, 3) == 0.0


def test_occupancy_to_q_preserves_mass(rng):
    sizes = (4, 2, 2)
    for _ in range(25):
        occs = [rng.integers(0, 9, size=s).tolist() for s in sizes]
        state = OccupancyState(8, THREE_CLASS_ALPHA, occs)
        q = occupancy_to_q(state)
        assert 8 * q.mass() == pytest.approx(state.total_tasks, abs=1e-9)


def test_occupancy_state_push_pop():
    state = OccupancyState(4, TWO_CLASS_ALPHA, [[0, 3], [1, 1]])
    assert state.total_tasks == 5
    assert state.min_occupied(1) == 0
    assert state.max_occupied(2) == 1
    state.push_task(0)
    assert state.count(1, 1) == 1
    assert state.min_occupied(1) == 1
    state.pop_task(1)
    assert state.count(1, 2) == 1
    hist = state.histogram(1)
    assert hist[1] == 1 and hist[2] == 1
    # all four pools now hold at least one task
    assert state.frac_at_least(1, 1) == pytest.approx(0.5)
    assert state.frac_at_least(2, 1) == pytest.approx(0.5)
    assert state.tail_count(1, 2) == 1
    state.check_consistency()


def test_occupancy_state_guards():
    state = OccupancyState.empty(2, (1.0,))
    with pytest.raises(ValueError):
        state.pop_task(0)
    with pytest.raises(ValueError):
        OccupancyState.empty(3, TWO_CLASS_ALPHA)
    with pytest.raises(ValueError):
        OccupancyState(4, TWO_CLASS_ALPHA, [[0], [0, 0, 0]])


def test_from_counts_histogram_form():
    # histogram [0, 2, 1] means: none empty, two pools at 1, one at 2
    state = OccupancyState.from_counts(4, (0.75, 0.25), [[0, 2, 1], [1]])
    assert state.total_tasks == 4
    assert state.count(1, 1) == 2
    assert state.count(2, 0) == 1
    state.check_consistency()


# ---------------------------------------------------------------------------
# overall utility


def test_overall_utility_closed_form():
    fam = two_class_family()
    tail = np.zeros((2, 14))
    tail[:, 0] = 0.5
    tail[0, 1:9] = 0.5
    tail[1, 1:13] = 0.5
    q = QVector(alpha=np.array(TWO_CLASS_ALPHA), tail=tail)
    # every pool at r(i)/2.5 tasks: the value telescopes to 10 log 2.5
    assert overall_utility(fam, q) == pytest.approx(10.0 * math.log(2.5), rel=1e-13)


def test_overall_utility_matches_occupancy_sum(rng):
    # marginal form against direct per-pool summation on integer states
    fam = piecewise_family()
    sizes = (4, 2, 2)
    for _ in range(20):
        occs = [rng.integers(0, 25, size=s).tolist() for s in sizes]
        state = OccupancyState(8, THREE_CLASS_ALPHA, occs)
        q = occupancy_to_q(state)
        direct = sum(
            fam.value(state.pool_class[pool] + 1, v)
            for pool, v in enumerate(state.occ)
        )
        assert 8 * overall_utility(fam, q) == pytest.approx(direct, abs=1e-9)
        assert state.aggregate_value(fam) == pytest.approx(direct, abs=1e-9)


def test_overall_utility_counts_value_at_zero():
    fam = UtilityFamily((Tabulated((0.5, 1.0, 1.25)),))
    q = QVector.zeros((1.0,), 2)
    assert overall_utility(fam, q) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# system construction


def test_system_config_validation():
    fam = two_class_family()
    cfg = SystemConfig.from_rho(n=10, alpha=TWO_CLASS_ALPHA, rho=2.0, mu=0.5, family=fam)
    assert cfg.lam == pytest.approx(1.0)
    assert cfg.rho == pytest.approx(2.0)
    assert cfg.class_sizes == (5, 5)

    with pytest.raises(ValueError):
        SystemConfig.from_rho(n=3, alpha=TWO_CLASS_ALPHA, rho=1.0, mu=1.0, family=fam)
    with pytest.raises(ValueError):
        SystemConfig.from_rho(n=4, alpha=(0.6, 0.5), rho=1.0, mu=1.0, family=fam)
    with pytest.raises(ValueError):
        SystemConfig.from_rho(n=4, alpha=TWO_CLASS_ALPHA, rho=1.0, mu=0.0, family=fam)
    with pytest.raises(ValueError):
        SystemConfig.from_rho(n=4, alpha=(1.0,), rho=1.0, mu=1.0, family=fam)
    # zero load is allowed; it models a draining system
    cfg0 = SystemConfig.from_rho(n=4, alpha=TWO_CLASS_ALPHA, rho=0.0, mu=1.0, family=fam)
    assert cfg0.lam == 0.0
