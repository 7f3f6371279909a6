"""Greedy fill of ranked slots and the resulting utility upper bound.

Filling slots in rank order until the offered load is exhausted solves the
static relaxation: maximize the average per-pool utility over tail profiles
that are monotone, bounded by the class fractions, and carry a fixed total
mass per pool. The profile produced here is the unique maximizer, and its
value bounds the long-run average utility of any dispatch policy, evaluated
at that policy's realized average mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    MAX_ENUMERATION,
    Coordinate,
    QVector,
    UtilityFamily,
    _check_fractions,
    overall_utility,
)

__all__ = [
    "OptimalAssignment",
    "sigma_star",
    "optimal_assignment",
    "upper_bound",
    "validate_feasible",
]

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class OptimalAssignment:
    """Greedy prefix fill at load ``rho``.

    ``sigma_star`` is the first slot the fill cannot complete, ``sigma_index``
    its 1-based rank, ``q_star`` the filled profile (class fraction on every
    slot ranked above, the residual mass on ``sigma_star``, zero below), and
    ``bound`` the profile's overall utility.
    """

    sigma_star: Coordinate
    sigma_index: int
    q_star: QVector
    bound: float
    rho: float

    @property
    def residual(self) -> float:
        """Mass left for the boundary slot itself, in [0, alpha of its class)."""
        return self.q_star.get(*self.sigma_star)


def _boundary_walk(
    family: UtilityFamily, alpha: tuple[float, ...], rho: float
) -> tuple[Coordinate, int, list[int], float]:
    """Walk the ranking until the cumulative class mass first passes ``rho``.

    Returns the boundary slot, its rank, the per-class count of fully filled
    levels, and the mass accumulated strictly above the boundary.
    """
    filled = [0] * len(alpha)
    cum = 0.0
    rank = 0
    for coord in family.ranked():
        rank += 1
        if rank > MAX_ENUMERATION:
            raise RuntimeError(
                f"load {rho} needs more than {MAX_ENUMERATION} ranked slots; "
                "refusing to walk further"
            )
        a = alpha[coord.cls - 1]
        if rho < cum + a:
            return coord, rank, filled, cum
        cum += a
        filled[coord.cls - 1] = coord.level
    raise AssertionError("unreachable: the ranking is infinite")


def sigma_star(
    family: UtilityFamily, alpha, rho: float
) -> tuple[Coordinate, int]:
    """Boundary slot of the greedy fill at load ``rho``, with its 1-based rank."""
    alpha = _check_fractions(alpha)
    if len(alpha) != family.m:
        raise ValueError(f"got {len(alpha)} fractions for {family.m} classes")
    if rho < 0:
        raise ValueError(f"load must be >= 0, got {rho}")
    coord, rank, _, _ = _boundary_walk(family, alpha, rho)
    return coord, rank


def optimal_assignment(family: UtilityFamily, alpha, rho: float) -> OptimalAssignment:
    """The maximizing tail profile at load ``rho`` and its utility.

    The residual ``rho`` minus the mass above the boundary is kept as the exact
    float difference; nothing is rounded to whole pools here.
    """
    alpha = _check_fractions(alpha)
    if len(alpha) != family.m:
        raise ValueError(f"got {len(alpha)} fractions for {family.m} classes")
    if rho < 0:
        raise ValueError(f"load must be >= 0, got {rho}")
    coord, rank, filled, cum = _boundary_walk(family, alpha, rho)
    residual = rho - cum
    depth = max(max(filled), coord.level)
    tail = np.zeros((len(alpha), depth + 1))
    for ci, a in enumerate(alpha):
        tail[ci, 0] = a
        tail[ci, 1 : filled[ci] + 1] = a
    tail[coord.cls - 1, coord.level] = residual
    q = QVector(alpha=np.asarray(alpha, dtype=np.float64), tail=tail)
    return OptimalAssignment(
        sigma_star=coord,
        sigma_index=rank,
        q_star=q,
        bound=overall_utility(family, q),
        rho=rho,
    )


def upper_bound(family: UtilityFamily, alpha, load: float) -> float:
    """Best achievable average per-pool utility at the given mass per pool.

    Any load is accepted, so this can be evaluated at a realized time-average
    mass as well as at the nominal offered load.
    """
    return optimal_assignment(family, alpha, load).bound


def validate_feasible(
    q: QVector, alpha, rho: float, tol: float = FEASIBILITY_TOL
) -> None:
    """Raise ValueError unless ``q`` is a feasible profile of total mass ``rho``.

    Checks bounds 0 <= q(i, j) <= alpha[i], monotonicity along levels, and the
    total mass, each to within ``tol``.
    """
    alpha = _check_fractions(alpha)
    if q.m != len(alpha):
        raise ValueError(f"profile has {q.m} classes, fractions have {len(alpha)}")
    if not np.allclose(q.alpha, alpha, rtol=0, atol=tol):
        raise ValueError("profile class fractions disagree with alpha")
    tail = q.tail
    for ci, a in enumerate(alpha):
        row = tail[ci]
        low = row.min()
        if low < -tol:
            j = int(row.argmin())
            raise ValueError(f"q({ci + 1},{j}) = {low} is below 0")
        high = row.max()
        if high > a + tol:
            j = int(row.argmax())
            raise ValueError(f"q({ci + 1},{j}) = {high} exceeds alpha = {a}")
        steps = row[1:] - row[:-1]
        if steps.size and steps.max() > tol:
            j = int(steps.argmax()) + 1
            raise ValueError(
                f"q({ci + 1},{j}) = {row[j]} exceeds q({ci + 1},{j - 1}) = {row[j - 1]}: "
                "tail profiles must be non-increasing"
            )
    mass = q.mass()
    if abs(mass - rho) > tol:
        raise ValueError(f"total mass {mass} differs from required load {rho}")
