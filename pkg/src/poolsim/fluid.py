"""Deterministic large-system dynamics and their reflection structure.

As the pool count grows, the scaled occupancy profile approaches the solution
of an ordinary differential equation: arrivals keep every slot ranked above
the active slot saturated, the remainder of the arrival rate flows into the
active slot, and each level drains at rate ``mu * level`` times its excess
over the next level. The active slot of a profile is its best-ranked slot
with a strictly positive gap to the level above.

The same dynamics can be written as a chain of one-sided reflections: per
ranked slot, the cumulative inflow past that slot is the upper-barrier
regulator of a free process, and the slot's occupancy is the reflected
process. :func:`verify_reflection_system` checks both identities on an
integrated trajectory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .assign import optimal_assignment
from .model import (
    Coordinate,
    Enumeration,
    QVector,
    SystemConfig,
    UtilityFamily,
)

__all__ = [
    "IntegratorConfig",
    "FluidPath",
    "SampledPath",
    "ReflectionReport",
    "fluid_sigma",
    "fluid_rhs",
    "integrate_fluid",
    "equilibrium_profile",
    "skorokhod_reflect",
    "verify_reflection_system",
]

SIGMA_TOL = 1e-9
TRUNCATION_WARN = 1e-8


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings: step size, truncation depth, horizon, gap tolerance."""

    dt: float
    levels: int
    horizon: float
    sigma_tol: float = SIGMA_TOL
    record_every: int = 1

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.levels < 2:
            raise ValueError("need at least two levels of truncation")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @classmethod
    def for_system(
        cls,
        system: SystemConfig,
        horizon: float,
        dt: float | None = None,
        levels: int | None = None,
        sigma_tol: float = SIGMA_TOL,
        record_every: int = 1,
    ) -> "IntegratorConfig":
        """Defaults: dt = 1e-3 / mu; depth = active-slot level + 10, and at
        least ceil(2 * rho / min alpha)."""
        if dt is None:
            dt = 1e-3 / system.mu
        if levels is None:
            boundary = optimal_assignment(
                system.family, system.alpha, system.rho
            ).sigma_star
            levels = max(
                boundary.level + 10,
                math.ceil(2.0 * system.rho / min(system.alpha)),
            )
        return cls(
            dt=dt,
            levels=levels,
            horizon=horizon,
            sigma_tol=sigma_tol,
            record_every=record_every,
        )


@dataclass(eq=False)
class FluidPath:
    """Integrated trajectory on a uniform grid.

    ``states[k]`` is the padded profile at ``times[k]``: shape (classes,
    levels + 2), column 0 the class fractions, the last column identically 0.
    """

    times: np.ndarray
    states: np.ndarray
    system: SystemConfig
    config: IntegratorConfig
    max_tail_mass: float = 0.0

    def profile(self, k: int) -> QVector:
        tail = self.states[k][:, :-1].copy()
        return QVector(alpha=np.asarray(self.system.alpha), tail=tail)

    def mass(self) -> np.ndarray:
        """Total mass per recorded time."""
        return self.states[:, :, 1:].sum(axis=(1, 2))

    def final(self) -> QVector:
        return self.profile(len(self.times) - 1)


def _pad(q: QVector, levels: int) -> np.ndarray:
    if q.depth > levels:
        extra = float(np.abs(q.tail[:, levels + 1 :]).max(initial=0.0))
        if extra > 0:
            raise ValueError(
                f"profile carries mass at level {q.depth} beyond truncation {levels}"
            )
    out = np.zeros((q.m, levels + 2))
    upto = min(q.depth, levels)
    out[:, : upto + 1] = q.tail[:, : upto + 1]
    return out


def _active_slot(
    family: UtilityFamily, padded: np.ndarray, tol: float
) -> Coordinate:
    """Best-ranked slot whose gap to the level above exceeds ``tol``."""
    m, width = padded.shape
    best: Coordinate | None = None
    for ci in range(m):
        row = padded[ci]
        # Gap at slot (ci+1, j) is row[j-1] - row[j]; scan shallow levels first.
        for j in range(1, width - 1):
            if row[j - 1] - row[j] > tol:
                cand = Coordinate(ci + 1, j)
                if best is None or family.rank_precedes(best, cand, tol=0.0):
                    best = cand
                break
    if best is None:
        raise RuntimeError(
            "no active slot within the truncated profile; increase the depth"
        )
    return best


def fluid_sigma(family: UtilityFamily, q: QVector, tol: float = SIGMA_TOL) -> Coordinate:
    """Active slot of a profile."""
    return _active_slot(family, _pad(q, q.depth), tol)


def _fill_depths(
    family: UtilityFamily, sigma: Coordinate, m: int, levels: int
) -> list[int]:
    """Per class, the number of levels ranked strictly above ``sigma``."""
    out = []
    for ci in range(m):
        cls = ci + 1
        if cls == sigma.cls:
            out.append(sigma.level - 1)
            continue
        depth = 0
        while depth < levels and family.rank_precedes(sigma, Coordinate(cls, depth + 1)):
            depth += 1
        if depth >= levels:
            raise RuntimeError(
                f"class {cls} saturates past the truncation depth {levels}"
            )
        out.append(depth)
    return out


def _rhs(
    family: UtilityFamily,
    alpha: np.ndarray,
    lam: float,
    mu: float,
    padded: np.ndarray,
    sigma: Coordinate,
    depths: list[int],
) -> tuple[np.ndarray, np.ndarray]:
    """Drift and inflow-rate arrays for a padded profile with known active slot."""
    m, width = padded.shape
    inflow = np.zeros_like(padded)
    above = 0.0
    for ci in range(m):
        d = depths[ci]
        if d:
            js = np.arange(1, d + 1)
            rates = mu * js * (alpha[ci] - padded[ci, 2 : d + 2])
            inflow[ci, 1 : d + 1] = rates
            above += float(rates.sum())
    inflow[sigma.cls - 1, sigma.level] = lam - above
    shifted = np.zeros_like(padded)
    shifted[:, :-1] = padded[:, 1:]
    js = np.arange(width)
    drift = inflow - mu * js * (padded - shifted)
    drift[:, 0] = 0.0
    return drift, inflow


def fluid_rhs(
    system: SystemConfig, q: QVector, sigma_tol: float = SIGMA_TOL
) -> tuple[np.ndarray, np.ndarray, Coordinate]:
    """Drift of a profile under the large-system dynamics.

    Returns ``(dq, inflow, active)`` where both arrays are indexed like
    ``q.tail`` (class row, level column; column 0 is constant so its drift is
    zero). Summing the drift over all levels gives ``lam - mu * mass`` exactly:
    inflows total ``lam`` by construction and the drain terms telescope.
    """
    family = system.family
    alpha = np.asarray(system.alpha)
    padded = _pad(q, q.depth + 1)
    sigma = _active_slot(family, padded, sigma_tol)
    depths = _fill_depths(family, sigma, q.m, padded.shape[1] - 2)
    drift, inflow = _rhs(family, alpha, system.lam, system.mu, padded, sigma, depths)
    return drift[:, : q.depth + 1], inflow[:, : q.depth + 1], sigma


def equilibrium_profile(system: SystemConfig) -> QVector:
    """The stationary profile: the greedy fill at the offered load."""
    return optimal_assignment(system.family, system.alpha, system.rho).q_star


def _project_conserving(
    raw: np.ndarray, alpha: np.ndarray, pour_order: list[Coordinate]
) -> tuple[np.ndarray, float]:
    """Feasibility projection that redistributes instead of discarding.

    Clamp to [0, alpha] and restore monotonicity across levels, then pour the
    clipped-off mass back into the best-ranked slots that still have room
    (that is where the exact dynamics would have routed it once the boundary
    slot filled mid-step). Returns the projected state and the maximum
    pointwise displacement. Mass that finds no room stays lost; the caller
    checks the total against its own running target.
    """
    target = float(raw[:, 1:].sum())
    proj = np.minimum.accumulate(np.clip(raw, 0.0, alpha[:, None]), axis=1)
    proj[:, -1] = 0.0
    delta = target - float(proj[:, 1:].sum())
    if delta > 1e-18:
        for cls, level in pour_order:
            ci = cls - 1
            room = proj[ci, level - 1] - proj[ci, level]
            if room <= 0.0:
                continue
            add = room if room < delta else delta
            proj[ci, level] += add
            delta -= add
            if delta <= 1e-18:
                break
    elif delta < -1e-18:
        # Clipping negatives added mass; shave it off the worst-ranked slots.
        for cls, level in reversed(pour_order):
            ci = cls - 1
            excess = proj[ci, level] - proj[ci, level + 1]
            if excess <= 0.0:
                continue
            cut = excess if excess < -delta else -delta
            proj[ci, level] -= cut
            delta += cut
            if delta >= -1e-18:
                break
    return proj, float(np.abs(proj - raw).max())


def integrate_fluid(
    system: SystemConfig,
    q0: QVector | None,
    config: IntegratorConfig,
) -> FluidPath:
    """Explicit trapezoid steps with a mass-conserving feasibility projection.

    ``q0=None`` starts from the empty profile. Each step takes a predictor
    Euler stage, re-evaluates the drift there, and averages the two slopes;
    after every stage the state is clamped to [0, alpha], made non-increasing
    across levels, and any mass the clamp removed is poured back into the
    best-ranked open slots. The two-stage step keeps the total-mass recursion
    accurate to O(dt^2); the conserving projection keeps it exact through
    boundary crossings. If a projection ever moves the state by more than
    ``10 * dt * lam`` the step size is declared too coarse and the run aborts.
    Mass above the last two retained levels is monitored; if it ever exceeds
    1e-8 a truncation warning is issued.
    """
    if q0 is None:
        q0 = QVector.zeros(system.alpha, 1)
    family = system.family
    alpha = np.asarray(system.alpha, dtype=np.float64)
    lam = system.lam
    mu = system.mu
    dt = config.dt
    levels = config.levels
    m = len(alpha)
    steps = int(math.ceil(config.horizon / dt - 1e-9))
    q = _pad(q0, levels)
    q[:, 0] = alpha
    move_cap = 10.0 * dt * lam + 1e-15
    pour_order = [
        c for c in family.enumerate_ranked(m * levels) if c.level <= levels
    ]

    depth_cache: dict[Coordinate, list[int]] = {}

    def drift_at(state: np.ndarray) -> np.ndarray:
        sigma = _active_slot(family, state, config.sigma_tol)
        depths = depth_cache.get(sigma)
        if depths is None:
            depths = _fill_depths(family, sigma, m, levels)
            depth_cache[sigma] = depths
        d, _ = _rhs(family, alpha, lam, mu, state, sigma, depths)
        return d

    recorded = [q.copy()]
    rec_times = [0.0]
    max_tail = float(q[:, levels - 1 :].sum())
    for k in range(1, steps + 1):
        d1 = drift_at(q)
        pred_raw = q + dt * d1
        pred_raw[:, -1] = 0.0
        pred, _ = _project_conserving(pred_raw, alpha, pour_order)
        d2 = drift_at(pred)
        raw = q + (0.5 * dt) * (d1 + d2)
        raw[:, -1] = 0.0
        q, moved = _project_conserving(raw, alpha, pour_order)
        if moved > move_cap:
            raise RuntimeError(
                f"projection moved the state by {moved:.3e} at t={k * dt:.6f}; "
                f"dt={dt} is too large for these dynamics"
            )
        tail = float(q[:, levels - 1 :].sum())
        if tail > max_tail:
            max_tail = tail
        if k % config.record_every == 0 or k == steps:
            recorded.append(q.copy())
            rec_times.append(k * dt)
    if max_tail > TRUNCATION_WARN:
        warnings.warn(
            f"mass {max_tail:.3e} reached the last truncated levels; "
            f"results may be biased, increase levels beyond {levels}",
            RuntimeWarning,
            stacklevel=2,
        )
    return FluidPath(
        times=np.asarray(rec_times),
        states=np.asarray(recorded),
        system=system,
        config=config,
        max_tail_mass=max_tail,
    )


# ---------------------------------------------------------------------------
# Upper-barrier reflection
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SampledPath:
    """A real path sampled on a strictly increasing time grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ValueError("times and values must be equal-length vectors")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def skorokhod_reflect(
    path: SampledPath, barrier: float
) -> tuple[SampledPath, SampledPath]:
    """One-sided reflection below an upper barrier.

    Returns ``(push, reflected)``: the minimal non-decreasing process that,
    subtracted from the input, keeps it at or below the barrier, and the
    reflected path itself. The push at time t is the running maximum of the
    barrier excess. Requires the path to start at or below the barrier.
    """
    x = path.values
    if x.size == 0:
        raise ValueError("cannot reflect an empty path")
    if x[0] > barrier:
        raise ValueError(f"path starts at {x[0]}, above the barrier {barrier}")
    push = np.maximum.accumulate(np.maximum(x - barrier, 0.0))
    return (
        SampledPath(times=path.times, values=push),
        SampledPath(times=path.times, values=x - push),
    )


@dataclass(eq=False)
class ReflectionReport:
    """Residuals of the reflection identities along one trajectory."""

    slots: list[Coordinate]
    ranks: np.ndarray
    flow_residuals: np.ndarray
    state_residuals: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.slots)

    @property
    def max_residual(self) -> float:
        if self.depth == 0:
            return 0.0
        return float(
            max(self.flow_residuals.max(), self.state_residuals.max())
        )


def verify_reflection_system(path: FluidPath, margin: int = 2) -> ReflectionReport:
    """Check the chained-reflection form of the dynamics on a trajectory.

    For each ranked slot k up to the deepest rank the trajectory activates
    (plus ``margin``), accumulate the inflow that passes slot k while the
    active slot sits below it, reconstruct the slot's free process from the
    previous slot's overflow minus its own drain, and compare: the overflow
    must be the upper-barrier push of the free process at the class fraction,
    and the slot occupancy must be the reflected path.

    Integrals use the trapezoid rule; the step in which the active slot moves
    past k contributes only the estimated fraction of the step after the slot
    filled (from its remaining gap and fill rate at the left endpoint), since
    the gated integrand jumps there. Residuals shrink with the step size.
    """
    system = path.system
    family = system.family
    alpha = np.asarray(system.alpha)
    lam = system.lam
    mu = system.mu
    states = path.states
    times = path.times
    if len(times) < 2:
        raise ValueError("need at least two recorded states")
    dt = float(times[1] - times[0])
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12):
        raise ValueError("reflection checks need a uniform grid; record every step")
    steps = len(times)
    levels = states.shape[2] - 2

    enum = Enumeration(family)
    tol = path.config.sigma_tol
    ranks = np.empty(steps, dtype=np.int64)
    for k in range(steps):
        ranks[k] = enum.rank_of(_active_slot(family, states[k], tol))
    depth = int(ranks.max()) - 1 + margin
    slots = []
    for r in range(1, depth + 1):
        slot = enum.slot(r)
        if slot.level > levels:
            break
        slots.append(slot)
    depth = len(slots)

    # Inflow rate past slot k at each time, for slots 1..depth.
    passing = np.empty((depth, steps))
    drain = np.empty((depth, steps))
    for idx, (cls, level) in enumerate(slots):
        passing[idx] = mu * level * (alpha[cls - 1] - states[:, cls - 1, level + 1])
        drain[idx] = mu * level * (
            states[:, cls - 1, level] - states[:, cls - 1, level + 1]
        )
    remaining = lam - np.cumsum(passing, axis=0)
    into = np.vstack([np.full(steps, lam), remaining[:-1]]) if depth else None

    # Fraction of each step spent before the left endpoint's active slot
    # fills, estimated from its gap and net fill rate. Only used on steps
    # where the active rank moves.
    theta = np.zeros(steps - 1)
    for s in np.flatnonzero(np.diff(ranks)):
        r_l = int(ranks[s])
        if r_l - 1 >= depth:
            continue
        cls, level = slots[r_l - 1]
        gap = alpha[cls - 1] - states[s, cls - 1, level]
        rate = into[r_l - 1, s] - drain[r_l - 1, s]
        if rate > 0:
            theta[s] = min(max(gap / (rate * dt), 0.0), 1.0)
        else:
            theta[s] = 0.5

    flow_res = np.zeros(depth)
    state_res = np.zeros(depth)
    w_prev = lam * times
    for idx, (cls, level) in enumerate(slots):
        open_gate = ranks > idx + 1
        g_l, g_r = open_gate[:-1], open_gate[1:]
        frac = np.where(
            g_l & g_r, 1.0,
            np.where(g_l == g_r, 0.0, np.where(g_r, 1.0 - theta, 0.5)),
        )
        f = remaining[idx]
        seg = (0.5 * dt) * frac * (f[:-1] + f[1:])
        w = np.concatenate(([0.0], np.cumsum(seg)))
        d = drain[idx]
        drained = np.concatenate(
            ([0.0], np.cumsum((0.5 * dt) * (d[:-1] + d[1:])))
        )
        free = states[0, cls - 1, level] + w_prev - drained
        push = np.maximum.accumulate(np.maximum(free - alpha[cls - 1], 0.0))
        flow_res[idx] = float(np.abs(w - push).max())
        state_res[idx] = float(
            np.abs(states[:, cls - 1, level] - (free - push)).max()
        )
        w_prev = w
    return ReflectionReport(
        slots=slots,
        ranks=ranks,
        flow_residuals=flow_res,
        state_residuals=state_res,
    )
