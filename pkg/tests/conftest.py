import numpy as np
import pytest

from poolsim.model import (
    CappedLinear,
    Linear,
    LogQuality,
    QVector,
    SystemConfig,
    Tabulated,
    UtilityFamily,
)

# Quadratic profile 2x - x^2/20 tabulated on 0..25; its marginals fall by
# exactly 0.1 per task, which makes tie and crossover points easy to reason
# about by hand.
QUAD_VALUES = tuple(2.0 * x - x * x / 20.0 for x in range(26))

TWO_CLASS_ALPHA = (0.5, 0.5)
THREE_CLASS_ALPHA = (0.5, 0.25, 0.25)


def two_class_family() -> UtilityFamily:
    """Log-quality pair used by most scenario tests (r = 20 and 30)."""
    return UtilityFamily((LogQuality(20.0), LogQuality(30.0)))


def piecewise_family() -> UtilityFamily:
    """Linear + tabulated quadratic + capped linear; growth switches classes
    at loads 1.25, 6.25 and 7.5."""
    return UtilityFamily((Linear(1.0), Tabulated(QUAD_VALUES), CappedLinear(1.5, 20)))


def shared_resource_family() -> UtilityFamily:
    return UtilityFamily((LogQuality(5.0), LogQuality(10.0), LogQuality(15.0)))


def two_class_system(n: int, rho: float, mu: float = 1.0) -> SystemConfig:
    return SystemConfig.from_rho(
        n=n, alpha=TWO_CLASS_ALPHA, rho=rho, mu=mu, family=two_class_family()
    )


def random_feasible_tail(rng: np.random.Generator, alpha, depth: int) -> QVector:
    """Random tail profile: per class a non-increasing column below alpha."""
    m = len(alpha)
    tail = np.zeros((m, depth + 1))
    tail[:, 0] = alpha
    for ci in range(m):
        level = alpha[ci]
        for j in range(1, depth + 1):
            level = level * rng.uniform(0.0, 1.0)
            tail[ci, j] = level
    return QVector(alpha=np.asarray(alpha, dtype=np.float64), tail=tail)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260815)
