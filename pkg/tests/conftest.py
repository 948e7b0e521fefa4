import numpy as np
import pytest

from treebagging.core import ArmSet, ContextSchema, Feature, ObservationLog


def real_schema(p: int, low: float = -10.0, high: float = 10.0) -> ContextSchema:
    return ContextSchema(tuple(Feature(f"x{j}", "real", low, high) for j in range(p)), (-100.0, 100.0))


def arm_set(K: int) -> ArmSet:
    return ArmSet(tuple(f"a{k}" for k in range(K)))


def random_log(rng: np.random.Generator, n: int = 300, p: int = 3, K: int = 3, batch_size: int = 50,
               effect: float = 2.0) -> ObservationLog:
    """Uniformly assigned log where arm ``k`` pays off when ``x0`` is in its third of the line."""
    X = rng.uniform(-3, 3, (n, p))
    w = rng.integers(0, K, n)
    centre = -2 + 4 * w / max(K - 1, 1)
    y = effect * np.exp(-(X[:, 0] - centre) ** 2) + rng.normal(0, 1, n)
    e = np.full((n, K), 1.0 / K)
    t = np.arange(1, n + 1)
    return ObservationLog(real_schema(p), arm_set(K), t, (t - 1) // batch_size + 1, X, w, y, e)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_log(rng):
    return random_log(rng)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines.values()):
            terminalreporter.write_line(line)
