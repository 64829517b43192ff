import numpy as np
import pytest

from boundaryrd import CutoffGrid, Dataset, DGPSpec, generate


def make_data(n=400, seed=0, noise=0.3, effect=0.5, clusters=None):
    """Scores uniform on [-1, 1]^2, treated when x1 >= 0, smooth outcomes."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    t = x[:, 0] >= 0
    y = 1.0 + 0.5 * x[:, 0] - 0.3 * x[:, 1] + 0.2 * x[:, 1] ** 2 + effect * t + noise * rng.standard_normal(n)
    cl = None if clusters is None else rng.integers(0, clusters, size=n)
    return Dataset(y, x, t, cluster=cl)


def vertical_grid(J=3):
    return CutoffGrid(np.column_stack([np.zeros(J), np.linspace(-0.5, 0.5, J)]))


@pytest.fixture
def small_data():
    return make_data()


@pytest.fixture
def small_grid():
    return vertical_grid()


@pytest.fixture(scope="session")
def dgp1_sample():
    return generate(DGPSpec.dgp(1, n=3000, seed=11))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES):
            terminalreporter.write_line(line)
