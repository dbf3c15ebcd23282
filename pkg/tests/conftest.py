import numpy as np
import pytest

from dggs_fractal.sphere_geom import lonlat_to_vec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def octant():
    return lonlat_to_vec(np.array([0.0, 90.0, 0.0]), np.array([0.0, 0.0, 90.0]))


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def record(request):
    """Log one PASS/FAIL line for the acceptance summary, then assert it."""
    lines = request.config._acceptance_lines

    def _record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
