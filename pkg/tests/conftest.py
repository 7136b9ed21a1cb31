import sys

import numpy as np
import pytest

from popsreg.dataset import Dataset, EngineSpec, synth_engine


def three_rows():
    F = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return Dataset(F, np.array([1.0, 2.0, 4.0]))


def random_instance(seed, n=None, p=None):
    """Random dense features with a nonlinear target, N <= 50, P <= 8."""
    rng = np.random.default_rng(seed)
    p = p or int(rng.integers(1, 9))
    n = n or int(rng.integers(p + 1, 51))
    F = rng.standard_normal((n, p))
    y = F @ rng.standard_normal(p) + np.sin(3 * F[:, 0]) + 0.3 * rng.standard_normal(n)
    w = rng.uniform(0.2, 1.0, n)
    return Dataset(F, y, w)


def cubic(p, n, seed):
    return synth_engine(EngineSpec("cubic", p - 1, 1, 0.0, seed), n, seed)


def sinusoid(n=100, seed=0):
    return synth_engine(EngineSpec("sinusoid", 1, 2, 0.0, 0), n, seed)


@pytest.fixture
def tri():
    return three_rows()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
