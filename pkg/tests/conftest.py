import numpy as np
import pytest

from svmpool.features import Dataset, FeatureBag, NegativeBag, Origin
from svmpool.synth import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    bags = [
        FeatureBag(np.array([[1.0, 4.0], [3.0, 2.0]]), 1, "a"),
        FeatureBag(np.array([[-2.0, 0.5], [0.0, -1.0], [1.5, 1.5]]), 2, "b"),
    ]
    neg = NegativeBag(np.array([[0.0, 0.0], [0.25, -0.5]]), Origin.WHITE_NOISE)
    return Dataset(bags, neg)


@pytest.fixture(scope="session")
def planted3():
    """Three well-separated classes, 8 bags each."""
    return generate(SynthConfig(3, 8, 30, 8, 0.3, 3.0, 0.1, 1.0, 40, None, 5))[0]


_CRITERIA_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(number, title, ok, detail)`` records one acceptance line and asserts it."""
    lines = request.config.stash[_CRITERIA_KEY]

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
