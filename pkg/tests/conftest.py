import numpy as np
import pytest

from mixedtraffic.analysis import run, stitch
from mixedtraffic.config import load_preset


@pytest.fixture(scope="session")
def smooth_cfg():
    return load_preset("smooth")


@pytest.fixture(scope="session")
def example1_cfg():
    return load_preset("example1")


@pytest.fixture(scope="session")
def smooth_run(smooth_cfg):
    """Coupled smooth-preset evolution to T = 1 with the Picard slabs kept."""
    return run(smooth_cfg, keep_slabs=True)


@pytest.fixture(scope="session")
def smooth_slab(smooth_run):
    return stitch(smooth_run)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    log = request.config.stash[ACCEPTANCE_KEY]

    def record(label, passed, value, tolerance):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: value={value} tolerance={tolerance}"
        print(line)
        log.append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE_KEY, [])
    if log:
        terminalreporter.section("acceptance criteria")
        for line in log:
            terminalreporter.write_line(line)
