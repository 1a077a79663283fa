import numpy as np
import pytest

from abductive import kernels
from abductive.relation import ObjectEntry, SnapshotRecord


@pytest.fixture(autouse=True)
def _restore_backend():
    before = kernels.BACKEND
    yield
    kernels.use_backend(before)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_snapshot(video, t, actions, rng, cats=(0, 1), d=3):
    objs = [ObjectEntry(int(c), rng.normal(size=d), rng.normal(size=d)) for c in cats]
    return SnapshotRecord(video, t, rng.normal(size=d), objs, frozenset(actions))


def make_video(vid, actions, rng, cats=(0, 1)):
    return [make_snapshot(vid, t, a, rng, cats) for t, a in enumerate(actions)]


# -- acceptance report ---------------------------------------------------------------
# Each acceptance test records one PASS/FAIL line; the lines are printed in the
# terminal summary so they survive output capture.

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        request.config.stash[_LINES].append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
