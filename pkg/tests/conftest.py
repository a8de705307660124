import numpy as np
import pytest

from logq.data import InteractionLog, leave_one_out_split
from logq.synth import SynthConfig, synth_interactions


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="log.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write


@pytest.fixture(scope="session")
def small_synth():
    return synth_interactions(SynthConfig(num_users=400, num_items=120, num_clusters=8,
                                          mean_events=12, seed=3))


@pytest.fixture(scope="session")
def small_split(small_synth):
    return leave_one_out_split(small_synth)


def tiny_log(rows, num_users=None, num_items=None):
    users, items, stamps = zip(*rows)
    return InteractionLog.from_arrays(users, items, stamps, num_users, num_items)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
