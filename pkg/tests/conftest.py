import numpy as np
import pytest

from kmsv_mtl.tasks import MultiTaskDataset, TaskData


def random_dataset(rng, d=4, T=3, n=12, c_t=1):
    tasks = []
    for t in range(T):
        X = rng.standard_normal((d, n))
        Y = rng.standard_normal((c_t, n)) + rng.standard_normal()
        tasks.append(TaskData(X, Y, f"task{t}"))
    return MultiTaskDataset(tuple(tasks))


@pytest.fixture
def rng():
    return np.random.default_rng(20241014)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
