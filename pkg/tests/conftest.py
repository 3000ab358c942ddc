import numpy as np
import pytest

from dagf.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.criterion_lines():
        terminalreporter.write_line(line)
