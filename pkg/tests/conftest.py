import numpy as np
import pytest

from gsv_interp import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=_kernels.available_backends())
def backend(request, monkeypatch):
    """Route every sparse product through one kernel backend."""
    mv, rmv = _kernels.get_backend(request.param)
    monkeypatch.setattr(_kernels, "csr_matvec", mv)
    monkeypatch.setattr(_kernels, "csr_rmatvec", rmv)
    return request.param


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, passed, detail)``."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
