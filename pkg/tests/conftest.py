import numpy as np
import pytest

from condot import _backend


@pytest.fixture(params=["compiled", "python"])
def backend(request):
    """Run a test once per kernel backend, restoring the default afterwards."""
    name = request.param
    if name == "compiled":
        try:
            from condot import _kernels  # noqa: F401
        except ImportError:
            pytest.skip("compiled kernels not built")
    before = _backend.BACKEND
    _backend.use(name)
    yield name
    _backend.use(before)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, title, passed, detail):
        lines.append((number, f"criterion {number:>2}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
