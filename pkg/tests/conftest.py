import numpy as np
import pytest

_ACCEPTANCE = []


def pytest_addoption(parser):
    parser.addoption("--acceptance-seeds", type=int, default=5,
                     help="seeds per directional acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def verdict(request):
    """``verdict(criterion, passed, detail)`` prints and records one line."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
