import pytest

from qubitline.params import DEFAULT_ATOM, AtomParams

# (criterion, verdict, detail) lines collected by the acceptance module.
ACCEPTANCE_LINES = []


@pytest.fixture
def atom():
    return DEFAULT_ATOM


@pytest.fixture
def clean_atom():
    """Default device without pure dephasing."""
    return AtomParams(DEFAULT_ATOM.omega01, DEFAULT_ATOM.gamma10, 0.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
