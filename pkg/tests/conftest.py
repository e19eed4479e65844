import pytest

from dsse.netmodel import load_network


@pytest.fixture(scope="session")
def two_bus():
    return load_network("two_bus")


@pytest.fixture(scope="session")
def three_bus():
    return load_network("three_bus")


@pytest.fixture(scope="session")
def feeder30():
    return load_network("feeder30")


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(criterion: str, ok: bool, detail: str):
        line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
