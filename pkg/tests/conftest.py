import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


def report(number: int, title: str, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"{'PASS' if passed else 'FAIL'}  [{number:2d}] {title}: {detail}"


@pytest.fixture
def acceptance():
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
