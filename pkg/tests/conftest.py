import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    def _record(k: int, line: str):
        CRITERIA[k] = line
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
