import pytest

# (criterion, passed, detail) lines from the acceptance suite, echoed at the end of the run
GATE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def gate():
    def record(criterion: str, passed: bool, detail: str) -> None:
        GATE_RESULTS.append((criterion, bool(passed), detail))
        print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
        assert passed, f"{criterion} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not GATE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(GATE_RESULTS):
        terminalreporter.write_line(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
