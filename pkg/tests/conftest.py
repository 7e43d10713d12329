import pytest

# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def report():
    def record(name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
