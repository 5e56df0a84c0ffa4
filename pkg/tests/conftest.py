import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance check; echoed live and in the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
