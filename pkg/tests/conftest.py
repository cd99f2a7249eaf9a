import pytest

_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo test")


@pytest.fixture
def criterion():
    """Record a one-line pass/fail verdict; shown in the terminal summary."""
    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _LINES.append(line)
        print(line)
        return ok
    return record


@pytest.fixture
def info():
    """Record an informational line (no verdict) for the terminal summary."""
    def record(text):
        line = f"INFO {text}"
        _LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
