import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion; returns ``check(name, passed, detail)``."""
    def check(name, passed, detail=""):
        _CRITERIA.append((name, bool(passed), detail))
        return bool(passed)
    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
