import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line; it is printed inline and again in the summary."""

    def record(k, ok, detail):
        line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[k] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
