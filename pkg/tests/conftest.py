import pytest

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line: report(number, passed, detail)."""

    def record(number, passed, detail=""):
        _ACCEPTANCE.append((number, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
