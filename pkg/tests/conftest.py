import pytest

# acceptance verdicts, filled in by test_acceptance.py
VERDICTS = {}


def record(name, ok, detail=""):
    VERDICTS[name] = (bool(ok), detail)
    print(f"{name}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


@pytest.fixture
def verdict():
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(VERDICTS, key=lambda s: int(s[2:])):
        ok, detail = VERDICTS[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
