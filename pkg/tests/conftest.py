import pytest

# criterion number -> (passed, label, detail), filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, label, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {label}: {detail}")


@pytest.fixture
def record():
    def _record(n, label, ok, detail):
        ACCEPTANCE[n] = (bool(ok), label, detail)
        print(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {label}: {detail}")
        assert ok, detail
    return _record
