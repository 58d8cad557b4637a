import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def _report(number: int, title: str, checks: dict):
        ok = all(bool(v) for v, _ in checks.values())
        detail = "; ".join(f"{name}={shown}" for name, (_, shown) in checks.items())
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        failed = [name for name, (v, _) in checks.items() if not v]
        assert not failed, f"criterion {number} failed checks: {failed}"

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
