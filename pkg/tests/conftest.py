import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Lines are printed immediately and repeated in the terminal summary.
    """
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number, title, failures, detail=""):
        status = "PASS" if not failures else "FAIL"
        line = f"criterion {number} [{status}] {title}"
        if detail:
            line += f": {detail}"
        if failures:
            line += f"; first failure: {failures[0]}"
        lines.append((number, line))
        print(line)
        return not failures

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
