import pytest

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Call with (label, passed, detail); records the line and asserts."""
    lines = request.config.stash[_ACCEPTANCE]

    def report(number, passed, detail):
        lines.append((number, bool(passed), detail))
        assert passed, f"criterion {number}: {detail}"

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")

    def order(line):
        label = str(line[0])
        return int("".join(ch for ch in label if ch.isdigit())), label

    for label, passed, detail in sorted(lines, key=order):
        terminalreporter.write_line(f"criterion {label:<3} {'PASS' if passed else 'FAIL'}  {detail}")
