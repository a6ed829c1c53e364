import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    """Record one acceptance line, print it immediately and assert it."""

    def record(number, name, passed, detail):
        line = "criterion %2d  %-34s %s  %s" % (number, name, "PASS" if passed else "FAIL", detail)
        request.config.acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
