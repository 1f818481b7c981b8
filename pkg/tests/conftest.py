"""Shared test plumbing: the release-gate scoreboard.

Gate tests queue one verdict line each; the hook prints them as a block
in the end-of-run summary, outside pytest's output capture, so the
scoreboard is visible on every run (passes included).
"""

_scoreboard = []


def record_verdict(line):
    _scoreboard.append(line)


def pytest_terminal_summary(terminalreporter):
    if _scoreboard:
        terminalreporter.section("acceptance scoreboard")
        for line in _scoreboard:
            terminalreporter.line(line)
