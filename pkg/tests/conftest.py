"""Shared pytest plumbing: surfaces the acceptance-gate verdict lines.

Pytest captures file descriptors during the run, so the acceptance tests
register their one-line verdicts here and the terminal-summary hook prints
them where they are always visible, including under plain `pytest -v`.
"""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
