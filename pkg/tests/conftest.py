"""Shared pytest wiring: acceptance criteria report in the terminal summary."""

criterion_lines: list[str] = []


def record_criterion(line: str) -> None:
    criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
