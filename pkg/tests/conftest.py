import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_RESULTS = []


def record(criterion: int, name: str, passed: bool, detail: str) -> None:
    """Collect one acceptance-criterion outcome for the terminal summary."""
    line = f"criterion {criterion} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    _ACCEPTANCE_RESULTS.append((criterion, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
