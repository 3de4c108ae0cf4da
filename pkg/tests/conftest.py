import pytest

_LINES = {}


class AcceptanceReport:
    def record(self, key, passed: bool, detail: str) -> str:
        line = f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}"
        _LINES[key] = line
        print(line)
        return line


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def _order(key):
    head = key.split()[1] if key.startswith("criterion ") else ""
    return (0, int(head)) if head.isdigit() else (1, key)


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=_order):
        terminalreporter.write_line(_LINES[key])
