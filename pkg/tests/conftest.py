import pytest

_LINES = []


class Criterion:
    def __init__(self, label):
        self.label = label

    def check(self, ok, detail=""):
        _LINES.append(f"[{'PASS' if ok else 'FAIL'}] {self.label}: {detail}")
        assert ok, f"{self.label}: {detail}"


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for the acceptance summary, then assert."""
    marker = request.node.get_closest_marker("criterion")
    return Criterion(marker.args[0] if marker else request.node.name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
