import math

import pytest

from robincusp.asymptotics import CuspParams, classify_regime


@pytest.fixture(scope="session")
def canon():
    """n = 2, h = 2, d = 1, a = 0.5."""
    return classify_regime(CuspParams.planar(1.0, 0.5, 1.0))


@pytest.fixture(scope="session")
def threshold():
    return classify_regime(CuspParams.planar(1.0, 0.25, 1.0))


@pytest.fixture(scope="session")
def subcritical():
    return classify_regime(CuspParams.planar(1.0, 0.1, 1.0))


def log_space(a, b, n):
    return [math.exp(math.log(a) + (math.log(b) - math.log(a)) * k / (n - 1)) for k in range(n)]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(label: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
