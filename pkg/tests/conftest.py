import numpy as np
import pytest

from navmem.rng import stream

_CRITERION_LINES: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}" + (f" — {detail}" if detail else "")
    _CRITERION_LINES.append(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return stream(0, "test")
