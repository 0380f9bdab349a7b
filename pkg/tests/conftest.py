"""Shared fixtures plus the acceptance criteria summary hook."""

import pytest

from coinprune.chaingen import generate_chain, light_profile

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion.

    The lines are echoed in a dedicated terminal section at the end of
    the run so the verdicts are visible without -s.
    """
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def light_chain():
    """Genesis plus 600 validated light-workload blocks, shared read-only."""
    return generate_chain(light_profile(seed=1234), 600)
