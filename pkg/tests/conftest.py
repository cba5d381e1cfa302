import numpy as np
import pytest

from tvbridge import acceptance


@pytest.fixture(scope="session")
def ctx():
    """One seed-42 warmup shared by every test that needs a trained bundle."""
    c = acceptance.Context(seed=42)
    c.warmup()
    return c


@pytest.fixture(scope="session")
def bundle(ctx):
    return ctx.warmup().bundle


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
