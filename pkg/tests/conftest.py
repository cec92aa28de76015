import numpy as np
import pytest
from hypothesis import settings

from implicithair.fields import GridSpec
from implicithair.strands import HairModel, Strand, canonical_bbox

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return GridSpec((12, 16, 16))


def line_model(p0, p1, n=20, box=(16, 16, 12)):
    pts = np.linspace(p0, p1, n)
    return HairModel([Strand(pts)], canonical_bbox(box))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; lines are echoed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
