import numpy as np
import pytest

from mudiknn.annotations import AnnotationSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_annotations(rng, n, width=64, height=64):
    heads = np.column_stack([rng.uniform(0, width, n), rng.uniform(0, height, n)])
    return AnnotationSet(width, height, heads)


# criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
