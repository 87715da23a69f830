import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])


@pytest.fixture
def record():
    """``record(number, ok, detail)`` stores one summary line for an acceptance criterion."""

    def _record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}"
        ACCEPTANCE_RESULTS[number] = line
        print(line)
        return ok

    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_sentences():
    with open(os.path.join(DATA_DIR, "myanmar_sentences.txt"), encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
