"""The nine acceptance criteria at their stated tolerances.

Each test prints its criterion line; the lines are repeated in the terminal
summary.  Criteria that fail are reported as failures, not skipped.
"""

import pytest

from mechdesign.harness.acceptance import CRITERIA, run_acceptance

LINES = {}


@pytest.mark.parametrize("key", list(CRITERIA))
def test_criterion(key):
    (result,) = run_acceptance([key])
    line = f"{result.line()} ({result.seconds:.1f}s)"
    LINES[key] = line
    print(line)
    assert result.passed, line
