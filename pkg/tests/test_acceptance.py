"""Acceptance criteria 1 to 11, one test per criterion.

Each test runs the matching checks from ``walklab.verify`` with the pinned
tolerances in ``walklab.verify.TOL`` and the default seed. Verdict lines are
printed in the terminal summary.
"""
import pytest

from walklab import verify

RESULTS: dict[int, list] = {}


@pytest.mark.parametrize("k", sorted(verify.CRITERIA))
def test_criterion(k):
    verdicts = verify.criterion(k)
    RESULTS[k] = verdicts
    for v in verdicts:
        print(v.line())
    failed = [v.line() for v in verdicts if not v.passed]
    assert not failed, "\n".join(failed)
