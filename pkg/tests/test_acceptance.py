"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a PASS/FAIL line with the measured numbers (``pytest -s``
shows them; they also appear in the failure report).
"""
import pytest

from scatterkit import acceptance


@pytest.mark.parametrize("key", [k for k, _ in acceptance.CRITERIA])
def test_criterion(key):
    res = acceptance.run_one(key)
    print(res.line())
    assert res.passed, res.line()
