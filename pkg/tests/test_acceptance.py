"""Acceptance suite: one test per release criterion.

Each criterion runs at its stated tolerance and time limit; `pytest -v`
prints one pass/fail line per criterion.  The same checks back the
`trainmem verify` subcommand.
"""

import pytest

from trainmem.verification import CHECKS


@pytest.mark.parametrize("cid,name,fn", CHECKS, ids=[f"criterion_{c}_{n}" for c, n, _ in CHECKS])
def test_acceptance(cid, name, fn):
    detail = fn()
    assert detail  # checks raise AssertionError with diagnostics on failure
