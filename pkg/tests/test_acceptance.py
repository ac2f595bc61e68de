"""The fourteen acceptance criteria at their stated tolerances.

Each criterion prints one ``[PASS]``/``[FAIL]`` line; the lines are also
collected into the pytest terminal summary.  Run directly with
``python tests/test_acceptance.py`` for the lines alone.
"""

import sys

import pytest

from qbsde.harness import criteria

LINES: list[str] = []


@pytest.mark.acceptance
@pytest.mark.parametrize("check", criteria.ALL, ids=lambda fn: fn.__name__)
def test_criterion(check):
    # order matters: the Y-bound audit covers every solve logged before it
    res = check()
    LINES.append(res.line())
    print(res.line())
    assert res.passed, res.detail


if __name__ == "__main__":
    failed = 0
    for check in criteria.ALL:
        res = check()
        print(res.line(), flush=True)
        failed += not res.passed
    sys.exit(1 if failed else 0)
