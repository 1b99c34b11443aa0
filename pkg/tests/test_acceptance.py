"""Acceptance criteria 1-8 at their stated tolerances and time limits."""

import pytest

from boundary_singular import acceptance

CRITERIA = [acceptance.criterion_1, acceptance.criterion_2, acceptance.criterion_3,
            acceptance.criterion_4, acceptance.criterion_5, acceptance.criterion_6,
            acceptance.criterion_7, acceptance.criterion_8]


@pytest.mark.slow
@pytest.mark.parametrize("k", range(1, 9))
def test_criterion(k, capsys):
    result = CRITERIA[k - 1]()
    with capsys.disabled():
        print("\n" + result.line())
    failed = [name for name, ok in result.checks.items() if not ok]
    assert not failed, result.values
    assert result.within_time, f"{result.seconds:.1f}s exceeds {result.limit:.0f}s"
