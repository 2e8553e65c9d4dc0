"""Acceptance criteria at the stated tolerances; one PASS/FAIL line per criterion."""
import pytest

from conftest import ACCEPTANCE_LINES
from tuckersum import acceptance


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    result = acceptance.run_all([number], echo=None)[0]
    line = result.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, line
