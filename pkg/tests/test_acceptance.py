"""The ten acceptance criteria at their stated tolerances, one verdict line each."""
import pytest

from mfcert import acceptance


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(acceptance.CRITERIA))
def test_criterion(k, capsys):
    checks = acceptance.CRITERIA[k]()
    passed = all(c.passed for c in checks)
    with capsys.disabled():
        print(f"\ncriterion {k}: {'pass' if passed else 'FAIL'}")
        for c in checks:
            if not c.passed:
                print(f"    failed check: {c.name}: measured {c.measured}, tolerance {c.tolerance}")
    assert passed, [c.to_dict() for c in checks if not c.passed]
