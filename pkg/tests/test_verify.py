import pytest

from compsep.cli import main
from compsep.verify import (
    check_criteria,
    check_distributions,
    check_gradients,
    check_spectral_norm,
    check_three_point,
    verify_suite,
)


def test_fault_injection_breaks_only_the_fd_check():
    assert check_gradients(0)[0]
    assert not check_gradients(0, fault="flip_grad_sign")[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_deterministic_checks_pass_for_any_seed(seed):
    for check in (check_spectral_norm, check_criteria, check_three_point):
        ok, detail = check(seed)
        assert ok, detail


def test_monte_carlo_checks_rarely_flip_with_the_seed():
    # Three 3-sigma / 2% / 1% tests: the per-seed false-alarm rate is well
    # under 1%, so 20 seeds should produce at most one alarm.
    fails = [s for s in range(20) if not check_distributions(s)[0]]
    assert len(fails) <= 1, fails


def test_full_suite_and_cli(capsys):
    results = verify_suite(seed=3)
    assert all(r.passed for r in results), [r for r in results if not r.passed]
    assert len(capsys.readouterr().out.strip().splitlines()) == len(results)
    assert main(["verify", "--fault", "flip_grad_sign"]) == 1
    assert "FAIL gradient_vs_fd" in capsys.readouterr().out


def test_unknown_fault_rejected():
    with pytest.raises(ValueError):
        verify_suite(fault="melt")
