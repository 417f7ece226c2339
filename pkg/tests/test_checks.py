import pytest

from evits import checks
from evits.errors import ConfigError


@pytest.mark.parametrize("kind", ["ml", "ce", "mse"])
def test_evidential_suites_small(kind):
    worst = checks.evidential_suite(kind, points=10, seed=1)
    assert worst < checks.LOSS_TOLERANCE


def test_kl_suite_small():
    assert checks.kl_suite(points=10, seed=1) < checks.LOSS_TOLERANCE


def test_alignment_suite_small():
    assert checks.alignment_suite(points=8, seed=1) < checks.LOSS_TOLERANCE


def test_run_suite_dispatch():
    worst, tolerance = checks.run_suite("ce", points=5, seed=0)
    assert worst < tolerance == checks.LOSS_TOLERANCE
    with pytest.raises(ConfigError):
        checks.run_suite("everything")


def test_suites_deterministic_per_seed():
    a = checks.kl_suite(points=5, seed=3)
    b = checks.kl_suite(points=5, seed=3)
    assert a == b
