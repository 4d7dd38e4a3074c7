import numpy as np
import pytest

from exitrate import oracles


def test_lattice_dp_free_motion_is_zero():
    assert oracles.lattice_action_dp(0.0, 1.0, 16, 0.0, -1.0, 1.0, 65) == pytest.approx(0.0)


def test_lattice_dp_single_step_is_exact():
    # one step to the best lattice point of a linear path from 0.5
    v = oracles.lattice_action_dp(0.5, 1.0, 1, 0.0, -1.0, 1.0, 5)
    assert v == pytest.approx(0.0)


def test_bruteforce_front():
    mask = oracles.non_dominated_bruteforce([(1, 2), (2, 1), (2, 2), (1, 2)])
    assert mask.tolist() == [True, True, False, True]


def test_intercept_bias_matches_polyfit():
    eps = np.array([0.5, 0.3, 0.2, 0.1])
    g = lambda e: np.sin(3 * e) + e**2
    assert oracles.linear_fit_intercept_bias(eps, g) == pytest.approx(
        np.polyfit(eps, g(eps), 1)[1], abs=1e-12)


def test_brownian_rate():
    assert oracles.brownian_exit_rate_1d(1.0, 2.0) == pytest.approx(np.pi**2 / 4)
