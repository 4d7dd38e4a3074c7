import numpy as np
import pytest
from scipy import stats

from exitrate.elliptic_eig import build_grid
from exitrate.model import Box, DiffusionSpec
from exitrate.sde_sim import (ExitSampleSet, PolicyDrift, SimulationError, TailStarvedError,
                              counter_normals, estimate_exit_rate, sample_exit_times,
                              simulate_exit, survival_curve, write_samples_csv,
                              write_sidecar, write_survival_csv)


def _synthetic(times, t_max=np.inf):
    return ExitSampleSet(np.asarray(times, dtype=float), 0.5, 1e-3, t_max, 0)


def test_counter_normals_are_standard_normal():
    keys = np.arange(20_000, dtype=np.uint64)
    z = counter_normals(keys, 3, 2)
    assert z.shape == (20_000, 2)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02
    assert stats.kstest(z.ravel(), "norm").pvalue > 1e-3
    # different steps are uncorrelated
    z2 = counter_normals(keys, 4, 2)
    assert abs(np.corrcoef(z[:, 0], z2[:, 0])[0, 1]) < 0.03


def test_noiseless_stable_is_censored(interval, unit_noise):
    assert simulate_exit([[-1.0]], unit_noise, 0.0, [0.5], interval, 1e-2, 5.0, 1) is None


def test_noiseless_unstable_exit_time(interval, unit_noise):
    dt = 1e-3
    t = simulate_exit([[1.0]], unit_noise, 0.0, [0.5], interval, dt, 5.0, 1)
    assert abs(t - np.log(2)) <= 2 * dt


def test_seed_is_bit_reproducible(interval, unit_noise):
    a = simulate_exit([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 20.0, 42)
    b = simulate_exit([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 20.0, 42)
    assert a == b


def test_batch_matches_single_runs(interval, unit_noise):
    s = sample_exit_times([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 20.0, 8, 100)
    singles = [simulate_exit([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 20.0, 100 + i)
               for i in range(8)]
    np.testing.assert_array_equal(s.times, np.array(singles, dtype=float))


def test_precondition_errors(interval, unit_noise):
    with pytest.raises(ValueError):
        simulate_exit([[-1.0]], unit_noise, 0.5, [1.5], interval, 1e-3, 1.0, 0)
    with pytest.raises(ValueError):
        simulate_exit([[-1.0]], unit_noise, 0.5, [0.0], interval, 0.0, 1.0, 0)


def test_blowup_reports_step(unit_noise):
    D = Box([-1e300], [1e300])
    with pytest.raises(SimulationError, match="step"):
        simulate_exit([[1e300]], unit_noise, 0.0, [1e10], D, 1.0, 10.0, 0)


def test_singleton_and_determinism(interval, unit_noise):
    one = sample_exit_times([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 5.0, 1, 3)
    assert one.n == 1
    a = sample_exit_times([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 5.0, 50, 3)
    b = sample_exit_times([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-3, 5.0, 50, 3)
    np.testing.assert_array_equal(a.times, b.times)


def test_censoring_consistent_with_survival(interval, unit_noise):
    n, t_max = 10_000, 3.0
    s = sample_exit_times([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-2, t_max, n, 9)
    p = survival_curve(s, [t_max])[0]
    frac = s.censored_count / n
    assert abs(frac - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12


def test_survival_counting():
    s = _synthetic([1, 2, 3, 4])
    assert survival_curve(s, [2.5])[0] == 0.5
    assert survival_curve(s, [1e-9])[0] == 1.0
    assert survival_curve(s, [0.999])[0] == 1.0
    S = survival_curve(s, np.linspace(0, 5, 50))
    assert np.all(np.diff(S) <= 0)


def test_survival_with_censoring():
    s = _synthetic([1.0, np.nan, np.nan, 3.0], t_max=10.0)
    np.testing.assert_allclose(survival_curve(s, [2.0, 5.0, 10.0]), [0.75, 0.5, 0.5])


def test_exponential_rate_recovered():
    rng = np.random.default_rng(5)
    s = _synthetic(rng.exponential(0.5, 100_000))
    est = estimate_exit_rate(s)
    assert est.rate == pytest.approx(2.0, abs=0.05)
    assert 0 < est.stderr < 0.05 and est.r_squared > 0.99


def test_shift_invariance():
    rng = np.random.default_rng(6)
    t = rng.exponential(1.0, 20_000)
    a = estimate_exit_rate(_synthetic(t), (0.5, 2.0))
    b = estimate_exit_rate(_synthetic(t + 3.0), (3.5, 5.0))
    assert a.rate == pytest.approx(b.rate, rel=1e-9)


def test_tail_starved():
    rng = np.random.default_rng(7)
    s = _synthetic(rng.exponential(1.0, 100))
    with pytest.raises(TailStarvedError):
        estimate_exit_rate(s, (0.1, 10.0))
    with pytest.raises(TailStarvedError):
        estimate_exit_rate(_synthetic([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), (1.0, 2.0))


def test_policy_drift_reads_nearest_node():
    grid = build_grid(Box([-1.0], [1.0]), 5)         # interior -0.5, 0, 0.5
    drift = PolicyDrift([[0.0]], [[1.0]], grid, [[1.0], [0.0], [-1.0]])
    X = np.array([[-0.6], [-0.1], [0.4], [0.99]])
    np.testing.assert_allclose(drift(X).ravel(), [1.0, 0.0, -1.0, -1.0])


def test_writers(tmp_path, interval, unit_noise):
    s = sample_exit_times([[-1.0]], unit_noise, 0.5, [0.0], interval, 1e-2, 0.3, 20, 0)
    write_samples_csv(s, tmp_path / "x.csv")
    rows = (tmp_path / "x.csv").read_text().splitlines()
    assert rows[0] == "run,exit_time,censored" and len(rows) == 21
    write_survival_csv(s, [0.1, 0.2], tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,S_hat"
    write_sidecar(tmp_path / "p.json", {"eps": 0.5})
    assert '"eps": 0.5' in (tmp_path / "p.json").read_text()


def test_euler_maruyama_bias_is_first_order(interval, unit_noise):
    # halving dt must move the rate by a few standard errors at most
    kw = dict(x0=[0.0], D=interval, t_max=30.0, n=6000, base_seed=11)
    r1 = estimate_exit_rate(sample_exit_times([[-1.0]], unit_noise, 0.5, dt=4e-3, **kw))
    r2 = estimate_exit_rate(sample_exit_times([[-1.0]], unit_noise, 0.5, dt=2e-3, **kw))
    assert abs(r1.rate - r2.rate) < 3 * np.hypot(r1.stderr, r2.stderr)
