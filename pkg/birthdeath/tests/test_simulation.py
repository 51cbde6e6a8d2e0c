"""Monte Carlo sampler: determinism, agreement with exact laws, persistence."""

import math

import numpy as np
import pytest

from birthdeath.app.core.exceptions import ConfigError, DomainError, PreconditionRefused
from birthdeath.app.services import (
    hitting_service,
    rates_service,
    separation_service,
    simulation_service,
)

N = 20_000


def test_same_seed_same_sample(unit):
    x = simulation_service.sample_hitting_times(unit, 0, 3, n=5000, seed=7)
    y = simulation_service.sample_hitting_times(unit, 0, 3, n=5000, seed=7)
    np.testing.assert_array_equal(x.values, y.values)


def test_sample_independent_of_thread_count(unit):
    one = simulation_service.sample_hitting_times(unit, 0, 3, n=10_000, seed=11, threads=1)
    four = simulation_service.sample_hitting_times(unit, 0, 3, n=10_000, seed=11, threads=4)
    np.testing.assert_array_equal(one.values, four.values)


def test_different_seeds_differ(unit):
    x = simulation_service.sample_hitting_times(unit, 0, 3, n=1000, seed=1)
    y = simulation_service.sample_hitting_times(unit, 0, 3, n=1000, seed=2)
    assert not np.array_equal(x.values, y.values)


@pytest.mark.parametrize("n, expected", [(1, 1.0), (2, 3.0), (4, 10.0)])
def test_unit_chain_means(unit, n, expected):
    sample = simulation_service.sample_hitting_times(unit, 0, n, n=N, seed=3)
    assert sample.censored_count == 0
    assert abs(sample.mean - expected) <= 4 * sample.standard_error


def test_laplace_estimate_against_exact(unit):
    sample = simulation_service.sample_hitting_times(unit, 0, 2, n=N, seed=5)
    est = simulation_service.empirical_laplace(sample, [0.0, 1.0])
    assert est.value[0] == 1.0
    assert abs(est.value[1] - 0.2) <= 4 * est.se[1]
    np.testing.assert_allclose(est.lower, est.upper)


def test_laplace_rejects_negative_argument(unit):
    sample = simulation_service.sample_hitting_times(unit, 0, 1, n=100, seed=5)
    with pytest.raises(DomainError):
        simulation_service.empirical_laplace(sample, [-1.0])


def test_ks_accepts_exact_law(table_chain):
    sample = simulation_service.sample_hitting_times(table_chain, 0, 4, n=N, seed=13)
    result = simulation_service.ks_test(sample, hitting_service.law_up(table_chain, 0, 4), alpha=1e-3)
    assert result.passed
    assert result.n == N


def test_ks_rejects_wrong_chain(unit, entrance_chain):
    sample = simulation_service.sample_hitting_times(entrance_chain, 0, 3, n=N, seed=13)
    result = simulation_service.ks_test(sample, hitting_service.law_up(unit, 0, 3), alpha=1e-3)
    assert not result.passed


def test_two_sample_ks_same_chain(unit):
    x = simulation_service.sample_hitting_times(unit, 0, 3, n=N, seed=21)
    y = simulation_service.sample_hitting_times(unit, 0, 3, n=N, seed=22)
    assert simulation_service.two_sample_ks(x.values, y.values, alpha=1e-3).passed


def test_reflected_downward_passage(unit):
    sample = simulation_service.sample_hitting_times(unit, 3, 0, n=N, seed=17, reflect_at=5)
    expected = rates_service.reflected_S(unit, 0, 5) - rates_service.reflected_S(unit, 3, 5)
    assert abs(sample.mean - expected) <= 4 * sample.standard_error


def test_target_validation(unit):
    with pytest.raises(DomainError):
        simulation_service.sample_hitting_times(unit, 2, 2, n=10)
    with pytest.raises(DomainError):
        simulation_service.sample_hitting_times(unit, 0, 7, n=10, reflect_at=5)


def test_budget_censors_paths(unit):
    sample = simulation_service.sample_hitting_times(unit, 0, 5, n=200, seed=1, event_budget=2)
    assert len(sample.values) == 0
    assert sample.censored_count == 200
    assert np.all(sample.censor_times > 0)

    est = simulation_service.empirical_laplace(sample, [1.0])
    assert est.lower[0] == 0.0
    assert 0.0 < est.upper[0] <= 1.0
    with pytest.raises(PreconditionRefused):
        simulation_service.ks_test(sample, hitting_service.law_up(unit, 0, 5))


def test_trajectory_stops_on_hit(unit):
    path = simulation_service.sample_trajectory(unit, 0, seed=4, hit=3)
    assert path.stopped_by == "hit"
    assert path.states[0] == 0 and path.states[-1] == 3
    assert np.all(np.abs(np.diff(path.states)) == 1)
    assert np.all(np.diff(path.times) > 0)
    assert np.all(path.states >= 0)


def test_trajectory_horizon(unit):
    path = simulation_service.sample_trajectory(unit, 0, seed=4, horizon=2.5)
    assert path.stopped_by == "horizon"
    assert path.times[-1] < 2.5


def test_trajectory_needs_stop_rule(unit):
    with pytest.raises(DomainError):
        simulation_service.sample_trajectory(unit, 0)


def test_states_at_time_match_kernel(table_chain):
    counts = simulation_service.sample_states_at(table_chain, 0, 1.0, N, seed=9, reflect_at=8)
    p = separation_service.transient_kernel(table_chain, 8, 1.0)[0]
    freq = counts / N
    assert counts.sum() == N
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / N) + 1e-3)


def test_save_and_load(unit, tmp_path):
    sample = simulation_service.sample_hitting_times(unit, 0, 5, n=300, seed=1, event_budget=12)
    path = simulation_service.save_sample(sample, tmp_path / "t05.bin")
    loaded = simulation_service.load_sample(path)
    np.testing.assert_array_equal(loaded.values, sample.values)
    np.testing.assert_array_equal(loaded.censor_times, sample.censor_times)
    assert loaded.seed == 1
    assert loaded.target == 5.0
    assert loaded.chain_sha256 == unit.chain_hash()


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a sample" * 20)
    with pytest.raises(ConfigError):
        simulation_service.load_sample(path)


@pytest.mark.slow
def test_lifetime_sample_mean(exit_chain, policy):
    R = rates_service.series_R(exit_chain, policy)
    sample = simulation_service.sample_lifetime_exit(exit_chain, n=N, seed=19, policy=policy)
    assert math.isinf(sample.target)
    assert sample.bias_bound <= 1e-9 * R.value
    assert abs(sample.mean - R.value) <= 4 * sample.standard_error + sample.bias_bound
    means = [sample.level_means[L] for L in sorted(sample.level_means)]
    assert all(x <= y for x, y in zip(means, means[1:]))


def test_lifetime_refused_on_natural_chain(unit, policy):
    with pytest.raises(PreconditionRefused):
        simulation_service.sample_lifetime_exit(unit, n=10, policy=policy)
