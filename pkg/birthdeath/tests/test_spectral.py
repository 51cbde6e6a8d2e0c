"""Truncated generators, certified eigenvalues and limit spectra."""

import math

import numpy as np
import pytest

from birthdeath.app.core.exceptions import DomainError, PreconditionRefused, RateOverflowError
from birthdeath.app.services import gallery_service, hitting_service, rates_service, spectral_service


def test_two_state_absorbed_spectrum(unit):
    spectrum = spectral_service.spectrum_of(spectral_service.build_absorbed_top(unit, 2))
    np.testing.assert_allclose(spectrum.values, [(3 - math.sqrt(5)) / 2, (3 + math.sqrt(5)) / 2], rtol=1e-13)
    assert spectrum.reciprocal_sum == pytest.approx(3.0, rel=1e-13)


def test_generator_rows_sum_to_minus_killing(unit):
    g = spectral_service.build_absorbed_top(unit, 6)
    rows = g.row_sums()
    np.testing.assert_allclose(rows[:-1], 0.0, atol=1e-15)
    assert rows[-1] == pytest.approx(-g.killing[1])


def test_reflected_generator_is_conservative(table_chain):
    rows = spectral_service.build_reflected(table_chain, 15).row_sums()
    np.testing.assert_allclose(rows, 0.0, atol=1e-14)


@pytest.mark.parametrize("name", ["unit", "table-ergodic-a", "table-ergodic-b"])
@pytest.mark.parametrize("n", [2, 5, 20, 100, 200])
def test_absorbed_eigentime_identity(name, n):
    rates = gallery_service.load_chain(name)
    spectrum = spectral_service.spectrum_of(spectral_service.build_absorbed_top(rates, n))
    expected = hitting_service.mean_hitting_series(rates, 0, n)
    assert spectrum.count == n
    assert spectrum.reciprocal_sum == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("name", ["unit", "table-ergodic-a", "entrance-geometric"])
@pytest.mark.parametrize("n, N", [(0, 1), (0, 10), (3, 40), (10, 120), (50, 200)])
def test_reflected_eigentime_identity(name, n, N):
    rates = gallery_service.load_chain(name)
    g = spectral_service.build_absorbed_bottom_reflected_top(rates, n, N)
    spectrum = spectral_service.spectrum_of(g)
    assert spectrum.reciprocal_sum == pytest.approx(rates_service.reflected_S(rates, n, N), rel=1e-10)


def test_exit_chain_small_eigenvalues_keep_relative_accuracy(exit_chain):
    # rates span 1..2^99; the eigentime sum is dominated by the smallest eigenvalues
    spectrum = spectral_service.spectrum_of(spectral_service.build_absorbed_top(exit_chain, 100))
    expected = hitting_service.mean_hitting_series(exit_chain, 0, 100)
    assert spectrum.reciprocal_sum == pytest.approx(expected, rel=1e-10)
    assert np.all(np.diff(spectrum.values) > 0)


def test_two_state_ergodic_eigenvalue(table_chain):
    spectrum = spectral_service.spectrum_of(spectral_service.build_reflected(table_chain, 1))
    np.testing.assert_allclose(spectrum.values, [1.73 + 0.88], rtol=1e-14)


def test_reflected_spectrum_matches_dense_solver(table_chain):
    g = spectral_service.build_reflected(table_chain, 30)
    dense = np.sort(np.linalg.eigvalsh(spectral_service.symmetrize(g).dense()))[1:]
    spectrum = spectral_service.spectrum_of(g)
    np.testing.assert_allclose(spectrum.values, dense, rtol=1e-9)


def test_sturm_count_against_dense(table_chain):
    J = spectral_service.symmetrize(spectral_service.build_absorbed_top(table_chain, 25))
    lam = np.linalg.eigvalsh(J.dense())
    shifts = np.array([0.5 * lam[0], 0.5 * (lam[3] + lam[4]), 0.5 * (lam[-2] + lam[-1]), 2 * lam[-1]])
    np.testing.assert_array_equal(spectral_service.sturm_count(J, shifts), [0, 4, 24, 25])


def test_symmetrized_form_is_similar(unit):
    g = spectral_service.build_absorbed_top(unit, 8)
    J = spectral_service.symmetrize(g)
    np.testing.assert_allclose(
        np.sort(np.linalg.eigvalsh(J.dense())),
        np.sort(np.linalg.eigvals(-g.dense()).real),
        rtol=1e-12,
    )


def test_dirichlet_residual(unit):
    g = spectral_service.build_absorbed_top(unit, 30)
    spectrum = spectral_service.spectrum_of(g, vectors=True)
    report = spectral_service.dirichlet_residual(g, spectrum)
    assert report.passed
    assert report.max_residual < 1e-8


def test_dirichlet_residual_needs_vectors(unit):
    g = spectral_service.build_absorbed_top(unit, 5)
    with pytest.raises(DomainError):
        spectral_service.dirichlet_residual(g, spectral_service.spectrum_of(g))


def test_eigenfunction_vanishes_at_absorbing_state(unit):
    n = 12
    lam = spectral_service.spectrum_of(spectral_service.build_absorbed_top(unit, n)).values
    for value in lam[:3]:
        g = spectral_service.eigenfunction_recurrence(unit, float(value), n)
        assert g[0] == 1.0
        assert abs(g[n]) <= 1e-8 * np.abs(g).max()


def test_eigenfunction_nonzero_off_spectrum(unit):
    g = spectral_service.eigenfunction_recurrence(unit, 1e-3, 12)
    assert abs(g[12]) > 0.5


def test_rate_ceiling(exit_chain):
    with pytest.raises(RateOverflowError):
        spectral_service.build_absorbed_top(exit_chain, 600)
    top = spectral_service.ceiling_level(exit_chain, 0, 2**14)
    assert 2.0 ** (top - 1) <= 1e150
    spectral_service.build_absorbed_top(exit_chain, top)


def test_exit_limit_spectrum(exit_chain, policy):
    R = rates_service.series_R(exit_chain, policy)
    spectrum = spectral_service.limit_spectrum_exit(exit_chain, policy=policy)
    assert spectrum.converged
    assert spectrum.reciprocal_sum == pytest.approx(R.value, rel=1e-6)
    assert spectrum.tail_bound >= 0


def test_exit_truncations_decrease(exit_chain):
    for nu in (1, 2, 3):
        values = spectral_service.levels_monotone(exit_chain, [8, 16, 32, 64, 128], nu)
        assert np.all(np.diff(values) <= 1e-12 * values[1:])


def test_entrance_limit_spectrum(entrance_chain, policy):
    S = rates_service.series_S(entrance_chain, 0, policy)
    spectrum = spectral_service.limit_spectrum_entrance(entrance_chain, 0, policy=policy)
    assert spectrum.converged
    assert spectrum.reciprocal_sum == pytest.approx(S.value, rel=1e-6)


def test_entrance_truncations_decrease(entrance_chain):
    for nu in (1, 2):
        values = spectral_service.levels_monotone(entrance_chain, [8, 16, 32, 64], nu, n=0)
        assert np.all(np.diff(values) <= 1e-12 * values[1:])


def test_ergodic_spectrum_count(entrance_chain, policy):
    spectrum = spectral_service.ergodic_spectrum(entrance_chain, count=5, policy=policy)
    assert spectrum.count == 5
    assert np.all(np.diff(spectrum.values) > 0)
    T = rates_service.series_T(entrance_chain, policy).value
    assert spectrum.reciprocal_sum < T


def test_limit_spectrum_refuses_wrong_class(entrance_chain, unit, policy):
    with pytest.raises(PreconditionRefused):
        spectral_service.limit_spectrum_exit(entrance_chain, policy=policy)
    with pytest.raises(PreconditionRefused):
        spectral_service.limit_spectrum_entrance(unit, 0, policy=policy)
