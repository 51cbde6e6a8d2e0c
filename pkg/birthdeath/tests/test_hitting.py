"""Hitting-time laws: transforms, moments, densities."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings as hsettings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.special import gammainc

from birthdeath.app.core.exceptions import DomainError, PreconditionRefused
from birthdeath.app.models.laws import RationalExpLaw
from birthdeath.app.services import hitting_service, rates_service, spectral_service


def _survival_oracle(g, t, start=0):
    """P_start[not absorbed by t] from the matrix exponential."""
    Q = g.dense()
    return np.array([expm(Q * x)[start].sum() for x in t])


def test_unit_chain_up_transform(unit):
    law = hitting_service.law_up(unit, 0, 2)
    b = hitting_service.evaluate_laplace(law, [0.0, 1.0])
    assert b.exact
    assert b.lower[0] == pytest.approx(1.0)
    assert b.lower[1] == pytest.approx(0.2, rel=1e-13)


def test_up_law_with_zeros(unit):
    law = hitting_service.law_up(unit, 1, 2)
    np.testing.assert_allclose(law.zeros, [1.0])
    assert hitting_service.evaluate_laplace(law, [1.0]).lower[0] == pytest.approx(0.4, rel=1e-13)
    assert hitting_service.moments(law).mean == pytest.approx(2.0, rel=1e-13)


@pytest.mark.parametrize("i, n", [(0, 2), (0, 8), (3, 9), (7, 30)])
def test_up_mean_matches_series(table_chain, i, n):
    law = hitting_service.law_up(table_chain, i, n)
    assert hitting_service.moments(law).mean == pytest.approx(
        hitting_service.mean_hitting_series(table_chain, i, n), rel=1e-10
    )


def test_variance_of_two_step_passage(unit):
    stats = hitting_service.moments(hitting_service.law_up(unit, 0, 2))
    assert stats.variance == pytest.approx(7.0, rel=1e-12)


def test_transform_is_completely_monotone_on_grid(unit):
    s = np.linspace(0, 5, 30)
    values = hitting_service.evaluate_laplace(hitting_service.law_up(unit, 0, 5), s).lower
    assert np.all(np.diff(values) < 0)
    assert np.all((values > 0) & (values <= 1))


def test_negative_argument_rejected(unit):
    with pytest.raises(DomainError):
        hitting_service.evaluate_laplace(hitting_service.law_up(unit, 0, 2), [-0.1])


@pytest.mark.parametrize("n", [2, 5, 8])
def test_density_against_matrix_exponential(unit, n):
    law = hitting_service.law_up(unit, 0, n)
    t = np.linspace(0, 4 * n, 25)
    table = hitting_service.density_cdf(law, t)
    oracle = _survival_oracle(spectral_service.build_absorbed_top(unit, n), t)
    np.testing.assert_allclose(table.survival, oracle, atol=1e-10)
    np.testing.assert_allclose(table.cdf + table.survival, 1.0, atol=1e-10)
    assert table.mass == pytest.approx(1.0, abs=1e-8)
    assert not table.negative
    assert table.cdf[0] == pytest.approx(0.0, abs=1e-12)


def test_density_integrates_to_cdf(table_chain):
    law = hitting_service.law_up(table_chain, 0, 6)
    t = np.linspace(0, 40, 4001)
    table = hitting_service.density_cdf(law, t)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (table.density[1:] + table.density[:-1]) * np.diff(t))])
    np.testing.assert_allclose(integral, table.cdf, atol=1e-5)


def test_down_law_on_reflected_window(unit):
    law = hitting_service.law_down_finite(unit, 3, 0, 5)
    assert law.finite
    expected = rates_service.reflected_S(unit, 0, 5) - rates_service.reflected_S(unit, 3, 5)
    assert hitting_service.moments(law).mean == pytest.approx(expected, rel=1e-10)

    t = np.linspace(0, 60, 13)
    g = spectral_service.build_absorbed_bottom_reflected_top(unit, 0, 5)
    oracle = _survival_oracle(g, t, start=2)  # state 3 is row 2 of the window 1..5
    np.testing.assert_allclose(hitting_service.density_cdf(law, t).survival, oracle, atol=1e-10)


def test_repeated_poles_give_gamma_law():
    law = RationalExpLaw(poles=np.array([1.0, 1.0 + 1e-13]), zeros=np.empty(0))
    t = np.linspace(0, 10, 21)
    table = hitting_service.density_cdf(law, t)
    assert table.repeated_poles
    np.testing.assert_allclose(table.density, t * np.exp(-t), atol=1e-12)
    np.testing.assert_allclose(table.cdf, gammainc(2, t), atol=1e-12)


@hsettings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.2, 10.0), min_size=2, max_size=4, unique=True))
def test_hypoexponential_mass(rates):
    poles = np.sort(np.array(rates))
    assume(np.min(np.diff(poles)) >= 0.5)
    law = RationalExpLaw(poles=poles, zeros=np.empty(0))
    table = hitting_service.density_cdf(law, np.array([0.0, 1.0, 400.0]))
    assert table.mass == pytest.approx(1.0, abs=1e-8)
    assert table.cdf[0] == pytest.approx(0.0, abs=1e-9)
    assert table.survival[-1] < 1e-6


def test_lifetime_law_brackets_R(exit_chain, policy):
    law = hitting_service.law_lifetime_exit(exit_chain, policy=policy)
    assert not law.finite
    assert math.isinf(law.target)
    stats = hitting_service.moments(law)
    R = rates_service.series_R(exit_chain, policy).value
    lo, hi = stats.mean_bracket
    assert lo - 1e-9 <= R <= hi + 1e-9

    b = hitting_service.evaluate_laplace(law, [0.5, 1.0, 2.0])
    assert np.all(b.lower <= b.upper)
    assert np.all(b.width < 1e-6)


def test_infinite_law_has_no_density(exit_chain, policy):
    law = hitting_service.law_lifetime_exit(exit_chain, policy=policy)
    with pytest.raises(PreconditionRefused):
        hitting_service.density_cdf(law, [1.0])


def test_down_from_entrance_boundary(entrance_chain, policy):
    law = hitting_service.law_down_entrance(entrance_chain, math.inf, 0, policy=policy)
    assert len(law.zeros) == 0
    S0 = rates_service.series_S(entrance_chain, 0, policy).value
    lo, hi = hitting_service.moments(law).mean_bracket
    assert lo - 1e-9 <= S0 <= hi + 1e-9


def test_down_from_finite_state_on_entrance_chain(entrance_chain, policy):
    law = hitting_service.law_down_entrance(entrance_chain, 1, 0, policy=policy)
    S0 = rates_service.series_S(entrance_chain, 0, policy).value
    S1 = rates_service.series_S(entrance_chain, 1, policy).value
    assert hitting_service.moments(law).mean == pytest.approx(S0 - S1, rel=1e-6)
    b = hitting_service.evaluate_laplace(law, [1.0])
    assert 0 < b.lower[0] <= b.upper[0] <= 1


def test_dispatch(unit, exit_chain, entrance_chain, policy):
    assert hitting_service.hitting_law(unit, 0, 3).provenance == "up-finite"
    assert hitting_service.hitting_law(unit, 3, 1, N=6).provenance == "down-reflected"
    assert hitting_service.hitting_law(exit_chain, 0, math.inf, policy=policy).provenance == "lifetime-exit"
    assert hitting_service.hitting_law(entrance_chain, math.inf, 0, policy=policy).provenance == "down-entrance"


def test_dispatch_errors(unit, entrance_chain, policy):
    with pytest.raises(DomainError):
        hitting_service.hitting_law(unit, 2, 2)
    with pytest.raises(DomainError):
        hitting_service.hitting_law(entrance_chain, math.inf, 0, N=10)
    with pytest.raises(PreconditionRefused):
        hitting_service.hitting_law(entrance_chain, 0, math.inf, policy=policy)
