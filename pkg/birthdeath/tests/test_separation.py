"""Transient kernels, separation curves and the beta lower bound."""

import numpy as np
import pytest
from scipy.linalg import expm

from birthdeath.app.core.exceptions import DomainError, PreconditionRefused
from birthdeath.app.services import rates_service, separation_service, spectral_service


def test_kernels_match_matrix_exponential(table_chain):
    t = np.array([0.0, 0.3, 2.0, 7.5])
    P = separation_service.transient_kernels(table_chain, 15, t)
    Q = spectral_service.build_reflected(table_chain, 15).dense()
    for k, x in enumerate(t):
        np.testing.assert_allclose(P[k], expm(Q * x), atol=1e-11)
    np.testing.assert_allclose(P.sum(axis=2), 1.0, atol=1e-12)


def test_kernel_converges_to_window_stationary_law(table_chain):
    pi, _, _ = rates_service.window_measures(table_chain, 10)
    P = separation_service.transient_kernel(table_chain, 10, 200.0)
    np.testing.assert_allclose(P, np.tile(pi, (11, 1)), atol=1e-10)


def test_negative_time_rejected(table_chain):
    with pytest.raises(DomainError):
        separation_service.transient_kernels(table_chain, 5, [-1.0])


def test_separation_curve_checks(entrance_chain, entrance_dual, policy):
    t = np.geomspace(1e-2, 10, 20)
    curve = separation_service.separation_curve(
        entrance_chain, 12, t, starts=range(11), dual=entrance_dual, policy=policy
    )
    assert curve.s.shape == (11, 20)
    assert all(curve.checks.values()), curve.checks
    assert np.all((curve.s >= 0) & (curve.s <= 1))
    assert np.all(curve.tv <= curve.s + 1e-12)
    assert curve.tail_mass <= 1e-8
    assert curve.beta_lower == pytest.approx(
        1.0 / rates_service.series_T(entrance_chain, policy).value, rel=1e-6
    )


def test_separation_refused_without_entrance_boundary(unit, policy):
    with pytest.raises(PreconditionRefused):
        separation_service.separation_curve(unit, 12, [1.0], policy=policy)


def test_separation_refuses_short_window(entrance_chain, entrance_dual, policy):
    with pytest.raises(PreconditionRefused):
        separation_service.separation_curve(entrance_chain, 1, [1.0], dual=entrance_dual, policy=policy)


def test_start_outside_window(entrance_chain, entrance_dual, policy):
    with pytest.raises(DomainError):
        separation_service.separation_curve(
            entrance_chain, 12, [1.0], starts=[13], dual=entrance_dual, policy=policy
        )


def test_beta_three_way_on_entrance_chain(entrance_chain, policy):
    report = separation_service.beta_report(entrance_chain, policy=policy)
    assert report.relative_spread <= 1e-6
    assert report.beta_lower == pytest.approx(1.0 / report.T)
    assert report.window is None


def test_beta_on_window(table_chain):
    report = separation_service.beta_report(table_chain, window=10)
    assert report.T == pytest.approx(rates_service.reflected_T(table_chain, 10), rel=1e-14)
    assert report.spectrum_size == 10
    assert report.relative_spread <= 1e-6


def test_two_state_beta(table_chain):
    # reflected at 1 the chain has two states and E_0 tau = 1/(a_1 + b_0)
    report = separation_service.beta_report(table_chain, window=1)
    assert report.beta_lower == pytest.approx(1.73 + 0.88, rel=1e-12)


def test_beta_with_fitted_slope(entrance_chain, entrance_dual, policy):
    t = np.linspace(0.1, 12, 40)
    curve = separation_service.separation_curve(entrance_chain, 12, t, dual=entrance_dual, policy=policy)
    report = separation_service.beta_report(entrance_chain, curve=curve, policy=policy)
    assert report.fitted_slope is None or report.fitted_slope > 0


def test_unsorted_time_grid_is_sorted(entrance_chain, entrance_dual, policy):
    curve = separation_service.separation_curve(
        entrance_chain, 12, [5.0, 0.1, 1.0], starts=[0, 2], dual=entrance_dual, policy=policy
    )
    np.testing.assert_array_equal(curve.t, [0.1, 1.0, 5.0])
    assert curve.checks["separation nonincreasing"]
    ordered = separation_service.separation_curve(
        entrance_chain, 12, [0.1, 1.0, 5.0], starts=[0, 2], dual=entrance_dual, policy=policy
    )
    np.testing.assert_array_equal(curve.s, ordered.s)


def test_l1_form_flagged_as_discrepancy(entrance_chain, entrance_dual, policy):
    # from state 3 at a tiny time the kernel still sits on 3: l1 ~ 2 while s <= 1
    curve = separation_service.separation_curve(
        entrance_chain, 12, [1e-4, 1.0], starts=[0, 3], dual=entrance_dual, policy=policy
    )
    (l1_form,) = curve.discrepancies
    assert not l1_form.passed
    assert l1_form.lhs > 0.5
    assert "start 3" in l1_form.note
    assert curve.checks["total variation <= separation"]
