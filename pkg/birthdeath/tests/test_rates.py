"""Measures, boundary series and classification."""

import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st
from pydantic import ValidationError

from birthdeath.app.core.exceptions import InvalidRatesError, PreconditionRefused, UndeterminedError
from birthdeath.app.models.rates import (
    ConstantLaw,
    GeometricLaw,
    PowerLaw,
    RateSpec,
    TailPolicy,
    TailRule,
)
from birthdeath.app.schemas.reports import boundary_report_dict
from birthdeath.app.services import gallery_service, rates_service


def test_measures_unit_chain(unit, policy):
    m = rates_service.build_measures(unit, 5, policy)
    np.testing.assert_allclose(m.mu, np.ones(6))
    assert m.mu_total.is_infinite
    assert m.pi is None and m.H is None


def test_measures_exit_chain(exit_chain, policy):
    m = rates_service.build_measures(exit_chain, 4, policy)
    np.testing.assert_allclose(m.mu, [1, 1, 2, 8, 64], rtol=1e-14)


def test_measures_entrance_chain(entrance_chain, policy):
    m = rates_service.build_measures(entrance_chain, 3, policy)
    np.testing.assert_allclose(m.mu, [1, 0.5, 0.125, 1 / 64], rtol=1e-14)
    assert m.pi is not None
    assert np.all(np.diff(m.H) >= 0)
    assert 0 < m.H[0] <= m.H[-1] <= 1


def test_pi_sums_to_one_within_tail(entrance_chain, policy):
    m = rates_service.build_measures(entrance_chain, 40, policy)
    assert abs(m.pi.sum() + m.tail[-1] - 1.0) <= 1e-12
    assert m.tail[-1] <= 1e-100


def test_mu_overflow_stays_in_log_domain(exit_chain, policy):
    m = rates_service.build_measures(exit_chain, 60, policy)
    assert m.mu is None
    assert m.scaled
    assert m.log_mu[60] == pytest.approx(60 * 59 / 2 * math.log(2), rel=1e-12)


@pytest.mark.parametrize("name", gallery_service.gallery_names())
def test_detailed_balance_on_gallery(name):
    rates = gallery_service.load_chain(name)
    log_mu = rates_service.log_mu_array(rates, 150)
    i = np.arange(150)
    lhs = log_mu[:-1] + rates.log_b(i)
    rhs = log_mu[1:] + rates.log_a(i + 1)
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(1.0, np.abs(lhs)))


@hsettings(max_examples=40, deadline=None)
@given(
    a=st.lists(st.floats(0.1, 10.0), min_size=3, max_size=20),
    b=st.lists(st.floats(0.1, 10.0), min_size=3, max_size=20),
)
def test_detailed_balance_random_tables(a, b):
    tail = TailRule(family="constant", a=ConstantLaw(value=2.0), b=ConstantLaw(value=1.0))
    rates = RateSpec.from_tables(np.array(a), np.array(b), tail)
    log_mu = rates_service.log_mu_array(rates, 30)
    i = np.arange(30)
    mu_b = np.exp(log_mu[:-1] + rates.log_b(i))
    mu_a = np.exp(log_mu[1:] + rates.log_a(i + 1))
    np.testing.assert_allclose(mu_b, mu_a, rtol=1e-12)


def test_R_unit_chain_infinite(unit, policy):
    R = rates_service.series_R(unit, policy)
    assert R.is_infinite
    assert R.witness


def test_R_exit_chain_value(exit_chain, policy):
    R = rates_service.series_R(exit_chain, policy)
    assert R.is_finite
    assert R.value == pytest.approx(2.8272, abs=2e-4)
    assert R.error_bound < 1e-10


def test_R_regular_chain_finite(regular_chain, policy):
    assert rates_service.series_R(regular_chain, policy).is_finite


def test_S_series(unit, entrance_chain, regular_chain, policy):
    assert rates_service.series_S(unit, 0, policy).is_infinite
    assert rates_service.series_S(entrance_chain, 0, policy).is_finite
    assert rates_service.series_S(regular_chain, 0, policy).is_finite


def test_S_n_decreases_in_n(entrance_chain, policy):
    values = [rates_service.series_S(entrance_chain, n, policy).value for n in range(5)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_T_bounded_by_S(entrance_chain, policy):
    T = rates_service.series_T(entrance_chain, policy)
    S = rates_service.series_S(entrance_chain, 0, policy)
    assert T.is_finite
    assert T.value <= S.value + S.error_bound


def test_T_unit_chain_infinite(unit, policy):
    assert rates_service.series_T(unit, policy).is_infinite


@pytest.mark.parametrize(
    "name, expected",
    [
        ("unit", "Natural"),
        ("exit-geometric", "Exit"),
        ("entrance-geometric", "Entrance"),
        ("regular", "Regular"),
    ],
)
def test_classification(name, expected, policy):
    report = rates_service.classify_boundary(gallery_service.load_chain(name), policy)
    assert report.classification == expected
    assert all(report.consistency.values())


def test_regular_chain_flags_non_unique_process(regular_chain, policy):
    report = rates_service.classify_boundary(regular_chain, policy)
    assert report.u1.is_finite
    assert report.dirichlet_unique is False


def test_unit_chain_dirichlet_unique(unit, policy):
    assert rates_service.classify_boundary(unit, policy).dirichlet_unique is True


def test_verdict_stable_when_horizon_grows(exit_chain):
    small = rates_service.series_R(exit_chain, TailPolicy(horizon=200))
    large = rates_service.series_R(exit_chain, TailPolicy(horizon=2000))
    assert small.is_finite and large.is_finite
    assert abs(small.value - large.value) <= small.error_bound + large.error_bound + 1e-12


def test_report_encodes_infinity(unit, policy):
    doc = boundary_report_dict(rates_service.classify_boundary(unit, policy))
    assert doc["schema"] == 1
    assert doc["class"] == "Natural"
    assert doc["R"]["verdict"] == "infinite"
    assert "witness" in doc["R"]
    assert len(doc["certificates"]) == 6


def test_require_class_refuses_with_report(unit, policy):
    with pytest.raises(PreconditionRefused) as e:
        rates_service.require_class(unit, "Entrance", policy, "dual chain")
    assert e.value.exit_code == 4
    assert e.value.detail["report"]["class"] == "Natural"


def test_partial_R_matches_unit_closed_form(unit):
    # E T_{0,n} = n(n+1)/2 on the unit chain
    assert rates_service.partial_R(unit, 5) == pytest.approx(15.0, rel=1e-14)


def test_rates_must_be_positive():
    with pytest.raises(ValidationError):
        RateSpec(family="constant", a=ConstantLaw(value=-1.0), b=ConstantLaw(value=1.0))


def test_unknown_keys_rejected():
    with pytest.raises(InvalidRatesError):
        gallery_service.parse_rates(
            {"family": "constant", "a": {"value": 1}, "b": {"value": 1}, "colour": "red"}
        )


def test_table_needs_tail_rule():
    with pytest.raises(InvalidRatesError):
        gallery_service.parse_rates(
            {"family": "table", "a": {"start": 1, "values": [1.0]}, "b": {"start": 0, "values": [1.0]}}
        )


def test_table_falls_back_to_tail(table_chain):
    assert table_chain.a_values([1])[0] == pytest.approx(1.73)
    assert table_chain.a_values([500])[0] == pytest.approx(2.0)
    assert table_chain.b_values([500])[0] == pytest.approx(1.0)


def test_dual_tail_swaps_roles(entrance_chain):
    tail = entrance_chain.dual_tail()
    # a* <- b, b* <- a shifted by one index
    assert tail.a.log_eval(np.array([3]))[0] == pytest.approx(entrance_chain.log_b(3)[0])
    assert tail.b.log_eval(np.array([3]))[0] == pytest.approx(entrance_chain.log_a(4)[0])


def _power_chain(p: float, q: float) -> RateSpec:
    return RateSpec(
        family="power",
        a=PowerLaw(coef=1.0, exponent=p),
        b=PowerLaw(coef=1.0, exponent=q),
    )


def test_power_chain_just_past_exponent_one_is_exit(policy):
    # a_i = 1, b_i = (i+1)^1.03: R converges, however slowly
    rates = _power_chain(0.0, 1.03)
    R = rates_service.series_R(rates, policy)
    assert R.is_finite
    assert math.isfinite(R.error_bound) and R.error_bound > 0
    assert "majorant" in R.rule
    assert rates_service.classify_boundary(rates, policy).classification == "Exit"


def test_power_chain_at_exponent_one_is_natural(policy):
    report = rates_service.classify_boundary(_power_chain(0.0, 1.0), policy)
    assert report.R.is_infinite
    assert report.classification == "Natural"


def test_equal_quadratic_rates_are_natural(policy):
    # mu_k = (k+1)^-2, S terms ~ 1/k
    report = rates_service.classify_boundary(_power_chain(2.0, 2.0), policy)
    assert report.mu.is_finite
    assert report.S.is_infinite
    assert report.classification == "Natural"


def test_equal_cubic_rates_are_entrance(policy):
    report = rates_service.classify_boundary(_power_chain(3.0, 3.0), policy)
    assert report.S.is_finite
    assert report.classification == "Entrance"


def test_mu_growth_geometric():
    cf = TailRule(
        family="geometric",
        a=GeometricLaw(base=1.0, ratio=2.0),
        b=GeometricLaw(base=1.0, ratio=1.0),
    )
    g = rates_service.mu_growth(cf)
    # log mu_k = -k(k+1)/2 log 2
    assert g.quad == pytest.approx(-math.log(2) / 2)
    assert g.lin == pytest.approx(-math.log(2) / 2)


def test_mu_growth_power_equal_exponents():
    cf = TailRule(
        family="power",
        a=PowerLaw(coef=1.0, exponent=2.0, shift=1.0),
        b=PowerLaw(coef=1.0, exponent=2.0, shift=1.0),
    )
    g = rates_service.mu_growth(cf)
    assert g.lead == 0.0
    assert g.power == pytest.approx(-2.0)
    assert g.summable


@pytest.mark.parametrize(
    "name, expected",
    [
        ("unit", {"R": False, "S": None, "mu": False, "scale": False}),
        ("exit-geometric", {"R": True, "S": None, "mu": False, "scale": True}),
        ("entrance-geometric", {"R": False, "S": True, "mu": True, "scale": False}),
        ("regular", {"R": True, "S": True, "mu": True, "scale": True}),
    ],
)
def test_series_growth_on_gallery(name, expected):
    growth = rates_service.series_growth(gallery_service.load_chain(name))
    for key, summable in expected.items():
        if summable is None:
            assert growth[key] is None
        else:
            assert growth[key].summable is summable


def test_table_chain_decided_by_its_tail(table_chain, policy):
    report = rates_service.classify_boundary(table_chain, policy)
    assert report.mu.is_finite
    assert report.S.is_infinite
    assert "closed-form" in report.S.rule


# a_i = 2^i, b_i = 2.0002 * 2^i: mu grows like 1.0001^k, so R settles only far out
SLOW_EXIT = RateSpec(
    family="geometric",
    a=GeometricLaw(base=1.0, ratio=2.0),
    b=GeometricLaw(base=2.0002, ratio=2.0),
)
TIGHT = TailPolicy(horizon=200, delta=1e-6)


def test_slow_exit_chain_resolves_at_default_horizon(policy):
    assert rates_service.classify_boundary(SLOW_EXIT, policy).classification == "Exit"


def test_short_horizon_leaves_slow_exit_undetermined():
    report = rates_service.classify_boundary(SLOW_EXIT, TIGHT)
    assert report.R.verdict == "undetermined"
    assert "horizon short" in report.R.rule
    assert report.classification == "Undetermined"


def test_require_determined_raises_with_report():
    report = rates_service.classify_boundary(SLOW_EXIT, TIGHT)
    with pytest.raises(UndeterminedError) as e:
        rates_service.require_determined(report)
    assert e.value.exit_code == 3
    assert e.value.detail["report"]["class"] == "Undetermined"


def test_require_class_propagates_undetermined():
    with pytest.raises(UndeterminedError):
        rates_service.require_class(SLOW_EXIT, "Exit", TIGHT, "life time")
