import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdcsim.physics import (
    SINC_MIN,
    ChannelParams,
    GainParams,
    HomProfileParams,
    PairSourceModel,
    car_model,
    g2_from_modes,
    hom_profile,
    mode_count_estimate,
    modes_from_g2,
    pair_count_distribution,
    product_outcome_probs,
    singlet_outcome_probs,
    sinc,
    spdc_efficiency_lowpower,
    spdc_power,
)


# Values below were computed once with independent tools (mpmath Taylor
# series, a 4-dim state vector, exact rational arithmetic) and frozen.
HALF_SINH2_01 = 0.005016688904768961573875938
SINGLET_PP_PI8 = 0.0732233047033631189
CAR_LAB_LOSSES = 100147177 / 4147177


def test_spdc_power_zero_pump():
    assert spdc_power(GainParams(3.0, 0.2, 0.0)) == 0.0


def test_spdc_power_matches_series_oracle():
    assert spdc_power(GainParams(0.5, 0.01, 100.0)) == pytest.approx(HALF_SINH2_01, rel=1e-12)


def test_lowpower_efficiency_constant_term():
    assert spdc_efficiency_lowpower(GainParams(2.0, 0.3, 0.0)) == pytest.approx(2.0 * 0.09)


def test_lowpower_efficiency_value():
    assert spdc_efficiency_lowpower(GainParams(1.0, 0.1, 10.0)) == pytest.approx(0.010333333333333333, rel=1e-14)


@given(
    st.floats(1e-3, 1e3),
    st.floats(1e-4, 1.0),
    st.floats(0.0, 1.0),
)
def test_lowpower_expansion_remainder(alpha, gamma, frac):
    # gamma*sqrt(P) up to 0.05 keeps the series remainder tiny
    p = (0.05 * frac / gamma) ** 2
    if p == 0:
        return
    g = GainParams(alpha, gamma, p)
    assert abs(spdc_power(g) / p - spdc_efficiency_lowpower(g)) / (alpha * gamma**2) < 1e-3


@given(st.floats(1e-3, 10.0), st.floats(1e-3, 1.0), st.floats(1e-3, 0.3))
def test_lowpower_agreement_below_fourth_order(alpha, gamma, x):
    p = (x / gamma) ** 2
    g = GainParams(alpha, gamma, p)
    rel = abs(spdc_power(g) - spdc_efficiency_lowpower(g) * p) / spdc_power(g)
    assert rel < x**4


@given(st.floats(1e-6, 1e3), st.floats(1e-4, 1.0), st.floats(0.0, 1e3), st.floats(1e-6, 1e3))
def test_spdc_power_monotone_in_pump(alpha, gamma, p, dp):
    assert spdc_power(GainParams(alpha, gamma, p + dp)) >= spdc_power(GainParams(alpha, gamma, p))


def test_gain_params_reject_negative():
    with pytest.raises(ValueError):
        GainParams(-1.0, 0.1, 1.0)


def test_pair_distribution_vacuum():
    d = pair_count_distribution(PairSourceModel(0.0, 1.8))
    assert d.pmf(0) == 1.0


def test_pair_distribution_bose_einstein():
    d = pair_count_distribution(PairSourceModel(1.0, 1.0))
    n = np.arange(8)
    assert np.allclose(d.pmf(n), 1.0**n / 2.0 ** (n + 1), rtol=1e-14)
    assert d.pmf(0) == pytest.approx(0.5)
    assert d.pmf(1) == pytest.approx(0.25)


def test_pair_distribution_sample_mean():
    d = pair_count_distribution(PairSourceModel(0.04, 1.8))
    x = d.rvs(size=10_000_000, random_state=np.random.default_rng(1))
    sigma = math.sqrt(0.04 * (1 + 0.04 / 1.8) / x.size)
    assert abs(x.mean() - 0.04) < 3 * sigma


@given(st.floats(1e-4, 20.0), st.one_of(st.floats(1.0, 50.0), st.just(math.inf)))
def test_pair_distribution_moments(mu, m):
    d = pair_count_distribution(PairSourceModel(mu, m))
    assert d.mean() == pytest.approx(mu, rel=1e-9)
    assert d.var() == pytest.approx(mu * (1 + (0 if math.isinf(m) else mu / m)), rel=1e-9)


def test_pair_source_rejects_bad_modes():
    with pytest.raises(ValueError):
        PairSourceModel(0.1, 0.5)


def test_singlet_same_angle_never_both_pass():
    assert singlet_outcome_probs(0.0, 0.0)[0] == pytest.approx(0.0, abs=1e-17)


def test_singlet_orthogonal():
    assert singlet_outcome_probs(0.0, math.pi / 2)[0] == pytest.approx(0.5)


def _state_vector_probs(ta, tb, v):
    psi = np.array([0.0, 1.0, -1.0, 0.0]) / math.sqrt(2)
    rho = v * np.outer(psi, psi) + (1 - v) * np.eye(4) / 4
    out = []
    for a in (ta, ta + math.pi / 2):
        for b in (tb, tb + math.pi / 2):
            k = np.kron([math.cos(a), math.sin(a)], [math.cos(b), math.sin(b)])
            out.append(float(k @ rho @ k))
    return out


def test_singlet_pi_over_8():
    assert singlet_outcome_probs(0.0, math.pi / 8)[0] == pytest.approx(SINGLET_PP_PI8, rel=1e-14)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi), st.floats(0.0, 1.0))
def test_singlet_matches_density_matrix(ta, tb, v):
    assert np.allclose(singlet_outcome_probs(ta, tb, v), _state_vector_probs(ta, tb, v), atol=1e-14)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.0, 1.0))
def test_outcome_probs_normalized(ta, tb, v):
    for probs in (singlet_outcome_probs(ta, tb, v), product_outcome_probs(ta, tb)):
        assert sum(probs) == pytest.approx(1.0)
        assert all(p >= -1e-15 for p in probs)


def test_singlet_rejects_bad_visibility():
    with pytest.raises(ValueError):
        singlet_outcome_probs(0, 0, 1.5)


def test_car_lossless_darkless():
    assert car_model(0.1, 1.0, 1.0, 0.0, 0.0) == pytest.approx(11.0)


def test_car_large_mu_limit():
    assert car_model(1e9, 0.1, 0.1, 1e-6, 1e-6) == pytest.approx(1.0, abs=1e-6)


def test_car_lab_losses():
    d1, d2 = 600 * 2.6e-9, 550 * 2.6e-9
    assert car_model(0.04, 8e-4, 1.2e-3, d1, d2) == pytest.approx(CAR_LAB_LOSSES, rel=1e-12)


def test_car_finite_modes_adds_multipair():
    base = car_model(0.1, 1.0, 1.0, 0.0, 0.0)
    assert car_model(0.1, 1.0, 1.0, 0.0, 0.0, mode_count=1.0) == pytest.approx(base + 1.0)


def test_car_free_running_darks_lower_car():
    gated = car_model(1e-3, 1e-3, 1e-3, 1e-6, 1e-6)
    free = car_model(1e-3, 1e-3, 1e-3, 1e-6, 1e-6, period_over_window=12500 / 2560)
    assert free < gated
    assert car_model(1e-3, 1e-3, 1e-3, 1e-6, 1e-6, period_over_window=1.0) == gated


def test_car_errors():
    with pytest.raises(ValueError):
        car_model(0.0, 0.1, 0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        car_model(-0.1, 0.1, 0.1, 0.0, 0.0)


@given(st.floats(1e-5, 10.0), st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(0, 1e-3), st.floats(0, 1e-3))
def test_car_at_least_one(mu, e1, e2, d1, d2):
    assert car_model(mu, e1, e2, d1, d2) >= 1.0


def test_car_peak_location():
    # CAR(mu) for fixed losses peaks at sqrt(d1 d2 / (eta1 eta2))
    e1, e2, d1, d2 = 8e-4, 1.2e-3, 1.5e-6, 1.4e-6
    mu = np.logspace(-5, 0, 20001)
    c = car_model(mu, e1, e2, d1, d2)
    assert mu[np.argmax(c)] == pytest.approx(math.sqrt(d1 * d2 / (e1 * e2)), rel=2e-3)


def test_g2_from_modes():
    assert g2_from_modes(1.0) == 2.0
    assert g2_from_modes(math.inf) == 1.0
    assert g2_from_modes(1.8) == pytest.approx(1.5555555555555556, rel=1e-15)


@given(st.floats(1.0, 1e6))
def test_g2_modes_roundtrip(m):
    assert modes_from_g2(g2_from_modes(m)) == pytest.approx(m, rel=1e-9)


def test_modes_from_g2_domain():
    with pytest.raises(ValueError):
        modes_from_g2(2.5)
    with pytest.raises(ValueError):
        modes_from_g2(1.0)


def test_mode_count_estimate():
    assert mode_count_estimate(10, 10) == 1
    assert mode_count_estimate(50, 10) == 5
    assert mode_count_estimate(5, 10) == 1


def test_sinc_minimum():
    x = np.linspace(0.0, 20.0, 200001)
    assert sinc(x).min() == pytest.approx(SINC_MIN, abs=1e-9)
    assert SINC_MIN == pytest.approx(-0.21723362821122165741, abs=1e-16)


P = HomProfileParams(1000.0, 0.881, 0.4e-12, 0.6e-12, 0.1e-12)


def test_hom_profile_minimum():
    assert hom_profile(P.center, P) == pytest.approx(1000.0 * (1 - 0.881))


def test_hom_profile_asymptote():
    assert hom_profile(P.center + 50 * P.gauss_width, P) == pytest.approx(1000.0)


def test_hom_profile_sinc_zero():
    assert hom_profile(P.center + P.sinc_width, P) == pytest.approx(1000.0, rel=1e-15)


@given(st.floats(-5e-12, 5e-12))
def test_hom_profile_bounds(tau):
    y = hom_profile(tau, P)
    lo = P.baseline * (1 - P.visibility)
    hi = P.baseline * (1 - P.visibility * SINC_MIN)
    assert lo - 1e-9 <= y <= hi + 1e-9


def test_hom_params_validation():
    with pytest.raises(ValueError):
        HomProfileParams(0.0, 0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        HomProfileParams(1.0, 1.5, 1.0, 1.0)


def test_channel_from_budget():
    ch = ChannelParams.from_budget([(0.5, 0.1), (0.2,)], dark_rate=(600, 550))
    assert ch.transmission == pytest.approx((0.05, 0.2))
    assert ch.dark_probability == pytest.approx((600 * 2.56e-9, 550 * 2.56e-9))


def test_channel_validation():
    with pytest.raises(ValueError):
        ChannelParams((1.2, 0.5))
    with pytest.raises(ValueError):
        ChannelParams((0.5, 0.5), coincidence_window=20e-9)
