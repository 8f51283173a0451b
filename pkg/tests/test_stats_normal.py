import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from abx.errors import ConfigError, DomainError
from abx.stats import (PowerSpec, coefficient_tests, norm_cdf, norm_pdf, norm_ppf, norm_sf, per_arm_n,
                       power_required_n, stars, two_sided_p, wald_test)

# reference values computed once with mpmath at 40 digits
CDF_REFERENCE = [
    (-8.0, 6.2209605742717841235e-16),
    (-5.0, 2.8665157187919391167e-7),
    (-3.0, 0.0013498980316300945267),
    (-1.0, 0.15865525393145705141),
    (-0.5, 0.30853753872598689636),
    (0.3, 0.61791142218895263307),
    (1.0, 0.84134474606854294859),
    (1.959964, 0.97500000090355759801),
    (2.5, 0.99379033467422386483),
    (4.0, 0.99996832875816688008),
    (6.0, 0.99999999901341235496),
]

PPF_REFERENCE = [
    (1e-10, -6.3613409024040561991),
    (1e-6, -4.7534243088228989573),
    (0.001, -3.0902323061678135354),
    (0.025, -1.9599639845400542118),
    (0.05, -1.644853626951472688),
    (0.3, -0.52440051270804081597),
    (0.8, 0.8416212335729143638),
    (0.975, 1.9599639845400538556),
    (0.99, 2.3263478740408407676),
    (0.999999, 4.7534243088170877657),
]


@pytest.mark.parametrize("x,expected", CDF_REFERENCE)
def test_cdf_against_reference(x, expected):
    assert abs(norm_cdf(x) - expected) < 1e-9
    assert_allclose(norm_cdf(x), expected, rtol=1e-13)


@pytest.mark.parametrize("p,expected", PPF_REFERENCE)
def test_ppf_against_reference(p, expected):
    assert_allclose(norm_ppf(p), expected, rtol=1e-12)


def test_two_sided_p_at_the_95_multiplier():
    assert_allclose(two_sided_p(1.959964), 0.049999998192884803989, rtol=1e-12)
    assert two_sided_p(0.0) == 1.0
    assert math.isnan(two_sided_p(math.nan))


def test_upper_tail_has_no_cancellation():
    # 1 - cdf(9) is 0 in double precision; the survival function is not
    assert_allclose(norm_sf(9.0), norm_cdf(-9.0), rtol=1e-14)
    assert norm_sf(9.0) > 1e-19


def test_pdf_peak():
    assert_allclose(norm_pdf(0.0), 1 / math.sqrt(2 * math.pi), rtol=1e-15)


@given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
def test_ppf_inverts_cdf(p):
    x = norm_ppf(p)
    assert_allclose(norm_cdf(x), p, rtol=1e-11, atol=1e-15)


@given(st.floats(min_value=-30, max_value=30))
def test_cdf_symmetry(x):
    assert_allclose(norm_cdf(x) + norm_cdf(-x), 1.0, atol=1e-15)


def test_ppf_edges():
    assert norm_ppf(0.0) == -math.inf
    assert norm_ppf(1.0) == math.inf
    with pytest.raises(ValueError):
        norm_ppf(1.5)


def test_stars_thresholds():
    assert [stars(p) for p in (0.2, 0.09, 0.04, 0.001)] == ["", "*", "**", "***"]
    assert stars(math.nan) == ""


def test_wald_test_degenerate_se():
    assert wald_test("a", 0.0, 0.0).p_value == 1.0
    t = wald_test("a", 0.5, 0.0)
    assert t.statistic == math.inf and t.p_value == 0.0
    t = wald_test("treat", 0.011, 0.002)
    assert_allclose(t.statistic, 5.5)
    assert t.stars == "***"
    assert t.to_dict()["pValue"] == t.p_value


def test_coefficient_tests_use_requested_covariance():
    import numpy as np
    from abx.stats import DesignMatrix, ols_fit, with_cluster_cov

    X = np.column_stack([np.ones(6), np.arange(6.0)])
    y = np.array([1.0, 2.0, 2.5, 4.2, 4.8, 6.1])
    d = DesignMatrix(X, y, ("c", "x"), clusters=np.array([0, 0, 1, 1, 2, 2]))
    fit = with_cluster_cov(d, ols_fit(d))
    classical = coefficient_tests(fit)
    robust = coefficient_tests(fit, "clustered")
    assert [t.estimate for t in classical] == [t.estimate for t in robust]
    assert_allclose([t.se for t in robust], fit.se(kind="clustered"))


def closed_form_total(alpha, power, mean, effect, sd):
    # independent route through the reference quantiles
    z = {0.025: 1.9599639845400542118, 0.01: 2.3263478740408407676}
    za, zb = z[round(alpha / 2, 6)], z[round(1 - power, 6)]
    n = 2 * (sd * (za + zb) / (effect * mean)) ** 2
    return n, 2 * math.ceil(n)


def test_power_matches_independent_closed_form():
    spec = PowerSpec(baseline_mean=0.32, outcome_sd=0.766, relative_effect=0.03, alpha=0.05, power=0.99)
    n, total = closed_form_total(0.05, 0.99, 0.32, 0.03, 0.766)
    assert_allclose(per_arm_n(spec), n, rtol=1e-12)
    assert_allclose(per_arm_n(spec), 233944.37121, rtol=1e-10)
    assert power_required_n(spec) == total == 467890


def test_power_scales_inverse_square_in_effect():
    a = PowerSpec(0.32, 0.766, 0.03)
    b = PowerSpec(0.32, 0.766, 0.06)
    assert_allclose(per_arm_n(a), 4 * per_arm_n(b), rtol=1e-12)


def test_power_rejects_bad_inputs():
    with pytest.raises(DomainError):
        per_arm_n(PowerSpec(0.32, 0.766, 0.0))
    with pytest.raises(ConfigError):
        PowerSpec(0.32, 0.766, 0.03, alpha=1.0)
    with pytest.raises(ConfigError):
        PowerSpec(0.32, 0.0, 0.03)


def test_power_one_half_leaves_only_the_alpha_quantile():
    spec = PowerSpec(0.32, 0.766, 0.03, alpha=0.05, power=0.5)
    z = 1.9599639845400542118
    assert_allclose(per_arm_n(spec), 2 * 0.766 ** 2 * z ** 2 / (0.03 * 0.32) ** 2, rtol=1e-12)
