import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from abx.errors import ConvergenceError, DomainError
from abx.stats import DesignMatrix, glm_fit, ols_fit, poisson_ate
from abx.stats import glm as glm_module


def two_group(y0, y1):
    y = np.concatenate([y0, y1]).astype(float)
    d = np.r_[np.zeros(len(y0)), np.ones(len(y1))]
    return DesignMatrix(np.column_stack([np.ones(len(y)), d]), y, ("Constant", "treat"))


def test_intercept_only_poisson_is_log_mean(rng):
    y = rng.poisson(0.35, 500).astype(float)
    fit = glm_fit(DesignMatrix(np.ones((500, 1)), y, ("Constant",)), "poisson")
    assert fit.converged
    assert_allclose(fit.coefficients[0], math.log(y.mean()), rtol=0, atol=1e-10)
    # Fisher information of the intercept is n * mean
    assert_allclose(fit.classical_cov[0, 0], 1 / y.sum(), rtol=1e-8)


def test_saturated_two_group_fit_reproduces_group_means(rng):
    y0, y1 = rng.poisson(0.30, 800), rng.poisson(0.34, 800)
    fit = glm_fit(two_group(y0, y1), "poisson")
    a, b = fit.coefficients
    assert_allclose(math.exp(a), y0.mean(), rtol=1e-10)
    assert_allclose(math.exp(a + b), y1.mean(), rtol=1e-10)
    ols = ols_fit(two_group(y0, y1))
    assert abs(poisson_ate(fit).ate - ols.coef("treat")) < 1e-9


def test_deviance_never_increases_on_random_instances():
    for seed in range(100):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(15, 60))
        X = np.column_stack([np.ones(n), gen.normal(size=(n, 2))])
        family = "poisson" if seed % 2 == 0 else "binomial"
        if family == "poisson":
            y = gen.poisson(np.exp(X @ [0.2, 0.5, -0.3])).astype(float)
        else:
            y = (gen.random(n) < 1 / (1 + np.exp(-X @ [0.1, 0.8, -0.6]))).astype(float)
            if y.min() == y.max():
                y[0] = 1 - y[0]
        fit = glm_fit(DesignMatrix(X, y, ("c", "a", "b")), family)
        hist = np.array(fit.deviance_history)
        assert np.all(hist[1:] <= hist[:-1] * (1 + 1e-12) + 1e-12), (seed, hist)


def test_binomial_null_model_is_logit_of_share():
    y = np.array([1.0] * 30 + [0.0] * 70)
    fit = glm_fit(DesignMatrix(np.ones((100, 1)), y, ("Constant",)), "binomial")
    assert_allclose(fit.coefficients[0], math.log(0.3 / 0.7), atol=1e-10)
    assert_allclose(fit.deviance, fit.null_deviance, rtol=1e-12)


def test_binomial_matches_closed_form_two_group():
    # 12/40 vs 25/50 successes
    y = np.r_[np.ones(12), np.zeros(28), np.ones(25), np.zeros(25)]
    d = np.r_[np.zeros(40), np.ones(50)]
    fit = glm_fit(DesignMatrix(np.column_stack([np.ones(90), d]), y, ("c", "d")), "binomial")
    a, b = fit.coefficients
    assert_allclose(a, math.log(12 / 28), atol=1e-10)
    assert_allclose(b, math.log(25 / 25) - math.log(12 / 28), atol=1e-10)
    assert_allclose(fit.classical_cov[1, 1], 1 / 12 + 1 / 28 + 1 / 25 + 1 / 25, rtol=1e-8)


def test_perfect_separation_is_flagged_not_fatal():
    x = np.arange(20.0)
    y = (x >= 10).astype(float)
    fit = glm_fit(DesignMatrix(np.column_stack([np.ones(20), x]), y, ("c", "x")), "binomial")
    assert any("separation" in w and "x" in w for w in fit.warnings)


def test_non_convergence_raises_with_last_iterate(rng, monkeypatch):
    monkeypatch.setattr(glm_module, "MAX_ITER", 1)
    y = rng.poisson(1.0, 50).astype(float)
    X = np.column_stack([np.ones(50), rng.normal(size=50)])
    with pytest.raises(ConvergenceError) as err:
        glm_fit(DesignMatrix(X, y, ("c", "x")), "poisson")
    assert err.value.last is not None and err.value.iterations == 1


@pytest.mark.parametrize("family,y", [("poisson", [0, 1, -1]), ("poisson", [0, 1.5, 2]),
                                      ("binomial", [0, 1, 2])])
def test_response_outside_family_domain(family, y):
    X = np.ones((3, 1))
    with pytest.raises(DomainError):
        glm_fit(DesignMatrix(X, np.array(y, float), ("c",)), family)


def test_unknown_family():
    with pytest.raises(ValueError):
        glm_fit(DesignMatrix(np.ones((3, 1)), np.ones(3), ("c",)), "gamma")


def test_transform_bounds_se_is_quarter_width(rng):
    fit = glm_fit(two_group(rng.poisson(0.35, 5000), rng.poisson(0.37, 5000)), "poisson")
    a, b = fit.coefficients
    s = math.sqrt(fit.classical_cov[1, 1])
    res = poisson_ate(fit)
    assert_allclose(res.lower, math.exp(a + b - 2 * s) - math.exp(a), rtol=1e-12)
    assert_allclose(res.upper, math.exp(a + b + 2 * s) - math.exp(a), rtol=1e-12)
    assert_allclose(res.se, (res.upper - res.lower) / 4, rtol=1e-12)
    delta = poisson_ate(fit, bounds="delta")
    assert delta.ate == res.ate
    # both methods agree to first order at this sample size
    assert abs(delta.se / res.se - 1) < 0.05
    with pytest.raises(ValueError):
        poisson_ate(fit, bounds="profile")


def test_zero_effect_bounds_are_exp_transform_of_zero():
    y = np.r_[np.arange(10) % 3, np.arange(10) % 3].astype(float)
    fit = glm_fit(two_group(y[:10], y[10:]), "poisson")
    res = poisson_ate(fit)
    a = fit.coefficients[0]
    s = math.sqrt(fit.classical_cov[1, 1])
    assert abs(res.ate) < 1e-12
    assert_allclose([res.lower, res.upper], [math.exp(a) * (math.exp(-2 * s) - 1),
                                             math.exp(a) * (math.exp(2 * s) - 1)], rtol=1e-9)
    assert res.upper > -res.lower  # asymmetric beyond first order


def test_binomial_null_regressors_rarely_significant():
    big = 0
    for seed in range(100):
        gen = np.random.default_rng(1000 + seed)
        X = np.column_stack([np.ones(400), gen.normal(size=(400, 3))])
        y = (gen.random(400) < 0.5).astype(float)
        fit = glm_fit(DesignMatrix(X, y, ("c", "a", "b", "d")), "binomial")
        z = np.abs(fit.coefficients[1:] / fit.se()[1:])
        big += bool(np.any(z >= 3))
    assert big <= 1
