"""Numerical core: least squares, IRLS GLMs, sandwich covariance, tests, power."""

from .design import DesignMatrix, RegressionFit
from .glm import PoissonATE, glm_fit, poisson_ate
from .inference import CoefTest, coefficient_tests, stars, wald_test
from .linear import least_squares, ols_fit
from .normal import norm_cdf, norm_pdf, norm_ppf, norm_sf, two_sided_p
from .power import PowerSpec, per_arm_n, power_required_n
from .robust import cluster_robust_cov, with_cluster_cov

__all__ = [
    "CoefTest",
    "DesignMatrix",
    "PoissonATE",
    "PowerSpec",
    "RegressionFit",
    "cluster_robust_cov",
    "coefficient_tests",
    "glm_fit",
    "least_squares",
    "norm_cdf",
    "norm_pdf",
    "norm_ppf",
    "norm_sf",
    "ols_fit",
    "per_arm_n",
    "poisson_ate",
    "power_required_n",
    "stars",
    "two_sided_p",
    "wald_test",
    "with_cluster_cov",
]
