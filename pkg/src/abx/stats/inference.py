"""Wald tests on fitted coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .design import RegressionFit
from .normal import two_sided_p

STAR_LEVELS = (0.01, 0.05, 0.1)


def stars(p: float) -> str:
    if math.isnan(p):
        return ""
    return "*" * sum(p < level for level in STAR_LEVELS)


@dataclass(frozen=True)
class CoefTest:
    label: str
    estimate: float
    se: float
    statistic: float
    p_value: float

    @property
    def stars(self) -> str:
        return stars(self.p_value)

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else None

        return {
            "label": self.label,
            "estimate": self.estimate,
            "se": num(self.se),
            "statistic": num(self.statistic),
            "pValue": num(self.p_value),
            "stars": self.stars,
        }


def wald_test(label: str, estimate: float, se: float) -> CoefTest:
    """Normal-approximation test of ``estimate = 0``."""
    if se > 0:
        z = estimate / se
    elif estimate == 0:
        z = 0.0
    else:
        z = math.copysign(math.inf, estimate)
    p = 1.0 if z == 0 else two_sided_p(z)
    return CoefTest(label, float(estimate), float(se), float(z), float(p))


def coefficient_tests(fit: RegressionFit, cov: str = "classical") -> list[CoefTest]:
    """Per-coefficient estimate, SE, z statistic and two-sided p-value."""
    se = fit.se(kind=cov)
    return [wald_test(lab, float(b), float(s)) for lab, b, s in zip(fit.labels, fit.coefficients, se)]
