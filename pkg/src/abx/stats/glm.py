"""Poisson and logistic regression by iteratively reweighted least squares."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..errors import ConvergenceError, DomainError
from .design import DesignMatrix, RegressionFit
from .linear import least_squares, pivoted_qr

MAX_ITER = 100
BETA_TOL = 1e-10
DEV_RTOL = 1e-12
MAX_HALVINGS = 40
SEPARATION_LIMIT = 30.0
_ETA_MAX = 700.0
_MU_EPS = 1e-15


class _Poisson:
    name = "poisson"

    @staticmethod
    def check(y):
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise DomainError("poisson response must be nonnegative integers")

    @staticmethod
    def start(y):
        return y + 0.1

    @staticmethod
    def link(mu):
        return np.log(mu)

    @staticmethod
    def inverse(eta):
        return np.exp(np.minimum(eta, _ETA_MAX))

    @staticmethod
    def variance(mu):
        return mu

    @staticmethod
    def deviance(y, mu):
        pos = y > 0
        term = -(y - mu)
        term[pos] += y[pos] * np.log(y[pos] / mu[pos])
        return 2.0 * float(np.sum(term))


class _Binomial:
    name = "binomial"

    @staticmethod
    def check(y):
        if not np.all((y == 0) | (y == 1)):
            raise DomainError("binomial response must be 0 or 1")

    @staticmethod
    def start(y):
        return (y + 0.5) / 2.0

    @staticmethod
    def link(mu):
        return np.log(mu / (1.0 - mu))

    @staticmethod
    def inverse(eta):
        mu = 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_MAX, _ETA_MAX)))
        return np.clip(mu, _MU_EPS, 1.0 - _MU_EPS)

    @staticmethod
    def variance(mu):
        return mu * (1.0 - mu)

    @staticmethod
    def deviance(y, mu):
        return -2.0 * float(np.sum(np.where(y == 1, np.log(mu), np.log1p(-mu))))


FAMILIES = {"poisson": _Poisson, "binomial": _Binomial}


def _separated(X: np.ndarray, beta: np.ndarray) -> list[int]:
    sd = X.std(axis=0)
    return [j for j in range(X.shape[1]) if sd[j] > 0 and abs(beta[j]) * sd[j] > SEPARATION_LIMIT]


def glm_fit(design: DesignMatrix, family: str = "poisson") -> RegressionFit:
    """Maximum-likelihood GLM with canonical link (log / logit).

    Each iteration solves the weighted least-squares problem on the working
    response with a pivoted QR.  A step that increases the deviance is halved
    until it no longer does.  Iteration stops when the largest coefficient
    change is below 1e-10 or the relative deviance change below 1e-12.
    ``classical_cov`` is the inverse Fisher information at the estimate.
    """
    try:
        fam = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unsupported family {family!r}") from None
    X, y, labels = design.X, design.y, design.labels
    fam.check(y)

    # positive weights keep the column space, so the pivot order of X is reused
    _, _, perm = pivoted_qr(X, labels)
    mu = fam.start(y)
    eta = fam.link(mu)
    beta = None
    dev = math.inf
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        w = fam.variance(mu)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        beta_new, _ = least_squares(X * sw[:, None], z * sw, labels, perm)
        eta_new = X @ beta_new
        mu_new = fam.inverse(eta_new)
        dev_new = fam.deviance(y, mu_new)
        if beta is not None:
            halvings = 0
            # rounding-level increases near the optimum are not divergence
            ceiling = dev + DEV_RTOL * abs(dev)
            while not dev_new <= ceiling and halvings < MAX_HALVINGS:
                beta_new = (beta + beta_new) / 2.0
                eta_new = X @ beta_new
                mu_new = fam.inverse(eta_new)
                dev_new = fam.deviance(y, mu_new)
                halvings += 1
            if not dev_new <= ceiling:
                # no descent direction left; keep the previous iterate
                beta_new, eta_new, mu_new, dev_new = beta, eta, mu, dev
        step = math.inf if beta is None else float(np.max(np.abs(beta_new - beta)))
        rel = abs(dev - dev_new) / max(abs(dev_new), 1e-300) if beta is not None else math.inf
        beta, eta, mu, dev = beta_new, eta_new, mu_new, dev_new
        history.append(dev)
        if step < BETA_TOL or rel < DEV_RTOL:
            converged = True
            break

    warnings: list[str] = []
    if family == "binomial":
        sep = _separated(X, beta)
        if sep:
            warnings.append(
                "possible separation: diverging coefficients for " + ", ".join(labels[j] for j in sep)
            )
    if not converged and not warnings:
        raise ConvergenceError(f"IRLS did not converge in {MAX_ITER} iterations", last=beta, iterations=it)

    w = fam.variance(mu)
    _, bread = least_squares(X * np.sqrt(w)[:, None], np.zeros(len(y)), labels, perm)
    null_mu = np.full_like(y, np.clip(y.mean(), _MU_EPS, None))
    if family == "binomial":
        null_mu = np.clip(null_mu, _MU_EPS, 1.0 - _MU_EPS)
    return RegressionFit(
        labels=labels,
        coefficients=beta,
        classical_cov=bread,
        n=design.n,
        k=design.k,
        family=family,
        deviance=dev,
        null_deviance=fam.deviance(y, null_mu),
        deviance_history=tuple(history),
        converged=converged,
        iterations=it,
        warnings=warnings,
        bread=bread,
    )


class PoissonATE(NamedTuple):
    ate: float
    lower: float
    upper: float
    se: float


def poisson_ate(fit: RegressionFit, bounds: str = "transform", width: float = 2.0) -> PoissonATE:
    """Average treatment effect ``exp(a + b) - exp(a)`` of a two-group Poisson fit.

    ``bounds="transform"`` maps ``b +/- width*SE(b)`` through the same
    expression; ``"delta"`` uses a delta-method SE on the ATE scale.  The
    returned ``se`` is the half-width divided by ``width``.
    """
    if fit.family != "poisson" or fit.k != 2:
        raise ValueError("poisson_ate needs a poisson fit with intercept and one treatment column")
    a, b = (float(v) for v in fit.coefficients)
    cov = fit.classical_cov
    base = math.exp(a)
    ate = math.exp(a + b) - base
    if bounds == "transform":
        s = math.sqrt(cov[1, 1])
        lower = math.exp(a + b - width * s) - base
        upper = math.exp(a + b + width * s) - base
        se = (upper - lower) / (2.0 * width)
    elif bounds == "delta":
        g = np.array([math.exp(a + b) - base, math.exp(a + b)])
        se = float(math.sqrt(g @ cov @ g))
        lower, upper = ate - width * se, ate + width * se
    else:
        raise ValueError(f"unknown bounds method {bounds!r}")
    return PoissonATE(ate, lower, upper, se)
