"""Cluster-robust (sandwich) covariance."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..errors import DomainError
from .design import DesignMatrix, RegressionFit


def fitted_mean(design: DesignMatrix, fit: RegressionFit) -> np.ndarray:
    eta = design.X @ fit.coefficients
    if fit.family == "gaussian":
        return eta
    if fit.family == "poisson":
        return np.exp(eta)
    if fit.family == "binomial":
        return 1.0 / (1.0 + np.exp(-eta))
    raise ValueError(f"unknown family {fit.family!r}")


def cluster_robust_cov(
    design: DesignMatrix,
    fit: RegressionFit,
    clusters=None,
    kind: str = "CR1",
) -> np.ndarray:
    """Sandwich covariance ``B (sum_g s_g s_g') B`` clustered on ``clusters``.

    ``B`` is the unscaled bread stored on the fit and ``s_g`` is the summed
    score ``X_g'(y_g - mu_g)`` of cluster ``g``.  ``kind="CR1"`` applies the
    small-sample factor ``G/(G-1) * (n-1)/(n-k)``; ``"CR0"`` applies none.
    """
    if clusters is None:
        clusters = design.clusters
    if clusters is None:
        raise ValueError("no cluster labels supplied")
    if kind not in ("CR0", "CR1"):
        raise ValueError(f"unknown cluster-robust variant {kind!r}")
    codes, uniques = pd.factorize(np.asarray(clusters), sort=False)
    G = len(uniques)
    if G < 2:
        raise DomainError("cluster-robust covariance needs at least two clusters")
    if fit.bread is None:
        raise ValueError("fit carries no bread matrix")

    X = design.X
    n, k = X.shape
    resid = design.y - fitted_mean(design, fit)
    scores = np.empty((G, k))
    for j in range(k):
        scores[:, j] = np.bincount(codes, weights=X[:, j] * resid, minlength=G)
    meat = scores.T @ scores
    cov = fit.bread @ meat @ fit.bread
    if kind == "CR1":
        cov *= G / (G - 1) * (n - 1) / (n - k)
    return (cov + cov.T) / 2.0


def with_cluster_cov(design: DesignMatrix, fit: RegressionFit, kind: str = "CR1") -> RegressionFit:
    """Attach the cluster-robust covariance to ``fit`` (in place) and return it."""
    fit.cluster_cov = cluster_robust_cov(design, fit, kind=kind)
    fit.n_clusters = int(pd.unique(np.asarray(design.clusters)).size)
    return fit
