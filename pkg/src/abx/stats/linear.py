"""Ordinary least squares through a column-pivoted QR decomposition."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..errors import RankDeficientError
from .design import DesignMatrix, RegressionFit

RANK_RTOL = 1e-10


def pivoted_qr(X: np.ndarray, labels, rtol: float = RANK_RTOL):
    """Economic QR with column pivoting, ``X[:, perm] = Q @ R``.

    Raises :class:`RankDeficientError` naming the pivoted-out columns when a
    singular value of ``R`` falls below ``rtol`` times the largest.
    """
    Q, R, perm = sla.qr(X, mode="economic", pivoting=True, check_finite=False)
    _check_rank(R, perm, labels, rtol)
    return Q, R, perm


def inverse_gram(R: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """``(X'X)^{-1}`` in original column order from the pivoted ``R`` factor."""
    k = R.shape[0]
    Rinv = sla.solve_triangular(R, np.eye(k), check_finite=False)
    inv_p = Rinv @ Rinv.T
    out = np.empty_like(inv_p)
    out[np.ix_(perm, perm)] = inv_p
    return (out + out.T) / 2.0


def _check_rank(R: np.ndarray, perm, labels, rtol: float = RANK_RTOL) -> None:
    sv = np.linalg.svd(R, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0
    if rank < R.shape[1]:
        raise RankDeficientError([labels[j] for j in perm[rank:]], rank, R.shape[1])


def least_squares(X: np.ndarray, y: np.ndarray, labels, perm=None) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and ``(X'X)^{-1}``; the building block for OLS and IRLS.

    With ``perm`` (a column order from an earlier pivoted factorisation of a
    matrix with the same column space) the pivoting step is skipped and only
    ``Q'y`` is formed, which is what repeated IRLS solves need.
    """
    if perm is None:
        Q, R, perm = pivoted_qr(X, labels)
        qty = Q.T @ y
    else:
        qty, R = sla.qr_multiply(X[:, perm], y, mode="right")
        _check_rank(R, perm, labels)
    beta_p = sla.solve_triangular(R, qty, check_finite=False)
    beta = np.empty_like(beta_p)
    beta[perm] = beta_p
    return beta, inverse_gram(R, perm)


def ols_fit(design: DesignMatrix) -> RegressionFit:
    """Gaussian linear model with classical covariance ``s^2 (X'X)^{-1}``."""
    X, y = design.X, design.y
    n, k = X.shape
    beta, xtx_inv = least_squares(X, y, design.labels)
    resid = y - X @ beta
    rss = float(resid @ resid)
    df_resid = n - k
    sigma2 = rss / df_resid if df_resid > 0 else float("nan")

    intercept = design.has_intercept
    tss = float(np.sum((y - y.mean()) ** 2)) if intercept else float(y @ y)
    r2 = adj = f_stat = None
    f_df = None
    if tss > 0:
        r2 = max(0.0, 1.0 - rss / tss) if intercept else 1.0 - rss / tss
        if df_resid > 0:
            dof_model = n - 1 if intercept else n
            adj = 1.0 - (1.0 - r2) * dof_model / df_resid
    model_df = k - 1 if intercept else k
    if model_df > 0 and df_resid > 0 and tss > 0:
        f_stat = ((tss - rss) / model_df) / (rss / df_resid) if rss > 0 else float("inf")
        f_df = (model_df, df_resid)

    return RegressionFit(
        labels=design.labels,
        coefficients=beta,
        classical_cov=sigma2 * xtx_inv if df_resid > 0 else np.full((k, k), np.nan),
        n=n,
        k=k,
        family="gaussian",
        r_squared=r2,
        adj_r_squared=adj,
        residual_se=float(np.sqrt(sigma2)) if df_resid > 0 else None,
        rss=rss,
        f_statistic=f_stat,
        f_df=f_df,
        bread=xtx_inv,
    )
