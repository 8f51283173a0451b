"""Containers for regression inputs and outputs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class DesignMatrix:
    """Regressors ``X`` (n x k, column-major), response ``y`` and optional cluster labels."""

    X: np.ndarray
    y: np.ndarray
    labels: tuple[str, ...]
    clusters: np.ndarray | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        X = np.asfortranarray(np.asarray(self.X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if X.ndim == 1:
            X = X.reshape(-1, 1, order="F")
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        n, k = X.shape
        if y.shape != (n,):
            raise ValueError(f"y has shape {y.shape}, expected ({n},)")
        if k < 1 or n < k:
            raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")
        labels = tuple(self.labels)
        if len(labels) != k:
            raise ValueError(f"{len(labels)} labels for {k} columns")
        if len(set(labels)) != k:
            raise ValueError("column labels must be unique")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DomainError("design contains non-finite values")
        clusters = self.clusters
        if clusters is not None:
            clusters = np.asarray(clusters)
            if clusters.shape != (n,):
                raise ValueError("cluster labels must have one entry per row")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "clusters", clusters)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def column(self, label: str) -> np.ndarray:
        return self.X[:, self.labels.index(label)]

    @property
    def has_intercept(self) -> bool:
        return any(np.all(self.X[:, j] == 1.0) for j in range(self.k))


@dataclass
class RegressionFit:
    labels: tuple[str, ...]
    coefficients: np.ndarray
    classical_cov: np.ndarray
    n: int
    k: int
    family: str = "gaussian"
    cluster_cov: np.ndarray | None = None
    n_clusters: int | None = None
    r_squared: float | None = None
    adj_r_squared: float | None = None
    residual_se: float | None = None
    rss: float | None = None
    f_statistic: float | None = None
    f_df: tuple[int, int] | None = None
    deviance: float | None = None
    null_deviance: float | None = None
    deviance_history: tuple[float, ...] = ()
    converged: bool = True
    iterations: int = 0
    warnings: list[str] = field(default_factory=list)
    # unscaled (X'WX)^{-1}, the bread of sandwich estimators
    bread: np.ndarray | None = field(default=None, repr=False)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.index(label)])

    def cov(self, kind: str = "classical") -> np.ndarray:
        if kind == "classical":
            return self.classical_cov
        if kind == "clustered":
            if self.cluster_cov is None:
                raise ValueError("fit has no cluster-robust covariance")
            return self.cluster_cov
        raise ValueError(f"unknown covariance kind {kind!r}")

    def se(self, label: str | None = None, kind: str = "classical"):
        se = np.sqrt(np.clip(np.diag(self.cov(kind)), 0.0, None))
        return se if label is None else float(se[self.index(label)])

    def to_dict(self) -> dict:
        def num(x):
            if x is None:
                return None
            x = float(x)
            return x if math.isfinite(x) else None

        out = {
            "family": self.family,
            "n": self.n,
            "k": self.k,
            "labels": list(self.labels),
            "coefficients": [num(b) for b in self.coefficients],
            "se": [num(s) for s in self.se()],
            "classicalCov": [[num(v) for v in row] for row in self.classical_cov],
            "rSquared": num(self.r_squared),
            "adjRSquared": num(self.adj_r_squared),
            "residualSE": num(self.residual_se),
            "fStatistic": num(self.f_statistic),
            "fDf": list(self.f_df) if self.f_df else None,
            "deviance": num(self.deviance),
            "converged": self.converged,
            "iterations": self.iterations,
            "warnings": list(self.warnings),
        }
        if self.cluster_cov is not None:
            out["clusterSE"] = [num(s) for s in self.se(kind="clustered")]
            out["clusterCov"] = [[num(v) for v in row] for row in self.cluster_cov]
            out["nClusters"] = self.n_clusters
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)
