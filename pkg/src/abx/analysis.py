"""Treatment-effect models on listing sessions.

Every model here is a declarative :class:`ModelSpec` turned into a design
matrix by :func:`build_design` and fitted with the numerical core in
:mod:`abx.stats`.  Regressor names follow the session schema, with two
aliases: ``isLogin`` for the ``isLoggedIn`` column and ``zone`` for the
categorical expansion of ``zoneId``.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DomainError, EmptyDataError, ModelError, PreconditionError
from .sessions import session_frame
from .stats import (
    CoefTest,
    DesignMatrix,
    RegressionFit,
    coefficient_tests,
    glm_fit,
    ols_fit,
    poisson_ate,
    wald_test,
    with_cluster_cov,
)
from .taxonomy import CategoryBaseline, Taxonomy
from .weblog import ReassignmentStats

INTERCEPT = "Constant"
CI95_Z = 1.959964
SWEEP_BAND = 2.0

# regressor name -> session column
_COLUMN_OF = {
    "treat": "treat",
    "pageNo": "pageNo",
    "itemsPerPage": "itemsPerPage",
    "isLogin": "isLoggedIn",
    "isLoggedIn": "isLoggedIn",
    "clicks": "clicks",
    "zone": "zoneId",
    "zoneId": "zoneId",
    "categoryId": "categoryId",
}
_DERIVED = ("catClickRateAA", "isDoubleAssigned")
_CATEGORICAL = ("zone", "categoryId")


@dataclass(frozen=True)
class ModelSpec:
    """Declarative regression: ``response ~ 1 + regressors + interactions``."""

    regressors: tuple[str, ...]
    interactions: tuple[tuple[str, str], ...] = ()
    response: str = "clicks"
    cov: str = "clustered"
    stage: str | None = "AB"
    zone: int | None = None
    name: str = ""

    def __post_init__(self):
        known = set(_COLUMN_OF) | set(_DERIVED)
        for r in self.regressors + (self.response,):
            if r not in known:
                raise ValueError(f"unknown regressor {r!r}")
        for a, b in self.interactions:
            if a not in self.regressors or b not in self.regressors:
                raise ValueError(f"interaction {a}:{b} references undeclared regressors")
        if self.cov not in ("classical", "clustered"):
            raise ValueError(f"unknown covariance choice {self.cov!r}")
        if self.stage not in (None, "AA", "AB"):
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def formula(self) -> str:
        terms = ["1", *self.regressors, *(f"{a}:{b}" for a, b in self.interactions)]
        return f"{self.response} ~ " + " + ".join(terms)

    def uses(self, name: str) -> bool:
        return name in self.regressors


SIMPLE_SPEC = ModelSpec(("treat",), name="simple")
FULL_SPEC = ModelSpec(("treat", "pageNo", "itemsPerPage", "isLogin", "catClickRateAA"), name="full")
COMBINED_SPEC = ModelSpec(
    ("zone", "treat", "pageNo", "itemsPerPage", "isLogin", "catClickRateAA"),
    interactions=(("treat", "zone"),),
    name="combined",
)
DOUBLE_SPEC = ModelSpec(
    ("treat", "pageNo", "itemsPerPage", "isLogin", "catClickRateAA", "isDoubleAssigned"),
    name="doubleassigned",
)


def _expand(name: str, values: np.ndarray) -> tuple[list[str], list[np.ndarray]]:
    if name not in _CATEGORICAL:
        return [name], [values.astype(np.float64)]
    prefix = "zone" if name == "zone" else "cat"
    levels = np.unique(values)
    # first level is the reference
    return [f"{prefix}{lv}" for lv in levels[1:]], [(values == lv).astype(np.float64) for lv in levels[1:]]


def build_design(
    sessions,
    spec: ModelSpec,
    baselines: Mapping | None = None,
    double_flags: pd.Series | None = None,
) -> DesignMatrix:
    """Design matrix for ``spec`` with an intercept and anonyId clusters.

    Categorical regressors become indicators with the lowest level dropped;
    interactions are elementwise products of the expanded columns.  Sessions
    whose category has no baseline (when ``catClickRateAA`` is used) or
    whose user has no flag (``isDoubleAssigned``) are dropped and counted in
    ``dropped_rows``.
    """
    frame = session_frame(sessions)
    if spec.stage is not None:
        frame = frame[frame["stage"] == spec.stage]
    if spec.zone is not None:
        frame = frame[frame["zoneId"] == spec.zone]
    keep = np.ones(len(frame), dtype=bool)
    derived: dict[str, np.ndarray] = {}
    if spec.uses("catClickRateAA"):
        if baselines is None:
            raise PreconditionError("catClickRateAA needs category baselines")
        rates = frame["categoryId"].map(dict(baselines)).to_numpy(dtype=np.float64)
        keep &= ~np.isnan(rates)
        derived["catClickRateAA"] = rates
    if spec.uses("isDoubleAssigned"):
        if double_flags is None:
            raise PreconditionError("isDoubleAssigned needs reassignment flags")
        flags = frame["anonyId"].map(double_flags).to_numpy(dtype=np.float64)
        keep &= ~np.isnan(flags)
        derived["isDoubleAssigned"] = flags
    dropped = int((~keep).sum())
    frame = frame[keep]
    derived = {k: v[keep] for k, v in derived.items()}
    if len(frame) == 0:
        raise EmptyDataError(f"no rows left for model {spec.name or spec.formula}")

    labels = [INTERCEPT]
    cols = [np.ones(len(frame))]
    expanded: dict[str, tuple[list[str], list[np.ndarray]]] = {}
    for r in spec.regressors:
        values = derived[r] if r in derived else frame[_COLUMN_OF[r]].to_numpy()
        expanded[r] = _expand(r, values)
        labels += expanded[r][0]
        cols += expanded[r][1]
    for a, b in spec.interactions:
        for la, ca in zip(*expanded[a]):
            for lb, cb in zip(*expanded[b]):
                labels.append(f"{la}:{lb}")
                cols.append(ca * cb)
    y = frame[_COLUMN_OF.get(spec.response, spec.response)].to_numpy(dtype=np.float64)
    clusters = pd.factorize(frame["anonyId"].to_numpy())[0]
    return DesignMatrix(np.column_stack(cols), y, tuple(labels), clusters=clusters, dropped_rows=dropped)


@dataclass
class ModelResult:
    """A fitted model with its coefficient tests under the chosen covariance."""

    name: str
    formula: str
    fit: RegressionFit
    tests: list[CoefTest]
    cov: str
    dropped_rows: int = 0

    def test(self, label: str) -> CoefTest:
        for t in self.tests:
            if t.label == label:
                return t
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "formula": self.formula,
            "cov": self.cov,
            "droppedRows": self.dropped_rows,
            "tests": [t.to_dict() for t in self.tests],
            "fit": self.fit.to_dict(),
        }


def fit_model(
    sessions,
    spec: ModelSpec,
    baselines: Mapping | None = None,
    double_flags: pd.Series | None = None,
    cluster_kind: str = "CR1",
) -> ModelResult:
    design = build_design(sessions, spec, baselines, double_flags)
    fit = ols_fit(design)
    if spec.cov == "clustered":
        with_cluster_cov(design, fit, kind=cluster_kind)
    return ModelResult(
        name=spec.name,
        formula=spec.formula,
        fit=fit,
        tests=coefficient_tests(fit, spec.cov),
        cov=spec.cov,
        dropped_rows=design.dropped_rows,
    )


def fit_simple_model(ab_sessions, cluster_kind: str = "CR1") -> ModelResult:
    """``clicks ~ 1 + treat`` with anonyId-clustered errors."""
    return fit_model(ab_sessions, SIMPLE_SPEC, cluster_kind=cluster_kind)


def fit_full_model(ab_sessions, baselines: Mapping, cluster_kind: str = "CR1") -> ModelResult:
    """Treatment effect adjusted for page, page size, login and category baseline."""
    return fit_model(ab_sessions, FULL_SPEC, baselines, cluster_kind=cluster_kind)


@dataclass
class ZoneFits:
    results: dict[int, ModelResult]
    skipped: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "zones": {str(z): r.to_dict() for z, r in sorted(self.results.items())},
            "skipped": {str(z): msg for z, msg in sorted(self.skipped.items())},
        }


def fit_zone_models(
    ab_sessions,
    baselines: Mapping,
    taxonomy: Taxonomy,
    threads: int = 1,
    cluster_kind: str = "CR1",
) -> ZoneFits:
    """The full model refitted on each zone's sessions alone.

    Zones that are absent or cannot be fitted (rank deficiency, a single
    user) are reported in ``skipped`` instead of raising.
    """
    frame = session_frame(ab_sessions)

    def one(z):
        spec = ModelSpec(FULL_SPEC.regressors, zone=z, name=f"zone{z}")
        try:
            return z, fit_model(frame, spec, baselines, cluster_kind=cluster_kind), None
        except (ModelError, EmptyDataError, DomainError, PreconditionError) as exc:
            return z, None, str(exc)

    zones = list(taxonomy.zone_ids)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, zones))
    else:
        outcomes = [one(z) for z in zones]
    fits = ZoneFits({})
    for z, res, err in outcomes:
        if res is None:
            fits.skipped[z] = err
        else:
            fits.results[z] = res
    return fits


@dataclass
class CombinedZoneResult:
    result: ModelResult
    reference_zone: int
    implied: dict[int, tuple[float, float]]  # zone -> (ATE, SE)

    def implied_tests(self) -> dict[int, CoefTest]:
        return {z: wald_test(f"treat|zone{z}", a, s) for z, (a, s) in self.implied.items()}

    def to_dict(self) -> dict:
        out = self.result.to_dict()
        out["referenceZone"] = self.reference_zone
        out["impliedZoneATE"] = {str(z): t.to_dict() for z, t in sorted(self.implied_tests().items())}
        return out


def fit_combined_zone_model(ab_sessions, baselines: Mapping, taxonomy: Taxonomy | None = None,
                            cluster_kind: str = "CR1") -> CombinedZoneResult:
    """One pooled fit with zone effects and ``treat:zone`` interactions.

    The implied effect in zone ``z`` is ``treat + treat:zone<z>`` (just
    ``treat`` in the reference zone, the lowest zoneId present).
    """
    frame = session_frame(ab_sessions)
    frame = frame[frame["stage"] == "AB"]
    zones = sorted(int(z) for z in frame["zoneId"].unique())
    if taxonomy is not None:
        known = set(taxonomy.zone_ids)
        zones = [z for z in zones if z in known]
    if len(zones) < 2:
        raise PreconditionError("the combined zone model needs at least two zones")
    res = fit_model(frame, COMBINED_SPEC, baselines, cluster_kind=cluster_kind)
    fit = res.fit
    cov = fit.cov(res.cov)
    t = fit.index("treat")
    implied = {}
    for z in zones:
        label = f"treat:zone{z}"
        if label in fit.labels:
            i = fit.index(label)
            ate = fit.coefficients[t] + fit.coefficients[i]
            var = cov[t, t] + cov[i, i] + 2.0 * cov[t, i]
        else:
            ate, var = fit.coefficients[t], cov[t, t]
        implied[z] = (float(ate), float(math.sqrt(max(var, 0.0))))
    return CombinedZoneResult(res, zones[0], implied)


def fit_double_assigned_model(ab_sessions, baselines: Mapping, stats: ReassignmentStats,
                              cluster_kind: str = "CR1") -> ModelResult:
    """Full model plus an ``isDoubleAssigned`` main effect (no treat interaction)."""
    return fit_model(ab_sessions, DOUBLE_SPEC, baselines, stats.flags, cluster_kind=cluster_kind)


# -- placebo test ----------------------------------------------------------

_UA_RULES = (
    (("bot", "spider", "crawl"), "Bot"),
    (("edge/",), "Edge"),
    (("opr/", "opera"), "Opera"),
    (("samsungbrowser",), "Samsung"),
    (("trident", "msie"), "IE"),
    (("firefox", "fxios"), "Firefox"),
    (("chrome", "crios"), "Chrome"),
    (("safari",), "Safari"),
)


def ua_family(user_agent: str) -> str:
    """Coarse browser family by ordered substring rules."""
    ua = user_agent.lower()
    for needles, family in _UA_RULES:
        if any(n in ua for n in needles):
            return family
    return "Other"


@dataclass
class PlaceboReport:
    categories: list[int]
    coefficients: np.ndarray
    se: np.ndarray
    p_values: np.ndarray
    n_users: int
    alpha: float = 0.05
    warnings: list[str] = field(default_factory=list)
    fit: RegressionFit | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.categories)

    @property
    def threshold(self) -> float:
        return self.alpha / self.m

    @property
    def n_significant(self) -> int:
        return int(np.sum(self.p_values < self.alpha))

    @property
    def fraction_significant(self) -> float:
        return self.n_significant / self.m

    @property
    def verdict(self) -> str:
        return "fail" if np.any(self.p_values < self.threshold) else "pass"

    def to_dict(self) -> dict:
        return {
            "nUsers": self.n_users,
            "nCategories": self.m,
            "alpha": self.alpha,
            "bonferroniThreshold": self.threshold,
            "nSignificant": self.n_significant,
            "fractionSignificant": self.fraction_significant,
            "verdict": self.verdict,
            "warnings": list(self.warnings),
            "categories": [
                {"categoryId": c, "estimate": float(b), "se": float(s), "pValue": float(p)}
                for c, b, s, p in zip(self.categories, self.coefficients, self.se, self.p_values)
            ],
        }


def placebo_design(aa_sessions, user_agents: Mapping | None = None, min_users: int = 5) -> DesignMatrix:
    """One row per A/A user: first-session arm on UA family and category counts.

    Categories viewed by fewer than ``min_users`` users get no column; with a
    handful of viewers a count column is close to an indicator of those users
    and the logistic fit separates on it.
    """
    frame = session_frame(aa_sessions)
    frame = frame[frame["stage"] == "AA"]
    if len(frame) == 0:
        raise EmptyDataError("no A/A sessions")
    frame = frame.sort_values(["anonyId", "ts"], kind="stable")
    users = frame.groupby("anonyId", sort=True)
    treat = users["treat"].first()
    if len(treat) < 2 or treat.nunique() < 2:
        raise EmptyDataError("placebo test needs users in both arms")
    user_code = treat.index.get_indexer(frame["anonyId"])
    cat_code, cat_levels = pd.factorize(frame["categoryId"], sort=True)
    counts = np.zeros((len(treat), len(cat_levels)))
    np.add.at(counts, (user_code, cat_code), 1.0)
    labels = [INTERCEPT]
    cols = [np.ones(len(treat))]
    if user_agents is not None:
        fam = np.array([ua_family(str(user_agents.get(a, ""))) for a in treat.index])
        names, dummies = _expand_levels("ua", fam)
        labels += names
        cols += dummies
    viewers = (counts > 0).sum(axis=0)
    for j, c in enumerate(cat_levels):
        if viewers[j] >= min_users:
            labels.append(f"cat{c}")
            cols.append(counts[:, j])
    return DesignMatrix(np.column_stack(cols), treat.to_numpy(dtype=np.float64), tuple(labels))


def _expand_levels(prefix: str, values: np.ndarray):
    levels = sorted(set(values.tolist()))
    return ([f"{prefix}{lv}" for lv in levels[1:]],
            [(values == lv).astype(np.float64) for lv in levels[1:]])


def placebo_test(aa_sessions, user_agents: Mapping | None = None, alpha: float = 0.05,
                 min_users: int = 5) -> PlaceboReport:
    """Logistic regression of treatment assignment on pre-treatment usage.

    ``user_agents`` maps anonyId to a user-agent string (or an already
    extracted family); without it the UA indicators are omitted.  The
    verdict fails when any category p-value is below ``alpha / m``.
    """
    design = placebo_design(aa_sessions, user_agents, min_users)
    fit = glm_fit(design, "binomial")
    cat_idx = [j for j, lab in enumerate(design.labels) if lab.startswith("cat")]
    tests = coefficient_tests(fit, "classical")
    return PlaceboReport(
        categories=[int(design.labels[j][3:]) for j in cat_idx],
        coefficients=np.array([tests[j].estimate for j in cat_idx]),
        se=np.array([tests[j].se for j in cat_idx]),
        p_values=np.array([tests[j].p_value for j in cat_idx]),
        n_users=design.n,
        alpha=alpha,
        warnings=list(fit.warnings),
        fit=fit,
    )


# -- OLS vs Poisson sweep --------------------------------------------------

DEFAULT_SWEEP_GRID = tuple(round(0.006 + 0.003 * i, 3) for i in range(12))


@dataclass(frozen=True)
class SweepRow:
    true_ate: float
    ols_est: float
    glm_est: float
    ols_se: float
    glm_se: float
    ratio: float
    max_gap: float  # largest |olsEst - glmEst| over the replications
    replications: int

    def band(self, width: float = SWEEP_BAND) -> tuple[float, float, float, float]:
        return (self.ols_est - width * self.ols_se, self.ols_est + width * self.ols_se,
                self.glm_est - width * self.glm_se, self.glm_est + width * self.glm_se)


@dataclass
class SweepTable:
    rows: list[SweepRow]
    n_per_arm: int
    lambda0: float
    seed: int

    HEADER = ("trueATE", "olsEst", "glmEst", "olsSE", "glmSE", "ratio")

    def column(self, name: str) -> np.ndarray:
        attr = {"trueATE": "true_ate", "olsEst": "ols_est", "glmEst": "glm_est",
                "olsSE": "ols_se", "glmSE": "glm_se", "ratio": "ratio"}[name]
        return np.array([getattr(r, attr) for r in self.rows])

    def slope(self, which: str = "olsEst") -> float:
        """Least-squares slope of estimated on true ATE across the grid."""
        x, y = self.column("trueATE"), self.column(which)
        xc = x - x.mean()
        return float(xc @ (y - y.mean()) / (xc @ xc))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([repr(r.true_ate), repr(r.ols_est), repr(r.glm_est),
                            repr(r.ols_se), repr(r.glm_se), repr(r.ratio)])

    def bands_to_csv(self, path, width: float = SWEEP_BAND) -> None:
        """Plot-ready estimate +/- ``width`` SE bands for both estimators."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("trueATE", "estimator", "estimate", "lower", "upper", "band"))
            for r in self.rows:
                ol, ou, gl, gu = r.band(width)
                w.writerow([repr(r.true_ate), "OLS", repr(r.ols_est), repr(ol), repr(ou), f"+/-{width:g}SE"])
                w.writerow([repr(r.true_ate), "GLM", repr(r.glm_est), repr(gl), repr(gu), f"+/-{width:g}SE"])

    def to_dict(self) -> dict:
        return {
            "nPerArm": self.n_per_arm,
            "lambda0": self.lambda0,
            "seed": self.seed,
            "rows": [
                {"trueATE": r.true_ate, "olsEst": r.ols_est, "glmEst": r.glm_est, "olsSE": r.ols_se,
                 "glmSE": r.glm_se, "ratio": r.ratio, "maxGap": r.max_gap, "replications": r.replications}
                for r in self.rows
            ],
        }


def _sweep_point(i: int, ate: float, n_per_arm: int, lambda0: float, seed: int,
                 replications: int, bounds: str) -> SweepRow:
    d = np.repeat([0.0, 1.0], n_per_arm)
    X = np.column_stack([np.ones(2 * n_per_arm), d])
    est = np.empty((replications, 4))
    for r in range(replications):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i, r))))
        y = np.concatenate([rng.poisson(lambda0, n_per_arm), rng.poisson(lambda0 + ate, n_per_arm)])
        design = DesignMatrix(X, y, (INTERCEPT, "treat"))
        ols = ols_fit(design)
        glm = poisson_ate(glm_fit(design, "poisson"), bounds=bounds, width=SWEEP_BAND)
        est[r] = (ols.coef("treat"), glm.ate, ols.se("treat"), glm.se)
    return SweepRow(
        true_ate=float(ate),
        ols_est=float(est[:, 0].mean()),
        glm_est=float(est[:, 1].mean()),
        ols_se=float(est[:, 2].mean()),
        glm_se=float(est[:, 3].mean()),
        ratio=float(np.mean(est[:, 2] / est[:, 3])),
        max_gap=float(np.max(np.abs(est[:, 0] - est[:, 1]))),
        replications=replications,
    )


def ols_vs_poisson_sweep(
    n_per_arm: int = 5000,
    lambda0: float = 0.35,
    ate_grid=DEFAULT_SWEEP_GRID,
    seed: int = 2016,
    replications: int = 1,
    bounds: str = "transform",
    threads: int = 1,
) -> SweepTable:
    """Compare OLS and Poisson-GLM treatment effects on two-arm Poisson data.

    Each grid point draws ``n_per_arm`` control and treated outcomes per
    replication.  Row values average over replications; ``ratio`` is the mean
    of the per-replication ``olsSE / glmSE``.  The GLM standard error is
    the half-width of the ``+/-2 SE`` band mapped to the ATE scale, divided
    by two.
    """
    if not lambda0 > 0:
        raise DomainError("lambda0 must be positive")
    if n_per_arm < 2 or replications < 1:
        raise DomainError("need at least two observations per arm and one replication")
    grid = sorted(float(a) for a in ate_grid)
    if any(lambda0 + a < 0 for a in grid):
        raise DomainError("lambda0 + ATE must be nonnegative at every grid point")
    # seed streams follow the caller's grid order, so sorting does not change draws
    index = {a: i for i, a in enumerate(float(a) for a in ate_grid)}
    args = [(index[a], a, n_per_arm, lambda0, seed, replications, bounds) for a in grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda a: _sweep_point(*a), args))
    else:
        rows = [_sweep_point(*a) for a in args]
    return SweepTable(rows, n_per_arm, lambda0, seed)


# -- uplift ----------------------------------------------------------------

@dataclass(frozen=True)
class UpliftProjection:
    ate: float
    se: float
    daily_sessions: float
    expected_daily_views: float
    ci95: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "ate": self.ate,
            "se": self.se,
            "dailySessions": self.daily_sessions,
            "expectedDailyViews": self.expected_daily_views,
            "ci95": list(self.ci95),
            "ciMultiplier": CI95_Z,
        }


def project_daily_uplift(ate: float, se: float, daily_sessions: float) -> UpliftProjection:
    """Extra product-page views per day implied by a per-session effect."""
    if not daily_sessions > 0:
        raise DomainError("dailySessions must be positive")
    if not se >= 0:
        raise DomainError("se must be nonnegative")
    return UpliftProjection(
        ate=float(ate),
        se=float(se),
        daily_sessions=float(daily_sessions),
        expected_daily_views=ate * daily_sessions,
        ci95=((ate - CI95_Z * se) * daily_sessions, (ate + CI95_Z * se) * daily_sessions),
    )
