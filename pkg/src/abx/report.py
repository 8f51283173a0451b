"""Aligned-text regression tables and JSON result documents."""

from __future__ import annotations

import json
import math

from scipy.stats import f as f_dist

from .analysis import (
    INTERCEPT,
    CombinedZoneResult,
    ModelResult,
    PlaceboReport,
    SweepTable,
    UpliftProjection,
    ZoneFits,
)
from .stats import CoefTest, stars

STAR_NOTE = "*p<0.1; **p<0.05; ***p<0.01"


def _fmt(x: float | None, digits: int) -> str:
    if x is None or not math.isfinite(x):
        return ""
    return f"{x:,.{digits}f}"


def _coef_rows(tests: list[CoefTest]) -> list[str]:
    labels = [t.label for t in tests if t.label != INTERCEPT]
    if any(t.label == INTERCEPT for t in tests):
        labels.append(INTERCEPT)
    return labels


def regression_table(title: str, columns: list[tuple[str, ModelResult]], digits: int = 3,
                     notes: list[str] | None = None) -> str:
    """Side-by-side models: estimate with stars over the SE in parentheses."""
    order: list[str] = []
    for _, res in columns:
        for lab in _coef_rows(res.tests):
            if lab not in order:
                order.append(lab)
    if INTERCEPT in order:
        order.remove(INTERCEPT)
        order.append(INTERCEPT)

    body: list[list[str]] = []
    for lab in order:
        est, se = [lab], [""]
        for _, res in columns:
            t = next((t for t in res.tests if t.label == lab), None)
            est.append("" if t is None else _fmt(t.estimate, digits) + t.stars)
            se.append("" if t is None else f"({_fmt(t.se, digits)})")
        body += [est, se]

    stats: list[list[str]] = []

    def stat(name, fn):
        stats.append([name] + [fn(res.fit) for _, res in columns])

    stat("Observations", lambda f: f"{f.n:,}")
    stat("R2", lambda f: _fmt(f.r_squared, 4))
    stat("Adjusted R2", lambda f: _fmt(f.adj_r_squared, 4))
    stat("Residual Std. Error",
         lambda f: "" if f.residual_se is None else f"{f.residual_se:.3f} (df = {f.n - f.k:,})")

    def fstat(f):
        if f.f_statistic is None:
            return ""
        p = float(f_dist.sf(f.f_statistic, *f.f_df))
        return f"{f.f_statistic:,.3f}{stars(p)} (df = {f.f_df[0]}; {f.f_df[1]:,})"

    stat("F Statistic", fstat)

    header = [""] + [name for name, _ in columns]
    rows = [header] + body + stats
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    width = sum(widths) + 3 * (len(widths) - 1)

    def line(r):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        return "   ".join(cells).rstrip()

    out = [title, "=" * width, line(header), "-" * width]
    out += [line(r) for r in body]
    out.append("-" * width)
    out += [line(r) for r in stats]
    out.append("=" * width)
    out.append(f"Note: {STAR_NOTE}")
    for n in notes or []:
        out.append(f"      {n}")
    return "\n".join(out) + "\n"


def _cov_note(res: ModelResult) -> str:
    if res.cov == "clustered":
        return "SEs clustered by anonyId (CR1); F statistic uses the classical covariance."
    return "Classical SEs."


def simple_block(res: ModelResult, digits: int = 3) -> str:
    return regression_table("Simple model: " + res.formula, [("(1)", res)], digits, [_cov_note(res)])


def full_block(res: ModelResult, simple: ModelResult | None = None, digits: int = 3) -> str:
    cols = [("(1)", simple), ("(2)", res)] if simple is not None else [("(1)", res)]
    notes = [_cov_note(res)]
    if res.dropped_rows:
        notes.append(f"{res.dropped_rows:,} sessions without an A/A category baseline dropped.")
    return regression_table("Covariate model: " + res.formula, cols, digits, notes)


def zone_block(fits: ZoneFits, digits: int = 3) -> str:
    cols = [(f"zone {z}", r) for z, r in sorted(fits.results.items())]
    notes = ["Each column refits the covariate model on one zone's sessions."]
    if cols:
        notes.append(_cov_note(cols[0][1]))
    for z, msg in sorted(fits.skipped.items()):
        notes.append(f"zone {z} skipped: {msg}")
    return regression_table("Zone models", cols, digits, notes)


def combined_block(comb: CombinedZoneResult, digits: int = 3) -> str:
    table = regression_table("Combined zone model: " + comb.result.formula, [("(1)", comb.result)], digits,
                             [_cov_note(comb.result), f"Reference zone: {comb.reference_zone}."])
    lines = ["Implied treatment effect by zone (treat + treat:zone)"]
    for z, t in sorted(comb.implied_tests().items()):
        lines.append(f"  zone {z:>3}   {_fmt(t.estimate, digits):>8}{t.stars:<3}  ({_fmt(t.se, digits)})")
    return table + "\n".join(lines) + "\n"


def double_block(res: ModelResult, full: ModelResult | None = None, digits: int = 3) -> str:
    cols = [("(1)", full), ("(2)", res)] if full is not None else [("(1)", res)]
    notes = [_cov_note(res), "No treat:isDoubleAssigned interaction is estimated."]
    return regression_table("Double-assignment model: " + res.formula, cols, digits, notes)


def placebo_text(rep: PlaceboReport) -> str:
    lines = [
        "Placebo test: treat ~ 1 + UA + categoryCountPerAnonyId (logistic)",
        f"  users                      {rep.n_users:,}",
        f"  category regressors (m)    {rep.m}",
        f"  significant at {rep.alpha:g}        {rep.n_significant} ({100 * rep.fraction_significant:.2f}%)",
        f"  Bonferroni threshold       {rep.threshold:.6f}",
        f"  smallest category p-value  {rep.p_values.min():.6f}",
        f"  verdict                    {rep.verdict}",
    ]
    lines += [f"  warning: {w}" for w in rep.warnings]
    return "\n".join(lines) + "\n"


def sweep_text(tab: SweepTable) -> str:
    head = f"{'True.ATE':>9} {'OLS.est':>9} {'GLM.est':>9} {'OLS.se':>8} {'GLM.se':>8} {'Ratio':>7}"
    lines = [f"OLS vs Poisson GLM: {tab.n_per_arm} per arm, lambda0 = {tab.lambda0:g}, "
             f"{tab.rows[0].replications if tab.rows else 0} replications", head]
    for r in tab.rows:
        lines.append(f"{r.true_ate:9.4f} {r.ols_est:9.4f} {r.glm_est:9.4f} "
                     f"{r.ols_se:8.4f} {r.glm_se:8.4f} {r.ratio:7.4f}")
    lines.append("GLM SE is the +/-2 SE band on the ATE scale divided by 4.")
    return "\n".join(lines) + "\n"


def uplift_text(up: UpliftProjection) -> str:
    lo, hi = up.ci95
    return (f"Expected daily uplift: {up.expected_daily_views:,.1f} views "
            f"(95% CI {lo:,.1f} to {hi:,.1f}; multiplier 1.959964) "
            f"from ATE {up.ate:g} (SE {up.se:g}) over {up.daily_sessions:,.1f} sessions/day\n")


def dumps(obj) -> str:
    """JSON with round-trip float repr and sorted keys for stable diffs."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
