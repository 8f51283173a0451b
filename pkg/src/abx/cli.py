"""Command-line pipeline: simulate, clean, baselines, validate, analyze, power, sweep, uplift.

Stages talk only through files.  Every command writes a run manifest
(``manifest_<command>.json``) into its output directory.

Exit status: 0 ok, 2 configuration or usage error, 3 I/O or input-format
error, 4 numerical or model error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import re
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, analysis, report
from .errors import (
    CalibrationError,
    ConfigError,
    DomainError,
    EmptyDataError,
    LogParseError,
    ModelError,
    PreconditionError,
    QueryStringError,
    TaxonomyError,
)
from .sessions import empty_session_frame, read_sessions_csv, write_sessions_csv
from .simulate import (
    calibrate_reassignment,
    config_section,
    default_config,
    format_config,
    generate_traffic,
    parse_config,
)
from .stats import PowerSpec, per_arm_n, power_required_n
from .taxonomy import CategoryBaseline, compute_category_baselines, default_taxonomy, load_taxonomy
from .weblog import (
    DEFAULT_BOT_AGENTS,
    DEFAULT_VOLUME_THRESHOLD,
    CleaningReport,
    detect_bots,
    flag_double_assignment,
    read_bot_list,
    read_log,
    reconstruct_sessions,
    write_log,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MODEL = 0, 2, 3, 4
WHICH = ("simple", "full", "zones", "combined", "doubleassigned", "all")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    row_counts: dict = field(default_factory=dict)
    version: str = __version__
    duration_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "configHash": self.config_hash,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "rowCounts": self.row_counts,
            "version": self.version,
            "durationSeconds": self.duration_seconds,
        }


class Context:
    """Resolved global options shared by every command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config_path = Path(args.config) if args.config else None
        self.config_text = self.config_path.read_text(encoding="utf-8") if self.config_path else ""
        self.config_hash = hashlib.sha256(self.config_text.encode("utf-8")).hexdigest()
        self.out = Path(args.out) if args.out else None
        self.threads = self._threads(args.threads)
        self.format = args.format or "text"
        self.section = config_section(self.config_text, args.command) if self.config_text else {}

    @staticmethod
    def _threads(flag) -> int:
        if flag is not None:
            n = flag
        else:
            env = os.environ.get("ABX_THREADS", "1")
            try:
                n = int(env)
            except ValueError:
                raise UsageError(f"ABX_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("thread count must be at least 1")
        return n

    def out_dir(self, fallback: Path | None = None) -> Path:
        d = self.out or fallback or Path(".")
        d.mkdir(parents=True, exist_ok=True)
        return d

    def opt(self, name: str, conv, default):
        """Flag value, else ``<command>.<camelName>`` from the config, else ``default``."""
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        key = re.sub(r"_([a-z])", lambda m: m.group(1).upper(), name)
        if key in self.section:
            try:
                return conv(self.section[key])
            except ValueError:
                raise ConfigError(f"bad value {self.section[key]!r} for {self.args.command}.{key}") from None
        return default

    def experiment_config(self):
        if self.config_path is None:
            cfg = default_config()
        else:
            cfg = parse_config(self.config_text, base_dir=self.config_path.parent)
        if self.args.seed is not None:
            cfg = replace(cfg, seed=self.args.seed)
        return cfg

    def write_manifest(self, manifest: RunManifest, out: Path, started: float) -> None:
        manifest.duration_seconds = round(time.perf_counter() - started, 3)
        path = out / f"manifest_{manifest.command}.json"
        path.write_text(report.dumps(manifest.to_dict()), encoding="utf-8")


def _emit(ctx: Context, text: str, obj) -> None:
    if ctx.format == "json":
        sys.stdout.write(report.dumps(obj))
    else:
        sys.stdout.write(text)


# -- commands ----------------------------------------------------------------

def cmd_simulate(ctx: Context) -> int:
    started = time.perf_counter()
    cfg = ctx.experiment_config()
    if ctx.args.n_users is not None:
        cfg = replace(cfg, n_users=ctx.args.n_users)
    cfg.validate()
    if ctx.args.calibrate:
        cfg = calibrate_reassignment(cfg)
    out = ctx.out_dir()
    traffic = generate_traffic(cfg, threads=ctx.threads)
    log_path = out / "log.ndjson"
    n = write_log(traffic.records(), log_path)
    (out / "config_resolved.txt").write_text(format_config(cfg), encoding="utf-8")
    counts = traffic.manifest()
    counts["written"] = n
    ctx.write_manifest(
        RunManifest("simulate", ctx.config_hash, cfg.seed,
                    inputs={"config": str(ctx.config_path) if ctx.config_path else None},
                    outputs={"log": str(log_path), "config": str(out / "config_resolved.txt")},
                    row_counts=counts),
        out, started)
    msg = (f"wrote {n:,} records ({counts['beacons']:,} beacons, {counts['clicks']:,} clicks) to {log_path}\n"
           f"cutover {cfg.cutover}\n")
    _emit(ctx, msg, {"records": n, "cutover": cfg.cutover, "counts": counts})
    return EXIT_OK


def _taxonomy(path):
    return load_taxonomy(path) if path else default_taxonomy()


def cmd_clean(ctx: Context) -> int:
    started = time.perf_counter()
    args = ctx.args
    log_path = Path(ctx.opt("log", str, "log.ndjson"))
    if not log_path.exists():
        raise FileNotFoundError(f"log file not found: {log_path}")
    taxonomy_path = ctx.opt("taxonomy", str, None)
    taxonomy = _taxonomy(taxonomy_path)
    cutover = ctx.opt("cutover", int, None)
    if cutover is None:
        cutover = ctx.experiment_config().cutover
    bots_path = ctx.opt("bots", str, None)
    agents = read_bot_list(bots_path) if bots_path else DEFAULT_BOT_AGENTS
    threshold = ctx.opt("volume_threshold", int, DEFAULT_VOLUME_THRESHOLD)
    out = ctx.out_dir(log_path.parent)

    verdict = detect_bots(read_log(log_path), agents, threshold)
    agent_of: dict[str, str] = {}

    def kept():
        for rec in read_log(log_path):
            if verdict.keeps(rec):
                agent_of.setdefault(rec.anony_id, rec.user_agent)
                yield rec

    sessions, sess_report = reconstruct_sessions(kept(), cutover, taxonomy)
    rep = CleaningReport.merge(verdict.report(), sess_report)

    ab = sessions[sessions["stage"] == "AB"]
    if len(ab):
        stats = flag_double_assignment(ab)
        reassign = stats.to_dict()
        flags = stats.flags
    else:
        reassign = {"fractionUsersDouble": 0.0, "fractionSessionsDouble": 0.0, "nUsers": 0,
                    "nSessions": 0, "nUsersDouble": 0}
        flags = pd.Series(dtype=np.int64)

    users = sorted(set(sessions["anonyId"]))
    users_frame = pd.DataFrame({
        "anonyId": users,
        "uaFamily": [analysis.ua_family(agent_of.get(u, "")) for u in users],
        "isDoubleAssigned": [int(flags.get(u, 0)) for u in users],
    }, columns=["anonyId", "uaFamily", "isDoubleAssigned"])

    paths = {
        "sessions": out / "sessions.csv",
        "cleaningReport": out / "cleaning_report.json",
        "reassignment": out / "reassignment.json",
        "users": out / "users.csv",
    }
    write_sessions_csv(sessions if len(sessions) else empty_session_frame(), paths["sessions"])
    paths["cleaningReport"].write_text(report.dumps(rep.to_dict()), encoding="utf-8")
    paths["reassignment"].write_text(report.dumps(reassign), encoding="utf-8")
    users_frame.to_csv(paths["users"], index=False, lineterminator="\n")
    counts = {
        "recordsRead": rep.records_read,
        "sessions": len(sessions),
        "sessionsAA": int((sessions["stage"] == "AA").sum()),
        "sessionsAB": int(len(ab)),
        "users": len(users),
    }
    ctx.write_manifest(
        RunManifest("clean", ctx.config_hash, None,
                    inputs={"log": str(log_path), "taxonomy": taxonomy_path, "bots": bots_path,
                            "cutover": cutover},
                    outputs={k: str(v) for k, v in paths.items()}, row_counts=counts),
        out, started)
    text = (f"read {rep.records_read:,} records; removed {rep.declared_bot_records:,} declared-bot and "
            f"{rep.heuristic_bot_records:,} heuristic-bot records, {rep.orphan_clicks:,} orphan clicks\n"
            f"wrote {len(sessions):,} sessions to {paths['sessions']}\n"
            f"double-assigned: {reassign['fractionUsersDouble']:.4f} of users, "
            f"{reassign['fractionSessionsDouble']:.4f} of sessions\n")
    _emit(ctx, text, {"cleaning": rep.to_dict(), "reassignment": reassign})
    return EXIT_OK


def _sessions(ctx: Context) -> Path:
    path = Path(ctx.opt("sessions", str, "sessions.csv"))
    if not path.exists():
        raise FileNotFoundError(f"sessions file not found: {path}")
    return path


def cmd_baselines(ctx: Context) -> int:
    started = time.perf_counter()
    path = _sessions(ctx)
    frame = read_sessions_csv(path)
    aa = frame[frame["stage"] == "AA"]
    pooled = bool(ctx.args.pooled_baseline)
    base = compute_category_baselines(aa, pooled=pooled)
    out = ctx.out_dir(path.parent)
    target = out / "baselines.csv"
    base.to_csv(target)
    ctx.write_manifest(
        RunManifest("baselines", ctx.config_hash, None, inputs={"sessions": str(path), "pooled": pooled},
                    outputs={"baselines": str(target)},
                    row_counts={"sessionsAA": len(aa), "categories": len(base)}),
        out, started)
    _emit(ctx, f"wrote {len(base)} category baselines from {len(aa):,} A/A sessions to {target}\n",
          {"categories": len(base), "baselines": {str(k): v for k, v in sorted(base.rates.items())}})
    return EXIT_OK


def cmd_validate(ctx: Context) -> int:
    started = time.perf_counter()
    path = _sessions(ctx)
    frame = read_sessions_csv(path)
    users_path = ctx.opt("users", str, None)
    if users_path is None and (path.parent / "users.csv").exists():
        users_path = str(path.parent / "users.csv")
    families = None
    if users_path:
        users = pd.read_csv(users_path, dtype={"anonyId": str, "uaFamily": str}, keep_default_na=False)
        families = dict(zip(users["anonyId"], users["uaFamily"]))
    rep = analysis.placebo_test(frame, families, alpha=ctx.opt("alpha", float, 0.05))
    out = ctx.out_dir(path.parent)
    target = out / "placebo.json"
    target.write_text(report.dumps(rep.to_dict()), encoding="utf-8")
    ctx.write_manifest(
        RunManifest("validate", ctx.config_hash, None, inputs={"sessions": str(path), "users": users_path},
                    outputs={"placebo": str(target)},
                    row_counts={"users": rep.n_users, "categories": rep.m}),
        out, started)
    _emit(ctx, report.placebo_text(rep), rep.to_dict())
    return EXIT_OK


def _model(name, fn, *a):
    try:
        return fn(*a)
    except (ModelError, EmptyDataError, DomainError, PreconditionError) as exc:
        raise ModelError(f"model {name}: {exc}") from exc


def cmd_analyze(ctx: Context) -> int:
    started = time.perf_counter()
    which = ctx.opt("which", str, "all")
    if which not in WHICH:
        raise UsageError(f"--which must be one of {', '.join(WHICH)}")
    path = _sessions(ctx)
    baselines_path = ctx.opt("baselines", str, None)
    needs_baselines = which != "simple"
    baselines = None
    if needs_baselines:
        if baselines_path is None or not Path(baselines_path).exists():
            raise UsageError(f"analyze --which {which} needs category baselines; "
                             "run `abx baselines` first and pass --baselines")
        baselines = CategoryBaseline.from_csv(baselines_path)
    taxonomy_path = ctx.opt("taxonomy", str, None)
    taxonomy = _taxonomy(taxonomy_path)
    frame = read_sessions_csv(path)
    ab = frame[frame["stage"] == "AB"]
    if len(ab) == 0:
        raise ModelError("no A/B sessions to analyze")

    blocks: list[str] = []
    results: dict = {}
    simple = full = None
    if which in ("simple", "full", "all"):
        simple = _model("simple", analysis.fit_simple_model, ab)
        results["simple"] = simple.to_dict()
        means = ab.groupby("treat")["clicks"].mean()
        results["armMeans"] = {str(int(k)): float(v) for k, v in means.items()}
        if which != "full":
            blocks.append(report.simple_block(simple))
    if which in ("full", "doubleassigned", "all"):
        full = _model("full", analysis.fit_full_model, ab, baselines)
        results["full"] = full.to_dict()
        if which != "doubleassigned":
            blocks.append(report.full_block(full, simple))
    if which in ("zones", "all"):
        zones = _model("zones", analysis.fit_zone_models, ab, baselines, taxonomy, ctx.threads)
        results["zones"] = zones.to_dict()
        blocks.append(report.zone_block(zones))
    if which in ("combined", "all"):
        comb = _model("combined", analysis.fit_combined_zone_model, ab, baselines, taxonomy)
        results["combined"] = comb.to_dict()
        blocks.append(report.combined_block(comb))
    if which in ("doubleassigned", "all"):
        stats = _model("doubleassigned", flag_double_assignment, ab)
        dbl = _model("doubleassigned", analysis.fit_double_assigned_model, ab, baselines, stats)
        results["doubleassigned"] = dbl.to_dict()
        results["reassignment"] = stats.to_dict()
        blocks.append(report.double_block(dbl, full))

    out = ctx.out_dir(path.parent)
    target = out / f"analysis_{which}.json"
    target.write_text(report.dumps(results), encoding="utf-8")
    ctx.write_manifest(
        RunManifest("analyze", ctx.config_hash, None,
                    inputs={"sessions": str(path), "baselines": baselines_path, "taxonomy": taxonomy_path,
                            "which": which},
                    outputs={"results": str(target)},
                    row_counts={"sessions": len(frame), "sessionsAB": len(ab)}),
        out, started)
    _emit(ctx, "\n".join(blocks), results)
    return EXIT_OK


def cmd_power(ctx: Context) -> int:
    started = time.perf_counter()
    spec = PowerSpec(
        baseline_mean=ctx.opt("baseline", float, 0.32),
        outcome_sd=ctx.opt("sd", float, 0.766),
        relative_effect=ctx.opt("effect", float, 0.03),
        alpha=ctx.opt("alpha", float, 0.05),
        power=ctx.opt("power", float, 0.99),
    )
    total = power_required_n(spec)
    per_arm = per_arm_n(spec)
    result = {"baselineMean": spec.baseline_mean, "outcomeSD": spec.outcome_sd,
              "relativeEffect": spec.relative_effect, "alpha": spec.alpha, "power": spec.power,
              "delta": spec.delta, "perArmExact": per_arm, "total": total}
    if ctx.out is not None:
        out = ctx.out_dir()
        (out / "power.json").write_text(report.dumps(result), encoding="utf-8")
        ctx.write_manifest(RunManifest("power", ctx.config_hash, None, outputs={"power": str(out / "power.json")},
                                       row_counts={"total": total}), out, started)
    text = (f"detectable effect delta = {spec.delta:.6g} clicks/session\n"
            f"per arm: {per_arm:,.1f} -> total listing sessions required: {total:,}\n")
    _emit(ctx, text, result)
    return EXIT_OK


def _grid(text: str) -> tuple[float, ...]:
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return tuple(round(lo + i * step, 12) for i in range(n))
    return tuple(float(v) for v in text.split(",") if v.strip())


def cmd_sweep(ctx: Context) -> int:
    started = time.perf_counter()
    seed = ctx.opt("seed", int, 2016)
    table = analysis.ols_vs_poisson_sweep(
        n_per_arm=ctx.opt("n_per_arm", int, 5000),
        lambda0=ctx.opt("lambda0", float, 0.35),
        ate_grid=ctx.opt("grid", _grid, analysis.DEFAULT_SWEEP_GRID),
        seed=seed,
        replications=ctx.opt("replications", int, 200),
        bounds=ctx.opt("bounds", str, "transform"),
        threads=ctx.threads,
    )
    out = ctx.out_dir()
    paths = {"table": out / "sweep.csv", "bands": out / "sweep_bands.csv"}
    table.to_csv(paths["table"])
    table.bands_to_csv(paths["bands"])
    ctx.write_manifest(RunManifest("sweep", ctx.config_hash, seed,
                                   outputs={k: str(v) for k, v in paths.items()},
                                   row_counts={"gridPoints": len(table.rows)}), out, started)
    if ctx.format == "csv":
        sys.stdout.write(paths["table"].read_text(encoding="utf-8"))
    else:
        _emit(ctx, report.sweep_text(table), table.to_dict())
    return EXIT_OK


def cmd_uplift(ctx: Context) -> int:
    started = time.perf_counter()
    up = analysis.project_daily_uplift(
        ctx.opt("ate", float, 0.011), ctx.opt("se", float, 0.002), ctx.opt("daily_sessions", float, 115285.5))
    if ctx.out is not None:
        out = ctx.out_dir()
        (out / "uplift.json").write_text(report.dumps(up.to_dict()), encoding="utf-8")
        ctx.write_manifest(RunManifest("uplift", ctx.config_hash, None, outputs={"uplift": str(out / "uplift.json")}),
                           out, started)
    _emit(ctx, report.uplift_text(up), up.to_dict())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "baselines": cmd_baselines,
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "power": cmd_power,
    "sweep": cmd_sweep,
    "uplift": cmd_uplift,
}


# -- argument parsing ----------------------------------------------------------

def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=d, help="flat key=value config file")
    g.add_argument("--seed", type=int, default=d, help="random seed (overrides sim.seed)")
    g.add_argument("--threads", type=int, default=d, help="worker threads (fallback: $ABX_THREADS, then 1)")
    g.add_argument("--out", default=d, help="output directory")
    g.add_argument("--format", choices=("text", "json", "csv"), default=d, help="standard-output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abx", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"abx {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p, suppress=True)
        return p

    p = add("simulate", "generate a synthetic A/A + A/B web log (NDJSON)")
    p.add_argument("--n-users", type=int, help="override sim.nUsers")
    p.add_argument("--calibrate", action="store_true",
                   help="bisect the visit rate so about 22%% of users are double-assigned")

    p = add("clean", "remove bots and orphan clicks, rebuild listing sessions, flag double assignment")
    p.add_argument("--log", help="NDJSON log (default log.ndjson)")
    p.add_argument("--taxonomy", help="taxonomy CSV (default: bundled 252-category fixture)")
    p.add_argument("--cutover", type=int, help="A/B start, epoch ms (default: from --config or defaults)")
    p.add_argument("--bots", help="declared-bot user-agent list, one substring per line")
    p.add_argument("--volume-threshold", type=int, help=f"heuristic bot record threshold "
                                                        f"(default {DEFAULT_VOLUME_THRESHOLD})")

    p = add("baselines", "per-category A/A click rates (catClickRateAA)")
    p.add_argument("--sessions", help="sessions CSV (default sessions.csv)")
    p.add_argument("--pooled-baseline", action="store_true",
                   help="pool all sessions of a category instead of averaging user means")

    p = add("validate", "placebo randomization test on A/A sessions")
    p.add_argument("--sessions", help="sessions CSV (default sessions.csv)")
    p.add_argument("--users", help="users CSV with uaFamily (default: users.csv beside the sessions)")
    p.add_argument("--alpha", type=float, help="per-test level (default 0.05)")

    p = add("analyze", "treatment-effect regression tables")
    p.add_argument("--sessions", help="sessions CSV (default sessions.csv)")
    p.add_argument("--baselines", help="baselines CSV from `abx baselines`")
    p.add_argument("--taxonomy", help="taxonomy CSV (default: bundled fixture)")
    p.add_argument("--which", choices=WHICH, help="model family to fit (default all)")

    p = add("power", "total sample size for a two-arm z-test")
    p.add_argument("--baseline", type=float, help="control mean, clicks/session (default 0.32)")
    p.add_argument("--sd", type=float, help="outcome standard deviation (default 0.766)")
    p.add_argument("--effect", type=float, help="relative effect to detect (default 0.03)")
    p.add_argument("--alpha", type=float, help="two-sided level (default 0.05)")
    p.add_argument("--power", type=float, help="power (default 0.99)")

    p = add("sweep", "OLS vs Poisson GLM ATE and SE comparison")
    p.add_argument("--n-per-arm", type=int, help="observations per arm (default 5000)")
    p.add_argument("--lambda0", type=float, help="control Poisson rate (default 0.35)")
    p.add_argument("--grid", type=_grid, help="ATE grid: comma list or lo:hi:step (default 0.006:0.039:0.003)")
    p.add_argument("--replications", type=int, help="replications per grid point (default 200)")
    p.add_argument("--bounds", choices=("transform", "delta"), help="GLM SE method (default transform)")

    p = add("uplift", "project a per-session effect to daily product-page views")
    p.add_argument("--ate", type=float, help="effect per listing session (default 0.011)")
    p.add_argument("--se", type=float, help="standard error of the effect (default 0.002)")
    p.add_argument("--daily-sessions", type=float, help="listing sessions per day (default 115285.5)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except (UsageError, ConfigError, TaxonomyError, CalibrationError) as exc:
        print(f"abx {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, LogParseError, QueryStringError) as exc:
        print(f"abx {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ModelError, EmptyDataError, DomainError, PreconditionError) as exc:
        print(f"abx {args.command}: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        # malformed CSV inputs surface from pandas and the readers as ValueError
        print(f"abx {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
