"""Synthetic A/A + A/B web-log traffic with known ground truth.

Each human user gets a log-normal usage intensity, an active window inside
the study period, and a visit count ``1 + Poisson(rate * days * intensity)``
with visit times uniform over the window.  Every visit is one listing
session.  The ``treat`` cookie is drawn at the first visit and redrawn at the
first visit after it expires, which is how users end up in both arms.

Clicks per session are ``Poisson(lambda_cat * h_user + treat * ate_zone)`` in
the A/B stage and ``Poisson(lambda_cat * h_user)`` in the A/A stage, where
``h_user = intensity ** usage_coupling`` rescaled to a session-weighted mean
of one.  With ``usage_coupling = 0`` the rate is exactly
``lambda_cat + treat * ate_zone``.

Random streams are split per block of ``chunk_size`` users (and per bot), so
the output does not depend on how many worker threads generate the blocks.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .errors import CalibrationError, ConfigError, DomainError
from .sessions import SESSION_COLUMNS
from .taxonomy import Taxonomy, default_taxonomy, load_taxonomy
from .weblog import RecordKind, WebLogRecord, flag_double_assignment

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS
# 2016-04-01 00:00 Hong Kong time
DEFAULT_START = 1_459_440_000_000

DEFAULT_ZONE_ATE = {2: -0.012, 3: 0.011, 4: 0.012, 6: 0.029}
DEFAULT_ZONE_SHARE = {2: 0.13, 3: 0.11, 4: 0.35, 6: 0.25}
CONTROL_MEAN = 0.305
LAMBDA_SPREAD = 0.33
DEFAULT_PAGE_PROBS = (0.45, 0.2, 0.1, 0.07, 0.05, 0.04, 0.03, 0.025, 0.02, 0.015)

USER_AGENTS = (
    ("Mozilla/5.0 (Windows NT 10.0; WOW64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/49.0.2623.112 Safari/537.36", 0.38),
    ("Mozilla/5.0 (iPhone; CPU iPhone OS 9_3 like Mac OS X) AppleWebKit/601.1.46 (KHTML, like Gecko) Version/9.0 Mobile/13E233 Safari/601.1", 0.22),
    ("Mozilla/5.0 (Windows NT 6.1; Trident/7.0; rv:11.0) like Gecko", 0.1),
    ("Mozilla/5.0 (Windows NT 6.1; WOW64; rv:45.0) Gecko/20100101 Firefox/45.0", 0.08),
    ("Mozilla/5.0 (Linux; Android 5.1.1; SAMSUNG SM-G9250 Build/LMY47X) AppleWebKit/537.36 (KHTML, like Gecko) SamsungBrowser/4.0 Chrome/44.0.2403.133 Mobile Safari/537.36", 0.07),
    ("Mozilla/5.0 (Macintosh; Intel Mac OS X 10_11_4) AppleWebKit/601.5.17 (KHTML, like Gecko) Version/9.1 Safari/601.5.17", 0.07),
    ("Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/46.0.2486.0 Safari/537.36 Edge/13.10586", 0.05),
    ("Mozilla/5.0 (Windows NT 6.1; WOW64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/49.0.2623.87 Safari/537.36 OPR/36.0.2130.46", 0.03),
)
DECLARED_BOT_AGENTS = (
    "Mozilla/5.0 (compatible; Googlebot/2.1; +http://www.google.com/bot.html)",
    "Mozilla/5.0 (compatible; bingbot/2.0; +http://www.bing.com/bingbot.htm)",
    "Mozilla/5.0 (compatible; Baiduspider/2.0; +http://www.baidu.com/search/spider.html)",
)
SPOOFED_BOT_AGENT = USER_AGENTS[0][0]

# share of visits that go to one of the user's favourite categories
FAVORITE_PROB = 0.6

# bot kinds in the ground-truth tables
HUMAN, DECLARED_BOT, HEURISTIC_BOT = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    category_lambda: dict
    category_weight: dict
    zone_ate: dict
    seed: int = 2016
    n_users: int = 170_000
    aa_days: int = 5
    ab_days: int = 20
    start: int = DEFAULT_START
    visit_rate: float = 0.25
    visit_sigma: float = 1.5
    span_mean_hours: float = 300.0
    max_visits: int = 2000
    cookie_expiry_hours: float = 90.0
    assign_prob: float = 0.5
    bot_fraction: float = 0.0002
    bot_pages: int = 360
    logged_in_prob: float = 0.1
    orphan_prob: float = 0.002
    usage_coupling: float = 0.1
    full_page_prob: float = 0.85
    page_probs: tuple = DEFAULT_PAGE_PROBS
    items_per_page_max: int = 15
    chunk_size: int = 8192
    taxonomy_path: str | None = None

    @property
    def cutover(self) -> int:
        return self.start + self.aa_days * DAY_MS

    @property
    def end(self) -> int:
        return self.start + (self.aa_days + self.ab_days) * DAY_MS

    def taxonomy(self) -> Taxonomy:
        return load_taxonomy(self.taxonomy_path) if self.taxonomy_path else default_taxonomy()

    def validate(self, taxonomy: Taxonomy | None = None) -> None:
        taxonomy = taxonomy or self.taxonomy()
        if self.n_users < 1:
            raise ConfigError("nUsers must be positive")
        if self.aa_days < 1 or self.ab_days < 1:
            raise ConfigError("aaDays and abDays must be positive")
        if not self.cookie_expiry_hours > 0:
            raise ConfigError("cookieExpiryHours must be positive")
        for name in ("assign_prob", "bot_fraction", "logged_in_prob", "orphan_prob", "full_page_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.visit_rate < 0 or self.visit_sigma < 0 or not self.span_mean_hours > 0:
            raise ConfigError("visit parameters must be nonnegative (span mean positive)")
        if self.max_visits < 1 or self.bot_pages < 1 or self.chunk_size < 1:
            raise ConfigError("maxVisits, botPages and chunkSize must be positive")
        if self.items_per_page_max != 15:
            raise ConfigError("itemsPerPageMax is fixed at 15")
        probs = np.asarray(self.page_probs, dtype=float)
        if probs.size == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigError("page probabilities must be nonnegative and sum to 1")
        zone_ids = set(taxonomy.zone_ids)
        unknown = set(self.zone_ate) - zone_ids
        if unknown:
            raise ConfigError(f"ATE given for unknown zones {sorted(unknown)}")
        weights = []
        for cat in taxonomy.categories:
            lam = self.category_lambda.get(cat.category_id)
            if lam is None:
                raise ConfigError(f"no lambda for category {cat.category_id}")
            if lam < 0:
                raise ConfigError(f"category {cat.category_id} has negative lambda {lam}")
            ate = self.zone_ate.get(cat.zone_id, 0.0)
            if lam + ate < 0:
                raise ConfigError(
                    f"zone {cat.zone_id}: lambda + ATE = {lam} + {ate} < 0 for category {cat.category_id}"
                )
            w = self.category_weight.get(cat.category_id, 0.0)
            if w < 0:
                raise ConfigError(f"category {cat.category_id} has negative weight")
            weights.append(w)
        if sum(weights) <= 0:
            raise ConfigError("category weights sum to zero")


def default_category_weights(taxonomy: Taxonomy, zone_share: dict | None = None) -> dict[int, float]:
    """Traffic share per category: fixed zone shares, Zipf(0.5) within zones."""
    zone_share = dict(DEFAULT_ZONE_SHARE if zone_share is None else zone_share)
    rest = [z for z in taxonomy.zone_ids if z not in zone_share]
    left = max(0.0, 1.0 - sum(zone_share.get(z, 0.0) for z in taxonomy.zone_ids))
    for z in rest:
        zone_share[z] = left / len(rest)
    weights = {}
    for z in taxonomy.zone_ids:
        cats = taxonomy.categories_in(z)
        raw = np.array([1.0 / math.sqrt(i + 1) for i in range(len(cats))])
        raw *= zone_share.get(z, 0.0) / raw.sum()
        for c, w in zip(cats, raw):
            weights[c.category_id] = float(w)
    total = sum(weights.values())
    return {c: w / total for c, w in weights.items()}


def default_category_lambdas(weights: dict[int, float], mean: float = CONTROL_MEAN,
                             spread: float = LAMBDA_SPREAD, seed: int = 20160406) -> dict[int, float]:
    """Per-category control rates with traffic-weighted mean ``mean``."""
    cats = sorted(weights)
    w = np.array([weights[c] for c in cats])
    z = np.clip(np.random.default_rng(seed).standard_normal(len(cats)), -2.5, 2.5)
    z -= np.sum(w * z) / w.sum()
    z /= math.sqrt(np.sum(w * z * z) / w.sum())
    lam = mean * (1.0 + spread * z)
    return {c: float(v) for c, v in zip(cats, lam)}


def default_config(taxonomy: Taxonomy | None = None, **overrides) -> ExperimentConfig:
    taxonomy = taxonomy or default_taxonomy()
    weights = default_category_weights(taxonomy)
    lambdas = default_category_lambdas(weights)
    ates = {z: DEFAULT_ZONE_ATE.get(z, 0.0) for z in taxonomy.zone_ids}
    cfg = ExperimentConfig(category_lambda=lambdas, category_weight=weights, zone_ate=ates, **overrides)
    return cfg


# -- config files ----------------------------------------------------------

_SIM_KEYS = {
    "seed": ("seed", int),
    "nUsers": ("n_users", int),
    "aaDays": ("aa_days", int),
    "abDays": ("ab_days", int),
    "start": ("start", int),
    "visitRate": ("visit_rate", float),
    "visitRatePerUserPerDay": ("visit_rate", float),
    "visitSigma": ("visit_sigma", float),
    "spanMeanHours": ("span_mean_hours", float),
    "maxVisits": ("max_visits", int),
    "cookieExpiryHours": ("cookie_expiry_hours", float),
    "assignProb": ("assign_prob", float),
    "botFraction": ("bot_fraction", float),
    "botPages": ("bot_pages", int),
    "loggedInProb": ("logged_in_prob", float),
    "orphanProb": ("orphan_prob", float),
    "usageCoupling": ("usage_coupling", float),
    "fullPageProb": ("full_page_prob", float),
    "itemsPerPageMax": ("items_per_page_max", int),
    "chunkSize": ("chunk_size", int),
}


# per-command option sections read by the command-line front end
COMMAND_SECTIONS = ("clean", "baselines", "validate", "analyze", "power", "sweep", "uplift")


def config_section(text: str, section: str) -> dict[str, str]:
    """``section.<name>=value`` entries of a config file, keyed by ``<name>``."""
    return {key.split(".", 1)[1]: value for _, key, value in _parse_lines(text)
            if key.startswith(section + ".")}


def _as_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        v = float(text)
        if not v.is_integer():
            raise
        return int(v)


def _parse_lines(text: str) -> list[tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected key=value")
        out.append((lineno, key.strip(), value.strip()))
    return out


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from flat ``dotted.key=value`` lines over the defaults.

    Recognised keys: ``sim.<name>`` for scalar settings (``sim.nUsers``,
    ``sim.cookieExpiryHours``, ``sim.taxonomy`` ...), ``sim.lambdaAll`` and
    ``sim.ateAll`` to set every category rate / zone effect at once,
    ``cat.<id>.lambda``, ``cat.<id>.weight``, ``zone.<id>.ate`` and
    ``page.<n>.prob``.  Keys under a command section (``sweep.*`` ...) are
    left for :func:`config_section`.
    """
    entries = _parse_lines(text)
    taxonomy_path = None
    for lineno, key, value in entries:
        if key == "sim.taxonomy":
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            taxonomy_path = str(p)
    try:
        taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else default_taxonomy()
    except OSError as exc:
        raise ConfigError(f"cannot read taxonomy: {exc}") from None
    cfg = default_config(taxonomy, taxonomy_path=taxonomy_path)
    scalars: dict = {}
    lambdas = dict(cfg.category_lambda)
    weights = dict(cfg.category_weight)
    ates = dict(cfg.zone_ate)
    pages: dict[int, float] = {}
    for lineno, key, value in entries:
        parts = key.split(".")
        try:
            if key == "sim.taxonomy" or parts[0] in COMMAND_SECTIONS:
                continue
            if parts[0] == "sim" and len(parts) == 2 and parts[1] in _SIM_KEYS:
                name, conv = _SIM_KEYS[parts[1]]
                scalars[name] = _as_int(value) if conv is int else float(value)
            elif key == "sim.lambdaAll":
                lambdas = {c: float(value) for c in lambdas}
            elif key == "sim.ateAll":
                ates = {z: float(value) for z in ates}
            elif parts[0] == "cat" and len(parts) == 3 and parts[2] in ("lambda", "weight"):
                target = lambdas if parts[2] == "lambda" else weights
                target[int(parts[1])] = float(value)
            elif parts[0] == "zone" and len(parts) == 3 and parts[2] == "ate":
                ates[int(parts[1])] = float(value)
            elif parts[0] == "page" and len(parts) == 3 and parts[2] == "prob":
                pages[int(parts[1])] = float(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    if pages:
        top = max(pages)
        scalars["page_probs"] = tuple(pages.get(i, 0.0) for i in range(1, top + 1))
    cfg = replace(cfg, category_lambda=lambdas, category_weight=weights, zone_ate=ates, **scalars)
    cfg.validate(taxonomy)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def format_config(cfg: ExperimentConfig) -> str:
    """Serialise ``cfg`` back to the flat key=value format."""
    lines = []
    inverse = {}
    for key, (name, _) in _SIM_KEYS.items():
        inverse.setdefault(name, key)
    for f in fields(cfg):
        if f.name in inverse:
            lines.append(f"sim.{inverse[f.name]}={getattr(cfg, f.name)!r}")
    if cfg.taxonomy_path:
        lines.append(f"sim.taxonomy={cfg.taxonomy_path}")
    for i, p in enumerate(cfg.page_probs, start=1):
        lines.append(f"page.{i}.prob={p!r}")
    for z in sorted(cfg.zone_ate):
        lines.append(f"zone.{z}.ate={cfg.zone_ate[z]!r}")
    for c in sorted(cfg.category_lambda):
        lines.append(f"cat.{c}.lambda={cfg.category_lambda[c]!r}")
    for c in sorted(cfg.category_weight):
        lines.append(f"cat.{c}.weight={cfg.category_weight[c]!r}")
    return "\n".join(lines) + "\n"


# -- sampling --------------------------------------------------------------

def sample_poisson(lam, rng: np.random.Generator, size=None):
    """Poisson draw(s) with rate ``lam``; raises :class:`DomainError` for ``lam < 0``."""
    arr = np.asarray(lam, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"Poisson rate must be nonnegative, got {lam}")
    return rng.poisson(arr, size=size)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def anony_id(seed: int, uid: int) -> str:
    return hashlib.blake2b(f"{seed}:{uid}".encode(), digest_size=8).hexdigest()


def _visit_times(cfg: ExperimentConfig, rng: np.random.Generator, n: int):
    """Intensity, visit owner, visits per user and sorted visit timestamps."""
    total_h = (cfg.aa_days + cfg.ab_days) * 24.0
    sigma = cfg.visit_sigma
    intensity = rng.lognormal(-sigma * sigma / 2.0, sigma, n)
    arrive = rng.uniform(0.0, total_h, n)
    span = np.minimum(rng.exponential(cfg.span_mean_hours, n), total_h - arrive)
    n_visits = np.minimum(1 + rng.poisson(cfg.visit_rate * (cfg.aa_days + cfg.ab_days) * intensity),
                          cfg.max_visits)
    user = np.repeat(np.arange(n), n_visits)
    total = int(n_visits.sum())
    u = rng.random(total)
    u[np.cumsum(n_visits) - n_visits] = 0.0  # first visit opens the active span
    t_hours = arrive[user] + span[user] * u
    t_hours = t_hours[np.lexsort((t_hours, user))]
    ts = cfg.start + np.floor(t_hours * HOUR_MS).astype(np.int64)
    return intensity, user, n_visits, ts


_SCALE_CACHE: dict = {}


def coupling_scale(cfg: ExperimentConfig, probe_users: int = 200_000) -> float:
    """Normaliser making ``intensity**coupling`` average one over A/B sessions.

    Heavy users place relatively more of their visits after the cutover, so
    the moment is taken over a fixed-seed probe of the visit process rather
    than in closed form.  It is exactly one without coupling.
    """
    g = cfg.usage_coupling
    if g == 0:
        return 1.0
    key = (g, cfg.visit_rate, cfg.visit_sigma, cfg.span_mean_hours, cfg.max_visits, cfg.aa_days, cfg.ab_days)
    if key not in _SCALE_CACHE:
        probe = replace(cfg, start=0)
        intensity, user, _, ts = _visit_times(probe, _stream(0x5EED, 3), probe_users)
        ab = ts >= probe.cutover
        h = intensity[user[ab]] ** g
        _SCALE_CACHE[key] = 1.0 / float(h.mean()) if h.size else 1.0
    return _SCALE_CACHE[key]


@dataclass
class _Tables:
    """Columnar model of the generated traffic (one row per session / click)."""

    cat_ids: np.ndarray
    cat_zone: np.ndarray
    cat_lambda: np.ndarray
    cat_weight: np.ndarray
    zone_ate_by_cat: np.ndarray
    ua_strings: tuple
    ua_weights: np.ndarray


def _tables(cfg: ExperimentConfig, taxonomy: Taxonomy) -> _Tables:
    cats = taxonomy.categories
    w = np.array([cfg.category_weight.get(c.category_id, 0.0) for c in cats])
    return _Tables(
        cat_ids=np.array([c.category_id for c in cats], dtype=np.int64),
        cat_zone=np.array([c.zone_id for c in cats], dtype=np.int64),
        cat_lambda=np.array([cfg.category_lambda[c.category_id] for c in cats]),
        cat_weight=w / w.sum(),
        zone_ate_by_cat=np.array([cfg.zone_ate.get(c.zone_id, 0.0) for c in cats]),
        ua_strings=tuple(u for u, _ in USER_AGENTS),
        ua_weights=np.array([p for _, p in USER_AGENTS]) / sum(p for _, p in USER_AGENTS),
    )


def _human_chunk(cfg: ExperimentConfig, tab: _Tables, chunk: int, lo: int, hi: int) -> dict:
    rng = _stream(cfg.seed, 0, chunk)
    n = hi - lo
    intensity, user, n_visits, ts = _visit_times(cfg, rng, n)
    total = len(ts)
    login = (rng.random(n) < cfg.logged_in_prob).astype(np.int64)
    ua = rng.choice(len(tab.ua_strings), size=n, p=tab.ua_weights)
    n_fav = rng.choice(3, size=n, p=(0.5, 0.3, 0.2)) + 1
    favs = rng.choice(len(tab.cat_ids), size=(n, 3), p=tab.cat_weight)
    h = intensity ** cfg.usage_coupling * coupling_scale(cfg)

    assign_u = rng.random(total)
    fav_pick = rng.integers(0, n_fav[user])
    browse_u = rng.random(total)
    browse_cat = rng.choice(len(tab.cat_ids), size=total, p=tab.cat_weight)
    page = rng.choice(len(cfg.page_probs), size=total, p=np.asarray(cfg.page_probs) / sum(cfg.page_probs)) + 1
    full = rng.random(total) < cfg.full_page_prob
    short = rng.integers(1, cfg.items_per_page_max, size=total)
    items = np.where(full, cfg.items_per_page_max, short)
    pixel_delay = rng.integers(50, 1500, size=total)
    orphan_u = rng.random(total)

    # cookie epochs: a new draw at the first visit and after every expiry
    expiry_ms = cfg.cookie_expiry_hours * HOUR_MS
    starts = np.zeros(total, dtype=bool)
    prev_user = -1
    t0 = 0
    for i, (uu, tt) in enumerate(zip(user.tolist(), ts.tolist())):
        if uu != prev_user or tt - t0 > expiry_ms:
            starts[i] = True
            prev_user = uu
            t0 = tt
    epoch = np.cumsum(starts) - 1
    treat = (assign_u[starts] < cfg.assign_prob).astype(np.int64)[epoch]

    cat_idx = np.where(browse_u < FAVORITE_PROB, favs[user, fav_pick], browse_cat)
    ab = ts >= cfg.cutover
    rate = tab.cat_lambda[cat_idx] * h[user] + treat * ab * tab.zone_ate_by_cat[cat_idx]
    clicks = sample_poisson(np.maximum(rate, 0.0), rng)
    orphan = (clicks > 0) & (orphan_u < cfg.orphan_prob)

    visit_no = np.arange(total) - np.repeat(np.cumsum(n_visits) - n_visits, n_visits)
    return {
        "uid": lo + user,
        "visit": visit_no,
        "ts": ts,
        "pixel_ts": ts + pixel_delay,
        "cat": cat_idx,
        "page": page,
        "items": items,
        "treat": treat,
        "clicks": clicks.astype(np.int64),
        "orphan": orphan,
        "rate": rate,
        "users": {
            "uid": np.arange(lo, hi),
            "ua": ua,
            "login": login,
            "intensity": intensity,
            "kind": np.full(n, HUMAN),
        },
    }


def _bot(cfg: ExperimentConfig, tab: _Tables, b: int, uid: int, declared: bool) -> dict:
    rng = _stream(cfg.seed, 1, b)
    pages = cfg.bot_pages
    span_ms = (cfg.aa_days + cfg.ab_days) * DAY_MS
    ts = np.sort(cfg.start + rng.integers(0, span_ms, size=pages))
    cat = rng.integers(0, len(tab.cat_ids), size=pages)
    page = rng.integers(1, len(cfg.page_probs) + 1, size=pages)
    treat = rng.integers(0, 2, size=pages)
    pixel_delay = rng.integers(50, 1500, size=pages)
    clicks = rng.poisson(0.5, size=pages) if declared else np.full(pages, 15)
    ua_index = int(rng.integers(0, len(DECLARED_BOT_AGENTS))) if declared else 0
    return {
        "uid": np.full(pages, uid),
        "visit": np.arange(pages),
        "ts": ts,
        "pixel_ts": ts + pixel_delay,
        "cat": cat,
        "page": page,
        "items": np.full(pages, cfg.items_per_page_max),
        "treat": treat.astype(np.int64),
        "clicks": clicks.astype(np.int64),
        "orphan": np.zeros(pages, dtype=bool),
        "rate": np.full(pages, np.nan),
        "users": {
            "uid": np.array([uid]),
            "ua": np.array([-1 - ua_index if declared else 0]),
            "login": np.array([0]),
            "intensity": np.array([np.nan]),
            "kind": np.array([DECLARED_BOT if declared else HEURISTIC_BOT]),
        },
        "click_seed": (1, b),
    }


_COLS = ("uid", "visit", "ts", "pixel_ts", "cat", "page", "items", "treat", "clicks", "orphan", "rate")


@dataclass
class SimulatedTraffic:
    """Ground-truth tables of one simulated experiment plus its log view."""

    cfg: ExperimentConfig
    taxonomy: Taxonomy
    sessions: dict  # column -> array, one row per listing session (humans and bots)
    users: dict  # column -> array, one row per user
    clicks: dict  # column -> array, one row per product click
    _anony: list = field(default_factory=list, repr=False)
    _ua: tuple = ()

    @property
    def n_sessions(self) -> int:
        return len(self.sessions["ts"])

    def anony_ids(self) -> list[str]:
        if not self._anony:
            self._anony = [anony_id(self.cfg.seed, int(u)) for u in self.users["uid"]]
        return self._anony

    def user_agent(self, code: int) -> str:
        if code < 0:
            return DECLARED_BOT_AGENTS[-1 - code]
        return self._ua[code]

    def session_kind(self) -> np.ndarray:
        return self.users["kind"][self.sessions["uid"]]

    def session_frame(self, humans_only: bool = True, drop_orphans: bool = True) -> pd.DataFrame:
        """Sessions as the cleaning pipeline should recover them."""
        s = self.sessions
        keep = np.ones(self.n_sessions, dtype=bool)
        if humans_only:
            keep &= self.session_kind() == HUMAN
        if drop_orphans:
            keep &= ~s["orphan"]
        idx = np.flatnonzero(keep)
        anon = self.anony_ids()
        uids = s["uid"][idx]
        cats = s["cat"][idx]
        tab_ids = np.array([c.category_id for c in self.taxonomy.categories], dtype=np.int64)
        tab_zone = np.array([c.zone_id for c in self.taxonomy.categories], dtype=np.int64)
        frame = pd.DataFrame(
            {
                "sessionId": [f"{anon[u]}.{v:x}" for u, v in zip(uids.tolist(), s["visit"][idx].tolist())],
                "anonyId": [anon[u] for u in uids.tolist()],
                "treat": s["treat"][idx],
                "categoryId": tab_ids[cats],
                "zoneId": tab_zone[cats],
                "pageNo": s["page"][idx].astype(np.int64),
                "itemsPerPage": s["items"][idx].astype(np.int64),
                "isLoggedIn": self.users["login"][uids].astype(np.int64),
                "clicks": s["clicks"][idx],
                "ts": s["pixel_ts"][idx],
                "stage": np.where(s["pixel_ts"][idx] < self.cfg.cutover, "AA", "AB"),
            },
            columns=list(SESSION_COLUMNS),
        )
        return frame.iloc[np.argsort(frame["ts"].to_numpy(), kind="stable")].reset_index(drop=True)

    def user_agents(self) -> dict[str, str]:
        anon = self.anony_ids()
        return {anon[i]: self.user_agent(int(c)) for i, c in enumerate(self.users["ua"])}

    def record_order(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(kind, row, ts) of every log record in output order."""
        s, c = self.sessions, self.clicks
        n_s = self.n_sessions
        pix = np.flatnonzero(~s["orphan"])
        kinds = np.concatenate([np.zeros(n_s, np.int8), np.ones(len(pix), np.int8),
                                np.full(len(c["ts"]), 2, np.int8)])
        rows = np.concatenate([np.arange(n_s), pix, np.arange(len(c["ts"]))])
        ts = np.concatenate([s["ts"], s["pixel_ts"][pix], c["ts"]])
        order = np.lexsort((rows, kinds, ts))
        return kinds[order], rows[order], ts[order]

    def records(self) -> Iterator[WebLogRecord]:
        s, c, users = self.sessions, self.clicks, self.users
        anon = self.anony_ids()
        agents = [self.user_agent(int(code)) for code in users["ua"]]
        cat_ids = [str(cc.category_id) for cc in self.taxonomy.categories]
        uid = s["uid"].tolist()
        visit = s["visit"].tolist()
        cat = s["cat"].tolist()
        page = s["page"].tolist()
        items = s["items"].tolist()
        treat = s["treat"].tolist()
        login = users["login"].tolist()
        c_session = c["session"].tolist()
        c_pos = c["pos"].tolist()
        kinds, rows, ts = self.record_order()
        render, pixel, click = RecordKind.LISTING_RENDER, RecordKind.PIXEL_BEACON, RecordKind.PRODUCT_CLICK
        for kind, row, t in zip(kinds.tolist(), rows.tolist(), ts.tolist()):
            if kind == 2:
                si = c_session[row]
                u = uid[si]
                pos = c_pos[row]
                q = {
                    "sessionId": f"{anon[u]}.{visit[si]:x}",
                    "productId": f"{cat_ids[cat[si]]}-{(page[si] - 1) * 15 + pos}",
                    "productPos": str(pos),
                }
                yield WebLogRecord(t, click, anon[u], treat[si], agents[u], q, login[u])
            elif kind == 1:
                u = uid[row]
                q = {
                    "sessionId": f"{anon[u]}.{visit[row]:x}",
                    "categoryId": cat_ids[cat[row]],
                    "pageNo": str(page[row]),
                    "itemsPerPage": str(items[row]),
                }
                yield WebLogRecord(t, pixel, anon[u], treat[row], agents[u], q, login[u])
            else:
                u = uid[row]
                q = {"categoryId": cat_ids[cat[row]], "pageNo": str(page[row]), "itemsPerPage": str(items[row])}
                yield WebLogRecord(t, render, anon[u], treat[row], agents[u], q, login[u])

    def manifest(self) -> dict:
        """Emission counts, used as the oracle for downstream row counts."""
        kind = self.session_kind()
        s = self.sessions
        beacon = ~s["orphan"]
        n_clicks = len(self.clicks["ts"])
        return {
            "users": int(np.sum(self.users["kind"] == HUMAN)),
            "declaredBots": int(np.sum(self.users["kind"] == DECLARED_BOT)),
            "heuristicBots": int(np.sum(self.users["kind"] == HEURISTIC_BOT)),
            "sessions": self.n_sessions,
            "renders": self.n_sessions,
            "beacons": int(beacon.sum()),
            "humanBeacons": int(np.sum(beacon & (kind == HUMAN))),
            "botBeacons": int(np.sum(beacon & (kind != HUMAN))),
            "clicks": n_clicks,
            "humanClicks": int(s["clicks"][kind == HUMAN].sum()),
            "orphanClicks": int(s["clicks"][s["orphan"]].sum()),
            "records": self.n_sessions + int(beacon.sum()) + n_clicks,
            "humanSessionsAA": int(np.sum(beacon & (kind == HUMAN) & (s["pixel_ts"] < self.cfg.cutover))),
            "humanSessionsAB": int(np.sum(beacon & (kind == HUMAN) & (s["pixel_ts"] >= self.cfg.cutover))),
        }


def _expand_clicks(cfg: ExperimentConfig, sessions: dict) -> dict:
    counts = sessions["clicks"]
    session = np.repeat(np.arange(len(counts)), counts)
    rng = _stream(cfg.seed, 2)
    offset = rng.integers(1_000, 120_000, size=len(session))
    pos_u = rng.random(len(session))
    items = sessions["items"][session]
    pos = np.floor(pos_u * items).astype(np.int64) + 1
    # bot floods: one click on every position of every page
    if len(session):
        within = np.arange(len(session)) - np.repeat(np.cumsum(counts) - counts, counts)
        flood = sessions["flood"][session]
        pos = np.where(flood, within % cfg.items_per_page_max + 1, pos)
    return {"session": session, "ts": sessions["pixel_ts"][session] + offset, "pos": pos}


def generate_traffic(cfg: ExperimentConfig, threads: int = 1, taxonomy: Taxonomy | None = None) -> SimulatedTraffic:
    """Run the generative model; the result is independent of ``threads``."""
    taxonomy = taxonomy or cfg.taxonomy()
    cfg.validate(taxonomy)
    tab = _tables(cfg, taxonomy)
    bounds = [(i, lo, min(lo + cfg.chunk_size, cfg.n_users))
              for i, lo in enumerate(range(0, cfg.n_users, cfg.chunk_size))]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _human_chunk(cfg, tab, *b), bounds))
    else:
        parts = [_human_chunk(cfg, tab, *b) for b in bounds]

    n_bots = int(round(cfg.bot_fraction * cfg.n_users))
    n_declared = n_bots // 2
    for b in range(n_bots):
        parts.append(_bot(cfg, tab, b, cfg.n_users + b, declared=b < n_declared))

    sessions = {col: np.concatenate([p[col] for p in parts]) for col in _COLS}
    users = {col: np.concatenate([p["users"][col] for p in parts]) for col in parts[0]["users"]}
    user_kind = users["kind"]
    sessions["flood"] = user_kind[sessions["uid"]] == HEURISTIC_BOT
    clicks = _expand_clicks(cfg, sessions)
    return SimulatedTraffic(cfg, taxonomy, sessions, users, clicks, _ua=tab.ua_strings)


def simulate_experiment(cfg: ExperimentConfig, threads: int = 1) -> Iterator[WebLogRecord]:
    """Log records of one simulated experiment, in timestamp order."""
    return generate_traffic(cfg, threads).records()


def reassignment_fractions(cfg: ExperimentConfig, n_users: int | None = None) -> tuple[float, float]:
    """(fractionUsersDouble, fractionSessionsDouble) of simulated A/B human traffic."""
    probe = replace(cfg, n_users=n_users or cfg.n_users, bot_fraction=0.0)
    frame = generate_traffic(probe).session_frame(humans_only=True, drop_orphans=False)
    ab = frame[frame["stage"] == "AB"]
    if len(ab) == 0:
        return 0.0, 0.0
    stats = flag_double_assignment(ab)
    return stats.fraction_users_double, stats.fraction_sessions_double


USER_BAND = (0.17, 0.27)
# upper end of the bisection bracket, visits per user-day at unit intensity
MAX_VISIT_RATE = 4.0
SESSION_BAND = (0.33, 0.43)


def calibrate_reassignment(
    cfg: ExperimentConfig,
    target: float = 0.22,
    probe_users: int = 20_000,
    tol: float = 0.005,
    max_iter: int = 40,
) -> ExperimentConfig:
    """Bisect ``visit_rate`` until the double-assigned user share hits ``target``.

    Raises :class:`CalibrationError` when the target cannot be bracketed or
    the session share ends outside its band.
    """
    def measure(rate):
        return reassignment_fractions(replace(cfg, visit_rate=rate), probe_users)

    lo, hi = 0.0, min(max(cfg.visit_rate, 0.05), MAX_VISIT_RATE)
    f_hi = measure(hi)
    while f_hi[0] < target:
        if hi >= MAX_VISIT_RATE:
            raise CalibrationError("cannot reach target share of double-assigned users", f_hi)
        lo, hi = hi, min(hi * 2.0, MAX_VISIT_RATE)
        f_hi = measure(hi)
    best = (hi, f_hi)
    for _ in range(max_iter):
        mid = (lo + hi) / 2.0
        f = measure(mid)
        if abs(f[0] - target) < abs(best[1][0] - target):
            best = (mid, f)
        if abs(f[0] - target) < tol:
            break
        if f[0] < target:
            lo = mid
        else:
            hi = mid
    rate, (fu, fs) = best
    if not (USER_BAND[0] <= fu <= USER_BAND[1] and SESSION_BAND[0] <= fs <= SESSION_BAND[1]):
        raise CalibrationError("calibrated fractions fall outside the target bands", (fu, fs))
    return replace(cfg, visit_rate=rate)
