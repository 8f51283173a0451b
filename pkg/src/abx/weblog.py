"""Web-log ingestion: record parsing, bot removal, session reconstruction.

Logs are NDJSON, one object per line::

    {"ts": 1459872000123, "kind": "pixel", "anonyId": "9f2c...", "treat": 1,
     "ua": "Mozilla/5.0 ...", "login": 0,
     "q": {"sessionId": "...", "categoryId": "601", "pageNo": "1", "itemsPerPage": "15"}}

``q`` may also be given as a raw query string (``"?sessionId=...&pageNo=1"``).

A listing page only learns its ``sessionId`` after it is generated, so the
id reaches the log through a tracking-pixel request (``kind="pixel"``).  A
session exists iff its pixel was logged; product clicks carrying a
``sessionId`` that no pixel announced are orphans and are dropped.
"""

from __future__ import annotations

import enum
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

from .errors import EmptyDataError, LogSyntaxError, MissingFieldError, QueryStringError, UnknownKindError
from .sessions import MAX_ITEMS_PER_PAGE, SESSION_COLUMNS, empty_session_frame, session_frame
from .taxonomy import Taxonomy

HEX = "0123456789abcdefABCDEF"

DEFAULT_BOT_AGENTS = (
    "googlebot",
    "bingbot",
    "baiduspider",
    "yandexbot",
    "duckduckbot",
    "slurp",
    "sogou",
    "ahrefsbot",
    "semrushbot",
    "crawler",
    "spider",
)

DEFAULT_VOLUME_THRESHOLD = 5000
N_POSITIONS = 15


def parse_query_string(raw: str) -> dict[str, str]:
    """Split ``raw`` into an ordered ``{key: value}`` mapping.

    Pairs are separated by ``&`` and split on the first ``=``.  Keys and values
    are percent-decoded as UTF-8 (``+`` is left as is).  A later duplicate
    key overwrites the earlier value but keeps the earlier position.
    """
    out: dict[str, str] = {}
    start = 1 if raw.startswith("?") else 0
    pos = start
    for segment in raw[start:].split("&"):
        seg_offset = pos
        pos += len(segment) + 1
        if not segment:
            continue
        key, eq, value = segment.partition("=")
        k = _percent_decode(key, seg_offset)
        v = _percent_decode(value, seg_offset + len(key) + len(eq))
        out[k] = v
    return out


def _percent_decode(text: str, offset: int) -> str:
    if "%" not in text:
        return text
    buf = bytearray()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "%":
            pair = text[i + 1:i + 3]
            if len(pair) != 2 or pair[0] not in HEX or pair[1] not in HEX:
                raise QueryStringError(f"malformed percent escape {text[i:i + 3]!r}", offset + i)
            buf.append(int(pair, 16))
            i += 3
        else:
            buf.extend(ch.encode("utf-8"))
            i += 1
    try:
        return buf.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise QueryStringError("percent escapes do not decode as UTF-8", offset + exc.start) from None


class RecordKind(str, enum.Enum):
    LISTING_RENDER = "render"
    PIXEL_BEACON = "pixel"
    PRODUCT_CLICK = "click"


REQUIRED_PARAMS = {
    RecordKind.LISTING_RENDER: ("categoryId", "pageNo"),
    RecordKind.PIXEL_BEACON: ("sessionId", "pageNo", "itemsPerPage"),
    RecordKind.PRODUCT_CLICK: ("productId", "productPos"),
}


@dataclass(frozen=True, slots=True)
class WebLogRecord:
    timestamp: int
    kind: RecordKind
    anony_id: str
    treat: int
    user_agent: str
    query_params: dict
    is_logged_in: int

    @property
    def session_id(self) -> str | None:
        return self.query_params.get("sessionId")

    @property
    def is_orphan_candidate(self) -> bool:
        """A product click that carries no sessionId at all."""
        return self.kind is RecordKind.PRODUCT_CLICK and not self.query_params.get("sessionId")

    def to_json(self) -> str:
        return json.dumps(
            {
                "ts": self.timestamp,
                "kind": self.kind.value,
                "anonyId": self.anony_id,
                "treat": self.treat,
                "ua": self.user_agent,
                "login": self.is_logged_in,
                "q": self.query_params,
            },
            separators=(",", ":"),
            ensure_ascii=False,
        )


def _binary(obj: dict, key: str, line) -> int:
    value = obj.get(key)
    if isinstance(value, bool) or value not in (0, 1):
        raise MissingFieldError(f"field {key!r} must be 0 or 1, got {value!r}", line)
    return int(value)


def parse_log_record(text: str, line: int | None = None) -> WebLogRecord:
    """Parse and validate one NDJSON log line."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LogSyntaxError(f"invalid JSON: {exc.msg} at column {exc.colno}", line) from None
    if not isinstance(obj, dict):
        raise LogSyntaxError("log line is not a JSON object", line)

    if "kind" not in obj:
        raise MissingFieldError("missing field 'kind'", line)
    try:
        kind = RecordKind(obj["kind"])
    except (ValueError, TypeError):
        raise UnknownKindError(f"unknown kind {obj['kind']!r}", line) from None

    for key in ("ts", "anonyId", "treat", "ua", "login", "q"):
        if key not in obj:
            raise MissingFieldError(f"missing field {key!r}", line)
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts <= 0:
        raise MissingFieldError(f"field 'ts' must be a positive integer, got {ts!r}", line)
    anony_id = obj["anonyId"]
    if not isinstance(anony_id, str) or not anony_id:
        raise MissingFieldError("field 'anonyId' must be a nonempty string", line)
    ua = obj["ua"]
    if not isinstance(ua, str):
        raise MissingFieldError("field 'ua' must be a string", line)

    q = obj["q"]
    if isinstance(q, str):
        try:
            params = parse_query_string(q)
        except QueryStringError as exc:
            raise MissingFieldError(f"bad query string: {exc}", line) from None
    elif isinstance(q, dict):
        params = {str(k): v if isinstance(v, str) else json.dumps(v) for k, v in q.items()}
    else:
        raise MissingFieldError("field 'q' must be an object or query string", line)
    for name in REQUIRED_PARAMS[kind]:
        if not params.get(name):
            raise MissingFieldError(f"{kind.value} record lacks query parameter {name!r}", line)

    return WebLogRecord(
        timestamp=ts,
        kind=kind,
        anony_id=anony_id,
        treat=_binary(obj, "treat", line),
        user_agent=ua,
        query_params=params,
        is_logged_in=_binary(obj, "login", line),
    )


def read_log(path) -> Iterator[WebLogRecord]:
    """Stream records from an NDJSON file, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                yield parse_log_record(text, lineno)


def write_log(records: Iterable[WebLogRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
            n += 1
    return n


def sort_records(records: Iterable[WebLogRecord]) -> list[WebLogRecord]:
    return sorted(records, key=lambda r: r.timestamp)


def read_bot_list(path) -> tuple[str, ...]:
    """Declared-bot user-agent substrings, one per line; ``#`` starts a comment."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return tuple(out)


@dataclass
class CleaningReport:
    records_read: int = 0
    declared_bot_records: int = 0
    heuristic_bot_users: int = 0
    heuristic_bot_records: int = 0
    orphan_clicks: int = 0
    orphan_clicks_by_arm: dict = field(default_factory=lambda: {0: 0, 1: 0})
    duplicate_beacons: int = 0
    sessions_missing_category: int = 0
    clicks_on_dropped_sessions: int = 0
    sessions_emitted: int = 0

    @property
    def records_removed(self) -> int:
        return (
            self.declared_bot_records
            + self.heuristic_bot_records
            + self.orphan_clicks
            + self.clicks_on_dropped_sessions
        )

    @classmethod
    def merge(cls, bots: "CleaningReport", sessions: "CleaningReport") -> "CleaningReport":
        """Combine a bot-filter report with the report of the session pass that followed it."""
        return cls(
            records_read=bots.records_read,
            declared_bot_records=bots.declared_bot_records,
            heuristic_bot_users=bots.heuristic_bot_users,
            heuristic_bot_records=bots.heuristic_bot_records,
            orphan_clicks=sessions.orphan_clicks,
            orphan_clicks_by_arm=dict(sessions.orphan_clicks_by_arm),
            duplicate_beacons=sessions.duplicate_beacons,
            sessions_missing_category=sessions.sessions_missing_category,
            clicks_on_dropped_sessions=sessions.clicks_on_dropped_sessions,
            sessions_emitted=sessions.sessions_emitted,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["orphan_clicks_by_arm"] = {str(k): v for k, v in sorted(self.orphan_clicks_by_arm.items())}
        return out


def _matches_declared(user_agent: str, agents: tuple[str, ...]) -> bool:
    ua = user_agent.lower()
    return any(a in ua for a in agents)


@dataclass
class BotVerdict:
    """Result of a scan: which records to drop and why."""

    agents: tuple[str, ...]
    heuristic_users: frozenset
    records_read: int
    declared_records: int
    heuristic_records: int

    def keeps(self, rec: WebLogRecord) -> bool:
        if _matches_declared(rec.user_agent, self.agents):
            return False
        return rec.anony_id not in self.heuristic_users

    def report(self) -> CleaningReport:
        return CleaningReport(
            records_read=self.records_read,
            declared_bot_records=self.declared_records,
            heuristic_bot_users=len(self.heuristic_users),
            heuristic_bot_records=self.heuristic_records,
        )


def detect_bots(
    records: Iterable[WebLogRecord],
    agents: Iterable[str] = DEFAULT_BOT_AGENTS,
    volume_threshold: int = DEFAULT_VOLUME_THRESHOLD,
) -> BotVerdict:
    """Single pass over ``records`` deciding which users are bots.

    Declared bots match a user-agent substring (case-insensitive).  A user is
    a heuristic bot if, among its non-declared records, the record count
    exceeds ``volume_threshold`` and its clicks over positions 1..15 form an
    exactly flat histogram with every count positive.
    """
    agents = tuple(a.lower() for a in agents)
    n_read = n_declared = 0
    volume: Counter = Counter()
    hist: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(N_POSITIONS + 1, dtype=np.int64))
    agent_cache: dict[str, bool] = {}
    for rec in records:
        n_read += 1
        declared = agent_cache.get(rec.user_agent)
        if declared is None:
            declared = agent_cache[rec.user_agent] = _matches_declared(rec.user_agent, agents)
        if declared:
            n_declared += 1
            continue
        volume[rec.anony_id] += 1
        if rec.kind is RecordKind.PRODUCT_CLICK:
            try:
                pos = int(rec.query_params["productPos"])
            except ValueError:
                continue
            if 1 <= pos <= N_POSITIONS:
                hist[rec.anony_id][pos] += 1
    flagged = set()
    for user, count in volume.items():
        if count <= volume_threshold or user not in hist:
            continue
        h = hist[user][1:]
        if h[0] > 0 and np.all(h == h[0]):
            flagged.add(user)
    return BotVerdict(
        agents=agents,
        heuristic_users=frozenset(flagged),
        records_read=n_read,
        declared_records=n_declared,
        heuristic_records=sum(volume[u] for u in flagged),
    )


def filter_bots(
    records: Iterable[WebLogRecord],
    agents: Iterable[str] = DEFAULT_BOT_AGENTS,
    volume_threshold: int = DEFAULT_VOLUME_THRESHOLD,
) -> tuple[list[WebLogRecord], CleaningReport]:
    """Drop declared and heuristic bots; see :func:`detect_bots`."""
    records = list(records)
    verdict = detect_bots(records, agents, volume_threshold)
    kept = [r for r in records if verdict.keeps(r)]
    return kept, verdict.report()


def reconstruct_sessions(
    records: Iterable[WebLogRecord],
    cutover: int,
    taxonomy: Taxonomy | None = None,
) -> tuple[pd.DataFrame, CleaningReport]:
    """Bind clicks to listing sessions through their pixel beacons.

    ``records`` should be in timestamp order; the first beacon of a
    ``sessionId`` wins and later duplicates are counted.  Beacons without a
    usable ``categoryId`` (absent, or unknown to ``taxonomy`` when one is
    given) are dropped and counted.  Sessions are returned in beacon order.
    """
    zone_map = taxonomy.zone_map() if taxonomy is not None else None
    report = CleaningReport()
    beacons: dict[str, tuple] = {}
    rejected: set[str] = set()
    clicks: Counter = Counter()
    click_arm: dict[str, list[int]] = {}
    for rec in records:
        report.records_read += 1
        kind = rec.kind
        if kind is RecordKind.PRODUCT_CLICK:
            sid = rec.query_params.get("sessionId")
            if not sid:
                report.orphan_clicks += 1
                report.orphan_clicks_by_arm[rec.treat] += 1
                continue
            clicks[sid] += 1
            arms = click_arm.get(sid)
            if arms is None:
                click_arm[sid] = arms = [0, 0]
            arms[rec.treat] += 1
        elif kind is RecordKind.PIXEL_BEACON:
            q = rec.query_params
            sid = q["sessionId"]
            if sid in beacons or sid in rejected:
                report.duplicate_beacons += 1
                continue
            try:
                category = int(q.get("categoryId", ""))
                page = int(q["pageNo"])
                items = int(q["itemsPerPage"])
            except ValueError:
                category = None
            if category is None or (zone_map is not None and category not in zone_map):
                rejected.add(sid)
                report.sessions_missing_category += 1
                continue
            if page < 1 or not 1 <= items <= MAX_ITEMS_PER_PAGE:
                rejected.add(sid)
                report.sessions_missing_category += 1
                continue
            zone = zone_map[category] if zone_map is not None else 0
            beacons[sid] = (
                sid,
                rec.anony_id,
                rec.treat,
                category,
                zone,
                page,
                items,
                rec.is_logged_in,
                rec.timestamp,
                "AA" if rec.timestamp < cutover else "AB",
            )

    for sid, arms in click_arm.items():
        if sid in beacons:
            continue
        if sid in rejected:
            report.clicks_on_dropped_sessions += arms[0] + arms[1]
        else:
            report.orphan_clicks += arms[0] + arms[1]
            report.orphan_clicks_by_arm[0] += arms[0]
            report.orphan_clicks_by_arm[1] += arms[1]

    report.sessions_emitted = len(beacons)
    if not beacons:
        return empty_session_frame(), report
    cols = list(zip(*beacons.values()))
    frame = pd.DataFrame(
        {
            "sessionId": cols[0],
            "anonyId": cols[1],
            "treat": np.asarray(cols[2], dtype=np.int64),
            "categoryId": np.asarray(cols[3], dtype=np.int64),
            "zoneId": np.asarray(cols[4], dtype=np.int64),
            "pageNo": np.asarray(cols[5], dtype=np.int64),
            "itemsPerPage": np.asarray(cols[6], dtype=np.int64),
            "isLoggedIn": np.asarray(cols[7], dtype=np.int64),
            "clicks": np.fromiter((clicks.get(s, 0) for s in cols[0]), dtype=np.int64, count=len(cols[0])),
            "ts": np.asarray(cols[8], dtype=np.int64),
            "stage": cols[9],
        },
        columns=list(SESSION_COLUMNS),
    )
    return frame, report


@dataclass
class ReassignmentStats:
    flags: pd.Series  # anonyId -> isDoubleAssigned (0/1), sorted by anonyId
    fraction_users_double: float
    fraction_sessions_double: float
    n_users: int
    n_sessions: int

    def to_dict(self) -> dict:
        return {
            "fractionUsersDouble": self.fraction_users_double,
            "fractionSessionsDouble": self.fraction_sessions_double,
            "nUsers": self.n_users,
            "nSessions": self.n_sessions,
            "nUsersDouble": int(self.flags.sum()),
        }


def flag_double_assignment(ab_sessions) -> ReassignmentStats:
    """Mark users observed in both arms during the A/B stage."""
    frame = session_frame(ab_sessions)
    if len(frame) == 0:
        raise EmptyDataError("no A/B sessions")
    if (frame["stage"] != "AB").any():
        raise ValueError("flag_double_assignment expects A/B-stage sessions only")
    arms = frame.groupby("anonyId", sort=True)["treat"].agg(["min", "max", "size"])
    double = (arms["min"] != arms["max"]).astype(np.int64)
    double.name = "isDoubleAssigned"
    n_sessions = int(arms["size"].sum())
    return ReassignmentStats(
        flags=double,
        fraction_users_double=float(double.mean()),
        fraction_sessions_double=float(arms["size"][double == 1].sum() / n_sessions),
        n_users=int(len(arms)),
        n_sessions=n_sessions,
    )
