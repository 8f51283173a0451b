"""Listing-session records and their columnar (DataFrame) form.

A listing session is one rendering of a category listing page for one user,
the unit of observation for every model in the package.  Row-level code can
use :class:`ListingSession`; anything that touches more than a few thousand
sessions works on a :class:`pandas.DataFrame` with :data:`SESSION_COLUMNS`.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

SESSION_COLUMNS = (
    "sessionId",
    "anonyId",
    "treat",
    "categoryId",
    "zoneId",
    "pageNo",
    "itemsPerPage",
    "isLoggedIn",
    "clicks",
    "ts",
    "stage",
)

_INT_COLUMNS = ("treat", "categoryId", "zoneId", "pageNo", "itemsPerPage", "isLoggedIn", "clicks", "ts")

MAX_ITEMS_PER_PAGE = 15


@dataclass(frozen=True, slots=True)
class ListingSession:
    session_id: str
    anony_id: str
    treat: int
    category_id: int
    zone_id: int
    page_no: int
    items_per_page: int
    is_logged_in: int
    clicks: int
    timestamp: int
    stage: str

    def __post_init__(self):
        if self.treat not in (0, 1) or self.is_logged_in not in (0, 1):
            raise ValueError("treat and is_logged_in must be 0 or 1")
        if not 1 <= self.items_per_page <= MAX_ITEMS_PER_PAGE:
            raise ValueError(f"items_per_page must be in 1..{MAX_ITEMS_PER_PAGE}")
        if self.page_no < 1:
            raise ValueError("page_no must be positive")
        if self.clicks < 0:
            raise ValueError("clicks must be nonnegative")
        if self.stage not in ("AA", "AB"):
            raise ValueError("stage must be 'AA' or 'AB'")


def empty_session_frame() -> pd.DataFrame:
    frame = pd.DataFrame({c: pd.Series(dtype=object if c in ("sessionId", "anonyId", "stage") else np.int64)
                          for c in SESSION_COLUMNS})
    return frame


def session_frame(sessions) -> pd.DataFrame:
    """Coerce a DataFrame or an iterable of :class:`ListingSession` to a session frame."""
    if isinstance(sessions, pd.DataFrame):
        missing = [c for c in SESSION_COLUMNS if c not in sessions.columns]
        if missing:
            raise ValueError(f"session frame lacks columns: {missing}")
        return sessions
    rows = [astuple(s) for s in sessions]
    if not rows:
        return empty_session_frame()
    frame = pd.DataFrame.from_records(rows, columns=list(SESSION_COLUMNS))
    return frame.astype({c: np.int64 for c in _INT_COLUMNS})


def iter_sessions(frame: pd.DataFrame) -> Iterable[ListingSession]:
    for row in frame[list(SESSION_COLUMNS)].itertuples(index=False, name=None):
        yield ListingSession(row[0], row[1], *(int(v) for v in row[2:10]), row[10])


def write_sessions_csv(frame: pd.DataFrame, path) -> None:
    frame.loc[:, list(SESSION_COLUMNS)].to_csv(path, index=False, lineterminator="\n")


def read_sessions_csv(path) -> pd.DataFrame:
    path = Path(path)
    frame = pd.read_csv(
        path,
        dtype={"sessionId": str, "anonyId": str, "stage": str, **{c: np.int64 for c in _INT_COLUMNS}},
        keep_default_na=False,
    )
    missing = [c for c in SESSION_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return frame
