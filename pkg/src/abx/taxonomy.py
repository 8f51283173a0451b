"""Product hierarchy (zone -> category) and A/A category baselines."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import EmptyDataError, TaxonomyError
from .sessions import session_frame

TAXONOMY_HEADER = ("categoryId", "categoryName", "zoneId", "zoneName")
BASELINE_HEADER = ("categoryId", "catClickRateAA")


@dataclass(frozen=True)
class Zone:
    zone_id: int
    name: str


@dataclass(frozen=True)
class Category:
    category_id: int
    name: str
    zone_id: int


@dataclass(frozen=True)
class Taxonomy:
    zones: tuple[Zone, ...]
    categories: tuple[Category, ...]
    _zone_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        zone_ids = [z.zone_id for z in self.zones]
        if len(set(zone_ids)) != len(zone_ids):
            raise TaxonomyError("duplicate zoneId")
        lookup = {}
        for c in self.categories:
            if c.category_id in lookup:
                raise TaxonomyError(f"duplicate categoryId {c.category_id}")
            if c.zone_id not in zone_ids:
                raise TaxonomyError(f"category {c.category_id} references unknown zone {c.zone_id}")
            lookup[c.category_id] = c.zone_id
        empty = set(zone_ids) - set(lookup.values())
        if empty:
            raise TaxonomyError(f"zones without categories: {sorted(empty)}")
        object.__setattr__(self, "_zone_of", lookup)

    @property
    def zone_ids(self) -> list[int]:
        return sorted(z.zone_id for z in self.zones)

    @property
    def category_ids(self) -> list[int]:
        return [c.category_id for c in self.categories]

    def zone_name(self, zone_id: int) -> str:
        for z in self.zones:
            if z.zone_id == zone_id:
                return z.name
        raise KeyError(zone_id)

    def categories_in(self, zone_id: int) -> list[Category]:
        return [c for c in self.categories if c.zone_id == zone_id]

    def zone_map(self) -> dict[int, int]:
        return dict(self._zone_of)


def zone_of(taxonomy: Taxonomy, category_id: int) -> int:
    """Return the zone owning ``category_id``; ``KeyError`` if unknown."""
    try:
        return taxonomy._zone_of[int(category_id)]
    except KeyError:
        raise KeyError(f"unknown categoryId {category_id}") from None


def _parse_int(text: str, what: str, line: int) -> int:
    text = text.strip()
    if not text:
        raise TaxonomyError(f"empty {what}", line)
    try:
        return int(text)
    except ValueError:
        raise TaxonomyError(f"{what} is not an integer: {text!r}", line) from None


def load_taxonomy(path) -> Taxonomy:
    """Read a ``categoryId,categoryName,zoneId,zoneName`` CSV file."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        return _read_taxonomy(fh)


def _read_taxonomy(fh) -> Taxonomy:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TAXONOMY_HEADER:
        raise TaxonomyError(f"header must be {','.join(TAXONOMY_HEADER)}", 1)
    zones: dict[int, str] = {}
    categories: list[Category] = []
    seen: dict[int, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise TaxonomyError(f"expected 4 fields, got {len(row)}", line)
        cat_id = _parse_int(row[0], "categoryId", line)
        zone_id = _parse_int(row[2], "zoneId", line)
        cat_name, zone_name = row[1].strip(), row[3].strip()
        if not cat_name or not zone_name:
            raise TaxonomyError("empty name field", line)
        if cat_id in seen:
            raise TaxonomyError(f"duplicate categoryId {cat_id} (first on line {seen[cat_id]})", line)
        if zones.setdefault(zone_id, zone_name) != zone_name:
            raise TaxonomyError(f"zone {zone_id} has conflicting names", line)
        seen[cat_id] = line
        categories.append(Category(cat_id, cat_name, zone_id))
    zone_list = tuple(Zone(z, zones[z]) for z in sorted(zones))
    return Taxonomy(zone_list, tuple(categories))


def default_taxonomy() -> Taxonomy:
    """The bundled 11-zone, 252-category fixture."""
    with resources.files("abx.data").joinpath("taxonomy.csv").open(encoding="utf-8") as fh:
        return _read_taxonomy(fh)


@dataclass(frozen=True)
class CategoryBaseline(Mapping):
    """Mean A/A clicks per listing session, keyed by categoryId."""

    rates: dict[int, float]

    def __post_init__(self):
        if any(not (v >= 0) for v in self.rates.values()):
            raise ValueError("baseline rates must be nonnegative")

    def __getitem__(self, category_id: int) -> float:
        return self.rates[category_id]

    def __iter__(self) -> Iterator[int]:
        return iter(self.rates)

    def __len__(self) -> int:
        return len(self.rates)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(BASELINE_HEADER) + "\n")
            for cat in sorted(self.rates):
                fh.write(f"{cat},{self.rates[cat]!r}\n")

    @classmethod
    def from_csv(cls, path) -> "CategoryBaseline":
        frame = pd.read_csv(path, float_precision="round_trip")
        if tuple(frame.columns) != BASELINE_HEADER:
            raise ValueError(f"{path}: header must be {','.join(BASELINE_HEADER)}")
        return cls({int(c): float(r) for c, r in zip(frame.categoryId, frame.catClickRateAA)})


def compute_category_baselines(aa_sessions, pooled: bool = False) -> CategoryBaseline:
    """Average A/A clicks per listing session for each category.

    By default the mean is taken within each user first and those user means
    are then averaged per category.  ``pooled=True`` averages all sessions of
    a category directly.
    """
    frame = session_frame(aa_sessions)
    if len(frame) == 0:
        raise EmptyDataError("no A/A sessions to compute baselines from")
    clicks = frame["clicks"].astype(np.float64)
    if pooled:
        means = clicks.groupby(frame["categoryId"]).mean()
    else:
        per_user = clicks.groupby([frame["categoryId"], frame["anonyId"]]).mean()
        means = per_user.groupby(level=0).mean()
    return CategoryBaseline({int(c): float(v) for c, v in means.sort_index().items()})
