import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from abx.errors import EmptyDataError, TaxonomyError
from abx.sessions import ListingSession
from abx.taxonomy import CategoryBaseline, compute_category_baselines, load_taxonomy, zone_of

HEADER = "categoryId,categoryName,zoneId,zoneName\n"


def write(tmp_path, body):
    p = tmp_path / "tax.csv"
    p.write_text(HEADER + body)
    return p


def session(anon, cat, clicks, i=0):
    return ListingSession(f"{anon}.{i}", anon, 0, cat, cat // 100, 1, 15, 0, clicks, 1 + i, "AA")


def test_two_row_file(tmp_path):
    t = load_taxonomy(write(tmp_path, "201,SLR,2,Cameras\n601,Heater,6,Home\n"))
    assert t.zone_ids == [2, 6]
    assert t.category_ids == [201, 601]
    assert zone_of(t, 601) == 6


def test_duplicate_category_names_line(tmp_path):
    with pytest.raises(TaxonomyError, match="line 3") as err:
        load_taxonomy(write(tmp_path, "201,SLR,2,Cameras\n201,Lens,2,Cameras\n"))
    assert err.value.line == 3


@pytest.mark.parametrize("body,needle", [
    ("201,SLR,2\n", "4 fields"),
    ("x,SLR,2,Cameras\n", "categoryId"),
    ("201,,2,Cameras\n", "empty name"),
    ("201,SLR,2,Cameras\n202,Lens,2,Optics\n", "conflicting"),
])
def test_malformed_rows(tmp_path, body, needle):
    with pytest.raises(TaxonomyError, match=needle):
        load_taxonomy(write(tmp_path, body))


def test_bad_header(tmp_path):
    p = tmp_path / "tax.csv"
    p.write_text("id,name\n1,a\n")
    with pytest.raises(TaxonomyError, match="line 1"):
        load_taxonomy(p)


def test_bundled_fixture(taxonomy):
    assert len(taxonomy.category_ids) == 252
    assert len(taxonomy.zone_ids) == 11
    assert zone_of(taxonomy, 201) == 2
    assert zone_of(taxonomy, 601) == 6
    with pytest.raises(KeyError):
        zone_of(taxonomy, 999)
    # total and consistent with the per-zone listing
    for z in taxonomy.zone_ids:
        assert all(zone_of(taxonomy, c.category_id) == z for c in taxonomy.categories_in(z))
    assert sum(len(taxonomy.categories_in(z)) for z in taxonomy.zone_ids) == 252


def test_baseline_single_user_mean():
    b = compute_category_baselines([session("u", 201, c, i) for i, c in enumerate([0, 1, 2])])
    assert b[201] == 1.0


def test_baseline_is_mean_of_user_means():
    rows = [session("a", 301, 0, 0), session("a", 301, 0, 1), session("b", 301, 2, 2)]
    assert compute_category_baselines(rows)[301] == 1.0
    # pooled mean would weight user a twice
    assert_allclose(compute_category_baselines(rows, pooled=True)[301], 2 / 3)


def test_baseline_law_of_large_numbers(rng):
    n = 100_000
    frame = pd.DataFrame({
        "sessionId": np.arange(n).astype(str),
        "anonyId": (np.arange(n) % 20_000).astype(str),
        "treat": 0,
        "categoryId": rng.choice([201, 301, 601], n),
        "zoneId": 0, "pageNo": 1, "itemsPerPage": 15, "isLoggedIn": 0,
        "clicks": rng.poisson(0.32, n),
        "ts": 1, "stage": "AA",
    })
    b = compute_category_baselines(frame)
    assert all(abs(v - 0.32) < 0.02 for v in b.values())


def test_baseline_csv_round_trip(tmp_path):
    b = CategoryBaseline({601: 0.1 + 0.2, 201: 1 / 3})
    b.to_csv(tmp_path / "b.csv")
    back = CategoryBaseline.from_csv(tmp_path / "b.csv")
    assert dict(back) == dict(b)


def test_empty_baselines():
    with pytest.raises(EmptyDataError):
        compute_category_baselines([])
