import datetime as dt
import itertools

import numpy as np
import pytest

from folionet import ingest
from folionet.ingest import (ALL_FILTERS, HoldingRecord, IngestError, PriceRecord, SnapshotPair,
                             clean_universe, parse_prices, parse_snapshot, resolve_price)
from folionet.synth import generate, isin, planted_market

T1, T2 = dt.date(2009, 6, 30), dt.date(2011, 12, 30)
S = [isin(j) for j in range(6)]
HEADER = "investor_id\tinvestor_kind\ttraceable\tregistration\tisin\tshares\n"


def rec(inv, stock, shares, kind="natural", traceable=True, reg="direct"):
    return HoldingRecord(inv, kind, traceable, reg, stock, shares)


def price(stock, close=100.0, bid=None, ask=None, listed=True, total=1_000_000):
    return PriceRecord(stock, close, bid, ask, listed, total)


def make_pair(h1, h2, prices1=None, prices2=None):
    prices1 = prices1 or {s: price(s) for s in S}
    prices2 = prices2 or {s: price(s) for s in S}
    return SnapshotPair(T1, T2, h1, h2, prices1, prices2)


# --- parsing ---------------------------------------------------------------------------


def test_parse_row_maps_fields(tmp_path):
    p = tmp_path / "t1.tsv"
    p.write_text(HEADER + "INV001\tN\t1\tdirect\tSE0000108656\t500\n", encoding="utf-8")
    snap = parse_snapshot(p, T1)
    assert snap.records == [HoldingRecord("INV001", "natural", True, "direct", "SE0000108656", 500)]
    assert snap.rejected == []


def test_parse_empty_file_gives_empty_collection(tmp_path):
    p = tmp_path / "t1.tsv"
    p.write_text(HEADER, encoding="utf-8")
    assert len(parse_snapshot(p, T1)) == 0


def test_negative_shares_rejected_with_line_number(tmp_path):
    p = tmp_path / "t1.tsv"
    p.write_text(HEADER + "A\tN\t1\tdirect\tSE0000108656\t5\n"
                 "B\tN\t1\tdirect\tSE0000108656\t-5\n", encoding="utf-8")
    snap = parse_snapshot(p, T1)
    assert [r.investor_id for r in snap.records] == ["A"]
    assert len(snap.rejected) == 1 and snap.rejected[0].line == 3
    assert "line 3" in str(snap.rejected[0])


def test_missing_column_names_it(tmp_path):
    p = tmp_path / "t1.tsv"
    p.write_text("investor_id\tinvestor_kind\ttraceable\tregistration\tisin\n", encoding="utf-8")
    with pytest.raises(IngestError, match="shares"):
        parse_snapshot(p, T1)


def test_duplicate_key_is_hard_error(tmp_path):
    p = tmp_path / "t1.tsv"
    row = "A\tN\t1\tdirect\tSE0000108656\t5\n"
    p.write_text(HEADER + row + row, encoding="utf-8")
    with pytest.raises(IngestError, match="duplicate"):
        parse_snapshot(p, T1)


def test_same_stock_different_registration_is_not_duplicate(tmp_path):
    p = tmp_path / "t1.tsv"
    p.write_text(HEADER + "A\tN\t1\tdirect\tSE0000108656\t5\n"
                 "A\tN\t1\tnominee\tSE0000108656\t5\n", encoding="utf-8")
    assert len(parse_snapshot(p, T1)) == 2


def test_parse_prices_empty_fields_absent(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("isin,close,bid,ask,listed,total_shares\n"
                 f"{S[0]},,72.0,73.0,1,1000\n", encoding="utf-8")
    rec_ = parse_prices(p)[S[0]]
    assert rec_.close is None and rec_.bid == 72.0 and rec_.listed and rec_.total_shares == 1000


# --- prices ------------------------------------------------------------------------------


def test_resolve_price_order():
    assert resolve_price(price(S[0], 72.5, 72.0, 73.0)) == 72.5
    assert resolve_price(price(S[0], None, 72.0, 73.0)) == 72.0
    assert resolve_price(price(S[0], None, None, 73.0)) == 73.0
    assert resolve_price(price(S[0], None, None, None)) is None


# --- cleaning ----------------------------------------------------------------------------


def test_share_change_above_five_percent_excluded():
    h1 = [rec("A", S[0], 10), rec("A", S[1], 10)]
    h2 = [rec("A", S[0], 20), rec("A", S[1], 20)]
    p2 = {s: price(s) for s in S}
    p2[S[1]] = price(S[1], total=1_060_000)
    u = clean_universe(make_pair(h1, h2, prices2=p2))
    assert u.stocks == [S[0]] + S[2:]


def test_share_change_exactly_at_limit_kept():
    h1, h2 = [rec("A", S[0], 10)], [rec("A", S[0], 20)]
    p2 = {s: price(s) for s in S}
    p2[S[0]] = price(S[0], total=1_050_000)
    assert S[0] in clean_universe(make_pair(h1, h2, prices2=p2)).stocks


def test_legal_person_excluded():
    h1 = [rec("A", S[0], 10), rec("L", S[0], 10, kind="legal")]
    h2 = [rec("A", S[0], 20), rec("L", S[0], 20, kind="legal")]
    assert clean_universe(make_pair(h1, h2)).investors == ["A"]


def test_untraceable_and_nominee_excluded():
    h1 = [rec("A", S[0], 10), rec("U", S[0], 10, traceable=False), rec("N", S[0], 10, reg="nominee")]
    h2 = [rec("A", S[0], 20), rec("U", S[0], 20, traceable=False), rec("N", S[0], 20, reg="nominee")]
    assert clean_universe(make_pair(h1, h2)).investors == ["A"]


def test_unchanged_investor_excluded_row_by_row():
    h1 = [rec("A", S[0], 10), rec("B", S[0], 10), rec("B", S[1], 3)]
    h2 = [rec("A", S[0], 11), rec("B", S[0], 10), rec("B", S[1], 3)]
    # oracle: investors whose (stock -> shares) maps differ between dates
    diff = {inv for inv in "AB"
            if {r.stock_id: r.share_count for r in h1 if r.investor_id == inv}
            != {r.stock_id: r.share_count for r in h2 if r.investor_id == inv}}
    assert set(clean_universe(make_pair(h1, h2)).investors) == diff == {"A"}


def test_activity_counts_only_retained_stocks():
    h1 = [rec("A", S[0], 10), rec("A", S[1], 5), rec("B", S[0], 1)]
    h2 = [rec("A", S[0], 10), rec("A", S[1], 9), rec("B", S[0], 2)]
    p1 = {s: price(s) for s in S}
    p1[S[1]] = price(S[1], listed=False)
    assert clean_universe(make_pair(h1, h2, prices1=p1)).investors == ["B"]


def test_stock_missing_from_second_table_or_unpriced_excluded():
    h1 = [rec("A", s, 10) for s in S[:3]]
    h2 = [rec("A", s, 20) for s in S[:3]]
    p1 = {s: price(s) for s in S}
    p1[S[2]] = price(S[2], close=None)
    p2 = {s: price(s) for s in S if s != S[1]}
    u = clean_universe(make_pair(h1, h2, p1, p2))
    assert u.stocks == [S[0]] + S[3:]
    assert np.all(u.price_t1 > 0)


def test_empty_universe_error():
    with pytest.raises(IngestError, match="empty universe"):
        clean_universe(make_pair([rec("A", S[0], 10)], [rec("A", S[0], 10)]))


def test_idempotent_on_generated_market():
    pair, _ = generate(planted_market(n_groups=2, group_size=40, stocks=12, pool_size=3, seed=5))
    u = clean_universe(pair)
    again = clean_universe(u.to_pair())
    assert again.investors == u.investors and again.stocks == u.stocks
    assert (again.shares_t1 != u.shares_t1).nnz == 0
    assert (again.shares_t2 != u.shares_t2).nnz == 0
    np.testing.assert_array_equal(again.price_t1, u.price_t1)


def test_filters_monotone_non_increasing():
    spec = planted_market(n_groups=2, group_size=50, stocks=12, pool_size=3, seed=3)
    pair, _ = generate(spec)
    # perturb so every filter has something to remove
    p2 = dict(pair.prices_t2)
    p2[S[0]] = PriceRecord(S[0], 10.0, None, None, True, p2[S[0]].total_shares * 2)
    p1 = dict(pair.prices_t1)
    p1[S[1]] = PriceRecord(S[1], 10.0, None, None, False, p1[S[1]].total_shares)
    h1 = list(pair.holdings_t1) + [rec("ZLEGAL", S[3], 5, kind="legal"), rec("ZUNTR", S[3], 5, traceable=False),
                                   rec("ZSAME", S[4], 5)]
    h2 = list(pair.holdings_t2) + [rec("ZLEGAL", S[3], 6, kind="legal"), rec("ZUNTR", S[3], 6, traceable=False),
                                   rec("ZSAME", S[4], 5)]
    del p2[S[2]]
    pair = SnapshotPair(pair.t1, pair.t2, h1, h2, p1, p2)
    names = sorted(ALL_FILTERS)
    counts = {}
    for k in range(len(names) + 1):
        for subset in itertools.combinations(names, k):
            u = clean_universe(pair, filters=subset)
            counts[frozenset(subset)] = (u.n_investors, u.n_stocks)
    for subset, (ni, ns) in counts.items():
        for extra in set(names) - subset:
            ni2, ns2 = counts[subset | {extra}]
            assert ni2 <= ni and ns2 <= ns


def test_universe_save_load_roundtrip(tmp_path, planted_small):
    _, _, u, _, _ = planted_small
    u.save(tmp_path / "u.bin")
    v = ingest.CleanUniverse.load(tmp_path / "u.bin")
    assert v.investors == u.investors and v.stocks == u.stocks and v.t1 == u.t1
    assert (v.shares_t1 != u.shares_t1).nnz == 0 and (v.shares_t2 != u.shares_t2).nnz == 0
    assert v.prices_t1 == u.prices_t1


def test_records_validate():
    with pytest.raises(ValueError):
        HoldingRecord("A", "natural", True, "direct", "SHORT", 1)
    with pytest.raises(ValueError):
        PriceRecord(S[0], 1.0, None, None, True, 0)
    with pytest.raises(IngestError):
        SnapshotPair(T2, T1, [], [], {}, {})
