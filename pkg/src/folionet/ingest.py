"""Shareholder-register snapshots: parsing, price resolution and universe cleaning.

Snapshot files are UTF-8 TSV with the header
``investor_id investor_kind traceable registration isin shares``; price files are
UTF-8 CSV with the header ``isin,close,bid,ask,listed,total_shares`` where an
empty field means "absent".
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

SNAPSHOT_COLUMNS = ("investor_id", "investor_kind", "traceable", "registration", "isin", "shares")
PRICE_COLUMNS = ("isin", "close", "bid", "ask", "listed", "total_shares")

STOCK_FILTERS = ("both_dates", "listed", "share_change")
INVESTOR_FILTERS = ("natural", "traceable", "active")
ALL_FILTERS = frozenset(STOCK_FILTERS + INVESTOR_FILTERS)


class IngestError(ValueError):
    """Raised for unusable input files or an empty cleaned universe."""


@dataclass(frozen=True)
class HoldingRecord:
    investor_id: str
    investor_kind: str  # "natural" | "legal"
    traceable: bool
    registration: str  # "direct" | "nominee"
    stock_id: str
    share_count: int

    def __post_init__(self):
        if not self.investor_id:
            raise ValueError("investor_id must be non-empty")
        if len(self.stock_id) != 12:
            raise ValueError(f"stock_id {self.stock_id!r} is not a 12-character ISIN")
        if self.share_count < 0:
            raise ValueError(f"negative share_count {self.share_count}")
        if self.investor_kind not in ("natural", "legal"):
            raise ValueError(f"unknown investor_kind {self.investor_kind!r}")
        if self.registration not in ("direct", "nominee"):
            raise ValueError(f"unknown registration {self.registration!r}")


@dataclass(frozen=True)
class PriceRecord:
    stock_id: str
    close: float | None
    bid: float | None
    ask: float | None
    listed: bool
    total_shares: int

    def __post_init__(self):
        if self.total_shares <= 0:
            raise ValueError(f"total_shares must be positive, got {self.total_shares}")
        for name in ("close", "bid", "ask"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive when present, got {value}")


@dataclass(frozen=True)
class RejectedRow:
    line: int
    reason: str

    def __str__(self):
        return f"line {self.line}: {self.reason}"


@dataclass
class Snapshot:
    """Holdings parsed from one register file, plus the rows that were rejected."""

    date: dt.date
    records: list[HoldingRecord] = field(default_factory=list)
    rejected: list[RejectedRow] = field(default_factory=list)

    def __iter__(self) -> Iterator[HoldingRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class SnapshotPair:
    t1: dt.date
    t2: dt.date
    holdings_t1: list[HoldingRecord]
    holdings_t2: list[HoldingRecord]
    prices_t1: dict[str, PriceRecord]
    prices_t2: dict[str, PriceRecord]

    def __post_init__(self):
        if not self.t1 < self.t2:
            raise IngestError(f"t1 ({self.t1}) must precede t2 ({self.t2})")
        for label, rows in (("t1", self.holdings_t1), ("t2", self.holdings_t2)):
            _check_unique_keys(rows, label)


@dataclass
class CleanUniverse:
    """Eligible investors and stocks with share counts at both dates.

    ``shares_t1`` and ``shares_t2`` are CSR matrices of shape
    (len(investors), len(stocks)); column j is stock ``stocks[j]`` and
    ``price_t1[j]`` is its resolved first-date price.
    """

    t1: dt.date
    t2: dt.date
    investors: list[str]
    stocks: list[str]
    price_t1: np.ndarray
    shares_t1: sp.csr_matrix
    shares_t2: sp.csr_matrix
    prices_t1: dict[str, PriceRecord]
    prices_t2: dict[str, PriceRecord]

    @property
    def n_investors(self) -> int:
        return len(self.investors)

    @property
    def n_stocks(self) -> int:
        return len(self.stocks)

    def to_pair(self) -> SnapshotPair:
        """Re-express the universe as a snapshot pair (direct, natural, traceable rows).

        Positions held at only one date are written with a zero share count at
        the other, so every investor stays present in both snapshots.
        """
        support = (self.shares_t1 != 0).astype(np.int8) + (self.shares_t2 != 0).astype(np.int8)
        coo = sp.coo_matrix(support)
        order = np.lexsort((coo.col, coo.row))
        rows, cols = coo.row[order], coo.col[order]

        def records(matrix):
            values = np.asarray(matrix[rows, cols]).ravel() if len(rows) else []
            return [
                HoldingRecord(self.investors[r], "natural", True, "direct", self.stocks[c], int(v))
                for r, c, v in zip(rows, cols, values)
            ]

        return SnapshotPair(
            self.t1, self.t2, records(self.shares_t1), records(self.shares_t2),
            dict(self.prices_t1), dict(self.prices_t2),
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "format": "folionet-universe/1",
            "t1": self.t1.isoformat(),
            "t2": self.t2.isoformat(),
            "investors": list(self.investors),
            "stocks": list(self.stocks),
            "price_t1": np.asarray(self.price_t1, dtype=np.float64),
            "shares_t1": _csr_parts(self.shares_t1),
            "shares_t2": _csr_parts(self.shares_t2),
            "prices_t1": [_price_tuple(self.prices_t1[s]) for s in sorted(self.prices_t1)],
            "prices_t2": [_price_tuple(self.prices_t2[s]) for s in sorted(self.prices_t2)],
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)

    @classmethod
    def load(cls, path: str | Path) -> "CleanUniverse":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload.get("format") != "folionet-universe/1":
            raise IngestError(f"{path}: not a universe file")
        shape = (len(payload["investors"]), len(payload["stocks"]))
        return cls(
            t1=dt.date.fromisoformat(payload["t1"]),
            t2=dt.date.fromisoformat(payload["t2"]),
            investors=payload["investors"],
            stocks=payload["stocks"],
            price_t1=payload["price_t1"],
            shares_t1=_csr_from_parts(payload["shares_t1"], shape),
            shares_t2=_csr_from_parts(payload["shares_t2"], shape),
            prices_t1={t[0]: PriceRecord(*t) for t in payload["prices_t1"]},
            prices_t2={t[0]: PriceRecord(*t) for t in payload["prices_t2"]},
        )


def _csr_parts(m: sp.csr_matrix):
    m = m.tocsr()
    m.sort_indices()
    return (m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.int64))


def _csr_from_parts(parts, shape) -> sp.csr_matrix:
    indptr, indices, data = parts
    return sp.csr_matrix((data, indices, indptr), shape=shape)


def _price_tuple(p: PriceRecord):
    return (p.stock_id, p.close, p.bid, p.ask, p.listed, p.total_shares)


def _check_unique_keys(rows: Iterable[HoldingRecord], label: str) -> None:
    seen = set()
    for rec in rows:
        key = (rec.investor_id, rec.stock_id, rec.registration)
        if key in seen:
            raise IngestError(f"duplicate holding {key} in snapshot {label}")
        seen.add(key)


def _read_header(reader, path, required) -> dict[str, int]:
    try:
        header = next(reader)
    except StopIteration:
        return {}
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"{path}: missing column {missing[0]!r}")
    return {c: header.index(c) for c in required}


_KINDS = {"N": "natural", "L": "legal"}
_FLAGS = {"0": False, "1": True}


def parse_snapshot(path: str | Path, date: dt.date) -> Snapshot:
    """Parse a register snapshot TSV.

    Malformed rows (bad codes, bad ISIN length, non-integer or negative share
    counts) are skipped and listed in ``Snapshot.rejected`` with their line
    numbers. A repeated (investor, isin, registration) key is a hard error.
    """
    snap = Snapshot(date)
    seen: dict[tuple, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        cols = _read_header(reader, path, SNAPSHOT_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rec = _holding_from_row(row, cols)
            except (ValueError, IndexError, KeyError) as exc:
                snap.rejected.append(RejectedRow(lineno, str(exc) or type(exc).__name__))
                continue
            key = (rec.investor_id, rec.stock_id, rec.registration)
            if key in seen:
                raise IngestError(
                    f"{path}: duplicate holding {key} on lines {seen[key]} and {lineno}"
                )
            seen[key] = lineno
            snap.records.append(rec)
    for bad in snap.rejected:
        log.warning("rejected snapshot row file=%s %s", path, bad)
    return snap


def _holding_from_row(row: list[str], cols: Mapping[str, int]) -> HoldingRecord:
    if len(row) < len(cols):
        raise ValueError(f"expected {len(cols)} fields, got {len(row)}")
    get = lambda c: row[cols[c]].strip()  # noqa: E731
    kind = get("investor_kind")
    if kind not in _KINDS:
        raise ValueError(f"investor_kind must be N or L, got {kind!r}")
    traceable = get("traceable")
    if traceable not in _FLAGS:
        raise ValueError(f"traceable must be 0 or 1, got {traceable!r}")
    shares_text = get("shares")
    try:
        shares = int(shares_text)
    except ValueError:
        raise ValueError(f"shares is not an integer: {shares_text!r}") from None
    return HoldingRecord(
        investor_id=get("investor_id"),
        investor_kind=_KINDS[kind],
        traceable=_FLAGS[traceable],
        registration=get("registration"),
        stock_id=get("isin"),
        share_count=shares,
    )


def _optional_price(text: str) -> float | None:
    text = text.strip()
    return float(text) if text else None


def parse_prices(path: str | Path) -> dict[str, PriceRecord]:
    """Parse a price CSV into ``{isin: PriceRecord}``; malformed rows are logged and skipped."""
    prices: dict[str, PriceRecord] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        cols = _read_header(reader, path, PRICE_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                isin = row[cols["isin"]].strip()
                listed = row[cols["listed"]].strip()
                if listed not in _FLAGS:
                    raise ValueError(f"listed must be 0 or 1, got {listed!r}")
                rec = PriceRecord(
                    stock_id=isin,
                    close=_optional_price(row[cols["close"]]),
                    bid=_optional_price(row[cols["bid"]]),
                    ask=_optional_price(row[cols["ask"]]),
                    listed=_FLAGS[listed],
                    total_shares=int(row[cols["total_shares"]]),
                )
            except (ValueError, IndexError) as exc:
                log.warning("rejected price row file=%s line=%d reason=%s", path, lineno, exc)
                continue
            if isin in prices:
                raise IngestError(f"{path}: duplicate price row for {isin} on line {lineno}")
            prices[isin] = rec
    return prices


def resolve_price(record: PriceRecord) -> float | None:
    """Close price, falling back to bid and then ask; ``None`` if all are missing."""
    for value in (record.close, record.bid, record.ask):
        if value is not None:
            return value
    return None


def load_pair(
    t1_path, t2_path, prices_t1_path, prices_t2_path,
    t1: dt.date = dt.date(2009, 6, 30), t2: dt.date = dt.date(2011, 12, 30),
) -> SnapshotPair:
    return SnapshotPair(
        t1, t2,
        parse_snapshot(t1_path, t1).records,
        parse_snapshot(t2_path, t2).records,
        parse_prices(prices_t1_path),
        parse_prices(prices_t2_path),
    )


def retained_stocks(pair: SnapshotPair, max_share_change: float = 0.05,
                    filters: Iterable[str] = ALL_FILTERS) -> list[str]:
    """Stocks passing the universe rules, sorted by ISIN."""
    filters = set(filters)
    kept = []
    for isin in sorted(pair.prices_t1):
        p1 = pair.prices_t1[isin]
        p2 = pair.prices_t2.get(isin)
        if "both_dates" in filters and p2 is None:
            continue
        if "listed" in filters and not p1.listed:
            continue
        if "share_change" in filters and p2 is not None:
            change = abs(p2.total_shares - p1.total_shares) / p1.total_shares
            if change > max_share_change:
                continue
        if resolve_price(p1) is None:
            continue
        kept.append(isin)
    return kept


def clean_universe(pair: SnapshotPair, max_share_change: float = 0.05,
                   filters: Iterable[str] = ALL_FILTERS) -> CleanUniverse:
    """Apply the stock and investor eligibility rules to a snapshot pair.

    Args:
        pair: Parsed holdings and price tables for both dates.
        max_share_change: Largest tolerated relative change in a stock's total
            share count, measured against the first date.
        filters: Names of the rules to apply; every rule is on by default.
            Dropping one is only meant for diagnostics. The price-resolvability
            rule and the direct-registration rule are always applied.

    Returns:
        The cleaned universe. Investors are sorted by id, stocks by ISIN.

    Raises:
        IngestError: if no stock or no investor survives.
    """
    filters = set(filters)
    unknown = filters - ALL_FILTERS
    if unknown:
        raise ValueError(f"unknown filters: {sorted(unknown)}")

    stocks = retained_stocks(pair, max_share_change, filters)
    if not stocks:
        raise IngestError("empty universe: no stock survives cleaning")
    stock_index = {s: j for j, s in enumerate(stocks)}

    ids_t1 = {r.investor_id for r in pair.holdings_t1}
    ids_t2 = {r.investor_id for r in pair.holdings_t2}
    traceable_ids = ids_t1 & ids_t2
    excluded = set()
    for rec in (*pair.holdings_t1, *pair.holdings_t2):
        if "natural" in filters and rec.investor_kind != "natural":
            excluded.add(rec.investor_id)
        if "traceable" in filters and not rec.traceable:
            excluded.add(rec.investor_id)

    def direct_positions(rows):
        out: dict[str, dict[int, int]] = {}
        for rec in rows:
            if rec.registration != "direct" or rec.stock_id not in stock_index:
                continue
            if rec.investor_id in excluded:
                continue
            if "traceable" in filters and rec.investor_id not in traceable_ids:
                continue
            if rec.share_count == 0:
                continue
            out.setdefault(rec.investor_id, {})[stock_index[rec.stock_id]] = rec.share_count
        return out

    pos1 = direct_positions(pair.holdings_t1)
    pos2 = direct_positions(pair.holdings_t2)
    candidates = sorted(set(pos1) | set(pos2))
    if "active" in filters:
        candidates = [i for i in candidates if pos1.get(i, {}) != pos2.get(i, {})]
    if not candidates:
        raise IngestError("empty universe: no investor survives cleaning")

    shape = (len(candidates), len(stocks))
    price_t1 = np.array([resolve_price(pair.prices_t1[s]) for s in stocks], dtype=np.float64)
    kept_prices_t1 = {s: pair.prices_t1[s] for s in stocks}
    kept_prices_t2 = {s: pair.prices_t2[s] for s in stocks if s in pair.prices_t2}
    universe = CleanUniverse(
        t1=pair.t1, t2=pair.t2, investors=candidates, stocks=stocks, price_t1=price_t1,
        shares_t1=_positions_matrix(candidates, pos1, shape),
        shares_t2=_positions_matrix(candidates, pos2, shape),
        prices_t1=kept_prices_t1, prices_t2=kept_prices_t2,
    )
    log.info("clean universe investors=%d stocks=%d", universe.n_investors, universe.n_stocks)
    return universe


def _positions_matrix(investors, positions, shape) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, inv in enumerate(investors):
        for c, v in sorted(positions.get(inv, {}).items()):
            rows.append(r)
            cols.append(c)
            vals.append(v)
    m = sp.csr_matrix(
        (np.asarray(vals, dtype=np.int64), (np.asarray(rows, dtype=np.int64),
                                             np.asarray(cols, dtype=np.int64))),
        shape=shape,
    )
    m.sort_indices()
    return m


def write_snapshot(path: str | Path, records: Iterable[HoldingRecord]) -> None:
    """Serialize holdings in the snapshot TSV format (rows in the given order)."""
    kinds = {v: k for k, v in _KINDS.items()}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SNAPSHOT_COLUMNS)
        for r in records:
            w.writerow([r.investor_id, kinds[r.investor_kind], int(r.traceable),
                        r.registration, r.stock_id, r.share_count])


def write_prices(path: str | Path, prices: Iterable[PriceRecord]) -> None:
    fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for p in prices:
            w.writerow([p.stock_id, fmt(p.close), fmt(p.bid), fmt(p.ask),
                        int(p.listed), p.total_shares])
