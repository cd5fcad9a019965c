"""Synthetic two-snapshot markets with planted investor groups.

Each group has a preferred stock pool whose first entry is the group's anchor
stock. Every member holds the anchor, which carries ``anchor_weight`` times
the capital of a typical minor holding; each further holding comes from the
pool with probability ``concentration`` and from the whole market otherwise.
Between the snapshots a member buys along the group's signature purchase with
probability ``trade_correlation`` and buys random stocks otherwise.

Prices and share totals are identical at both dates, so the universe rules
never remove a generated stock.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import HoldingRecord, PriceRecord, SnapshotPair, write_prices, write_snapshot


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    size: int
    stock_pool: tuple[int, ...]
    concentration: float = 0.9
    holdings_mean: float = 2.0
    trade_correlation: float | None = None  # overrides MarketSpec.trade_correlation
    anchor_weight: float = 4.0
    signature_size: int = 2


@dataclass(frozen=True)
class MarketSpec:
    stocks: int
    groups: tuple[GroupSpec, ...]
    trade_correlation: float = 0.5
    noise_investors: int = 0
    price_range: tuple[float, float] = (20.0, 500.0)
    total_shares_range: tuple[int, int] = (1_000_000, 50_000_000)
    seed: int = 0
    t1: dt.date = dt.date(2009, 6, 30)
    t2: dt.date = dt.date(2011, 12, 30)
    sell_probability: float = 0.2
    random_buys_mean: float = 1.5
    missing_close_fraction: float = 0.0

    def validate(self) -> None:
        if self.stocks < 1:
            raise SpecError("need at least one stock")
        if not 0 <= self.trade_correlation <= 1:
            raise SpecError("trade_correlation must lie in [0, 1]")
        lo, hi = self.price_range
        if not 0 < lo <= hi:
            raise SpecError("price_range must be positive and ordered")
        slo, shi = self.total_shares_range
        if not 0 < slo <= shi:
            raise SpecError("total_shares_range must be positive and ordered")
        for g in self.groups:
            if g.size < 1:
                raise SpecError("group sizes must be at least 1")
            if not g.stock_pool:
                raise SpecError("stock pools must be non-empty")
            if len(g.stock_pool) > self.stocks:
                raise SpecError("stock pool larger than the number of stocks")
            if len(set(g.stock_pool)) != len(g.stock_pool):
                raise SpecError("stock pool has repeated stocks")
            if any(not 0 <= s < self.stocks for s in g.stock_pool):
                raise SpecError("stock pool refers to a stock outside the market")
            if not 0 <= g.concentration <= 1:
                raise SpecError("concentration must lie in [0, 1]")
            rho = g.trade_correlation
            if rho is not None and not 0 <= rho <= 1:
                raise SpecError("trade_correlation must lie in [0, 1]")
            if g.holdings_mean <= 0:
                raise SpecError("holdings_mean must be positive")


@dataclass
class PlantedTruth:
    labels: dict[str, int]  # investor_id -> group index; noise investors get len(groups)
    signatures: list[dict[str, int]] = field(default_factory=list)  # per group: isin -> shares

    def label_array(self, investors: Sequence[str]) -> np.ndarray:
        return np.array([self.labels[i] for i in investors], dtype=np.int64)


def planted_market(n_groups: int = 5, group_size: int = 500, stocks: int = 50,
                   pool_size: int = 5, concentration: float = 0.9, holdings_mean: float = 2.0,
                   trade_correlation: float = 0.9, noise_investors: int = 0,
                   seed: int = 0, **kwargs) -> MarketSpec:
    """Equal-size groups with disjoint, consecutive stock pools."""
    if n_groups * pool_size > stocks:
        raise SpecError("disjoint pools need n_groups * pool_size <= stocks")
    groups = tuple(
        GroupSpec(group_size, tuple(range(g * pool_size, (g + 1) * pool_size)),
                  concentration, holdings_mean)
        for g in range(n_groups)
    )
    return MarketSpec(stocks, groups, trade_correlation, noise_investors, seed=seed, **kwargs)


_DEFAULT_SIZES = (400, 320, 260, 220, 180, 150, 130, 110, 100, 90,
                  80, 70, 60, 55, 50, 45, 40, 35, 30, 25)
_DEFAULT_NOISE = 300


def default_market(seed: int = 2009, investors: int | None = None) -> MarketSpec:
    """A sparse market of 20 groups of mixed size over 200 stocks plus noise investors.

    With ``investors`` given, group sizes are scaled so the market holds that
    many investors in total (noise investors absorb the rounding).
    """
    sizes = list(_DEFAULT_SIZES)
    noise = _DEFAULT_NOISE
    if investors is not None:
        f = investors / (sum(sizes) + noise)
        sizes = [max(2, round(s * f)) for s in sizes]
        noise = investors - sum(sizes)
        if noise < 0:
            raise SpecError(f"too few investors for the default market: {investors}")
    groups = tuple(
        GroupSpec(size, tuple(range(4 * g, 4 * g + 4)), concentration=0.85, holdings_mean=1.8)
        for g, size in enumerate(sizes)
    )
    return MarketSpec(200, groups, trade_correlation=0.7, noise_investors=noise, seed=seed)


def isin(index: int, country: str = "SE") -> str:
    """A syntactically valid ISIN (with Luhn check digit) for a stock index."""
    body = f"{country}{index:09d}"
    digits = "".join(str(int(c, 36)) for c in body)
    total = 0
    for k, ch in enumerate(reversed(digits)):
        d = int(ch)
        if k % 2 == 0:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return body + str((10 - total % 10) % 10)


def _support_size(rng, mean: float) -> int:
    sd = max(0.5, mean / 2)
    return max(1, int(round(rng.normal(mean, sd))))


def generate(spec: MarketSpec) -> tuple[SnapshotPair, PlantedTruth]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_stocks = spec.stocks
    names = [isin(j) for j in range(n_stocks)]
    prices = np.round(rng.uniform(*spec.price_range, size=n_stocks), 2)
    totals = rng.integers(spec.total_shares_range[0], spec.total_shares_range[1] + 1, size=n_stocks)
    drop_close = rng.random(n_stocks) < spec.missing_close_fraction
    price_records = {}
    for j in range(n_stocks):
        close = None if drop_close[j] else float(prices[j])
        price_records[names[j]] = PriceRecord(
            names[j], close, float(prices[j]), float(round(prices[j] * 1.01, 2)), True, int(totals[j]),
        )

    signatures = []
    for g in spec.groups:
        k = min(g.signature_size, len(g.stock_pool))
        picks = rng.choice(np.asarray(g.stock_pool), size=k, replace=False)
        signatures.append({int(s): int(rng.integers(10, 200)) for s in sorted(picks)})

    shares_t1: list[dict[int, int]] = []
    shares_t2: list[dict[int, int]] = []
    labels: list[int] = []

    def random_purchase(held: dict[int, int]) -> dict[int, int]:
        k = max(1, int(rng.poisson(spec.random_buys_mean)))
        picks = rng.choice(n_stocks, size=min(k, n_stocks), replace=False)
        return {int(s): int(rng.integers(5, 300)) for s in picks}

    def finish(held: dict[int, int], buys: dict[int, int]) -> dict[int, int]:
        after = dict(held)
        sellable = sorted(s for s in held if s not in buys)
        if sellable and rng.random() < spec.sell_probability:
            s = sellable[int(rng.integers(len(sellable)))]
            after[s] = int(rng.integers(0, held[s]))
        for s, q in buys.items():
            after[s] = after.get(s, 0) + q
        return {s: q for s, q in after.items() if q > 0}

    for gi, g in enumerate(spec.groups):
        rho = spec.trade_correlation if g.trade_correlation is None else g.trade_correlation
        pool = list(g.stock_pool)
        for _ in range(g.size):
            k = _support_size(rng, g.holdings_mean)
            chosen = [pool[0]]
            weights = [g.anchor_weight * rng.lognormal(0.0, 0.15)]
            for _slot in range(k - 1):
                if rng.random() < g.concentration:
                    options = [s for s in pool if s not in chosen]
                else:
                    options = [s for s in range(n_stocks) if s not in chosen]
                if not options:
                    continue
                chosen.append(int(options[int(rng.integers(len(options)))]))
                weights.append(rng.uniform(0.5, 1.5))
            capital = rng.lognormal(np.log(20_000), 0.8)
            w = np.asarray(weights) / np.sum(weights)
            held = {s: max(1, int(round(capital * wj / prices[s]))) for s, wj in zip(chosen, w)}
            if rng.random() < rho:
                mult = int(rng.integers(1, 4))
                buys = {s: q * mult for s, q in signatures[gi].items()}
            else:
                buys = random_purchase(held)
            shares_t1.append(held)
            shares_t2.append(finish(held, buys))
            labels.append(gi)

    for _ in range(spec.noise_investors):
        k = min(_support_size(rng, 2.0), n_stocks)
        chosen = rng.choice(n_stocks, size=k, replace=False)
        capital = rng.lognormal(np.log(20_000), 0.8)
        w = rng.uniform(0.5, 1.5, size=k)
        w = w / w.sum()
        held = {int(s): max(1, int(round(capital * wj / prices[s]))) for s, wj in zip(chosen, w)}
        shares_t1.append(held)
        shares_t2.append(finish(held, random_purchase(held)))
        labels.append(len(spec.groups))

    width = max(7, len(str(len(labels))))
    ids = [f"INV{r:0{width}d}" for r in range(len(labels))]

    def records(per_investor):
        return [HoldingRecord(inv, "natural", True, "direct", names[s], q)
                for inv, held in zip(ids, per_investor) for s, q in sorted(held.items())]

    pair = SnapshotPair(spec.t1, spec.t2, records(shares_t1), records(shares_t2),
                        price_records, dict(price_records))
    truth = PlantedTruth(
        dict(zip(ids, labels)),
        [{names[s]: q for s, q in sig.items()} for sig in signatures],
    )
    return pair, truth


MARKET_FILES = ("snapshot_t1.tsv", "snapshot_t2.tsv", "prices_t1.csv", "prices_t2.csv", "truth.csv")


def write_market(out_dir: str | Path, pair: SnapshotPair, truth: PlantedTruth) -> dict[str, Path]:
    """Write the pair in the ingest file formats plus ``truth.csv``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in MARKET_FILES}
    write_snapshot(paths["snapshot_t1.tsv"], pair.holdings_t1)
    write_snapshot(paths["snapshot_t2.tsv"], pair.holdings_t2)
    write_prices(paths["prices_t1.csv"], [pair.prices_t1[k] for k in sorted(pair.prices_t1)])
    write_prices(paths["prices_t2.csv"], [pair.prices_t2[k] for k in sorted(pair.prices_t2)])
    with open(paths["truth.csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("investor_id", "group"))
        for inv in sorted(truth.labels):
            w.writerow((inv, truth.labels[inv]))
    return paths


def read_truth(path: str | Path) -> PlantedTruth:
    with open(path, newline="", encoding="utf-8") as fh:
        return PlantedTruth({r["investor_id"]: int(r["group"]) for r in csv.DictReader(fh)})


# --- spec files ---------------------------------------------------------------------

_SCALARS = {
    "stocks": int, "trade_correlation": float, "noise_investors": int, "seed": int,
    "sell_probability": float, "random_buys_mean": float, "missing_close_fraction": float,
}


def _parse_pool(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def _parse_group(text: str) -> GroupSpec:
    fields = dict(tok.split(":", 1) for tok in text.split())
    try:
        group = GroupSpec(
            size=int(fields.pop("size")),
            stock_pool=_parse_pool(fields.pop("pool")),
            concentration=float(fields.pop("concentration", 0.9)),
            holdings_mean=float(fields.pop("holdings_mean", 2.0)),
            trade_correlation=(float(fields.pop("trade_correlation"))
                               if "trade_correlation" in fields else None),
            anchor_weight=float(fields.pop("anchor_weight", 4.0)),
            signature_size=int(fields.pop("signature_size", 2)),
        )
    except KeyError as exc:
        raise SpecError(f"group line missing {exc.args[0]!r}: {text!r}") from None
    if fields:
        raise SpecError(f"unknown group fields {sorted(fields)}")
    return group


def parse_spec_text(text: str) -> MarketSpec:
    """Parse ``key = value`` lines into a MarketSpec.

    Recognized keys are the MarketSpec scalars, ``price_range = lo, hi``,
    ``total_shares_range = lo, hi``, ``t1``/``t2`` (ISO dates) and repeated
    ``group = size:N pool:a-b[,c] [concentration:x] [holdings_mean:x]
    [trade_correlation:x] [anchor_weight:x] [signature_size:k]`` lines. With no
    group lines, ``planted_groups``, ``group_size``, ``pool_size``,
    ``concentration`` and ``holdings_mean`` build equal disjoint groups;
    without those, the default market is used, scaled to ``investors`` if set.
    Unknown keys are an error.
    """
    values: dict[str, str] = {}
    groups: list[GroupSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "group":
            groups.append(_parse_group(value))
        else:
            values[key] = value

    kwargs: dict = {}
    for key, cast in _SCALARS.items():
        if key in values:
            kwargs[key] = cast(values.pop(key))
    for key, cast in (("price_range", float), ("total_shares_range", int)):
        if key in values:
            lo, hi = (cast(v) for v in values.pop(key).split(","))
            kwargs[key] = (lo, hi)
    for key in ("t1", "t2"):
        if key in values:
            kwargs[key] = dt.date.fromisoformat(values.pop(key))

    if groups:
        spec = MarketSpec(groups=tuple(groups), **kwargs)
    else:
        shorthand = {}
        for key, cast in (("planted_groups", int), ("group_size", int), ("pool_size", int),
                          ("concentration", float), ("holdings_mean", float)):
            if key in values:
                shorthand[key] = cast(values.pop(key))
        if not shorthand:
            total = int(values.pop("investors")) if "investors" in values else None
            base = default_market(kwargs.pop("seed", 2009), total)
            spec = replace(base, **kwargs)
        else:
            n_groups = shorthand.pop("planted_groups", 5)
            stocks = kwargs.pop("stocks", 50)
            spec = planted_market(n_groups=n_groups, stocks=stocks, **shorthand, **kwargs)
    if values:
        raise SpecError(f"unknown spec keys: {sorted(values)}")
    spec.validate()
    return spec


def load_spec(path: str | Path) -> MarketSpec:
    return parse_spec_text(Path(path).read_text(encoding="utf-8"))


# --- planted-truth scoring ------------------------------------------------------------


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def normalized_mutual_information(a: Sequence, b: Sequence) -> float:
    """NMI with arithmetic-mean normalization; 1 iff the labelings agree up to renaming."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("label arrays differ in length")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)
    n = table.sum()
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0 and hb == 0:
        return 1.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float(np.sum(table[nz] / n * np.log(table[nz] * n / outer[nz])))
    return float(np.clip(mi / ((ha + hb) / 2), 0.0, 1.0))


def recovery_score(found, truth: PlantedTruth) -> float:
    """NMI between found investor groups and the planted labels.

    ``found`` is an ``InvestorGroups`` (anything with a ``labels()`` mapping) or
    a plain ``{investor_id: label}`` mapping over the same investors as ``truth``.
    """
    found_labels = found.labels() if hasattr(found, "labels") else dict(found)
    if set(found_labels) != set(truth.labels):
        missing = set(truth.labels) ^ set(found_labels)
        raise ValueError(f"investor universes differ ({len(missing)} investors in only one)")
    ids = sorted(truth.labels)
    return normalized_mutual_information([found_labels[i] for i in ids],
                                         [truth.labels[i] for i in ids])
