"""Summary data products written as CSV.

* similarity curve: relative trading similarity binned by portfolio similarity,
  with percentile-bootstrap 95% intervals;
* random-group distributions: empirical CDFs of similarities between
  aggregated random investor groups of several sizes;
* group scatter: mean trading versus mean portfolio similarity per group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cohort import GroupReport
from .vectors import new_stock_matrix, normalize_rows, paired_cosine

EXACT_PAIR_LIMIT = 2000
CDF_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)


class DegenerateSampleError(ValueError):
    pass


@dataclass
class CurveBin:
    center: float
    relative: float
    ci_low: float
    ci_high: float
    pairs: int


@dataclass
class SimilarityCurve:
    variant: str
    bins: list[CurveBin]
    bin_width: float
    global_mean: float
    portfolio_sim: np.ndarray = field(repr=False)
    trading_sim: np.ndarray = field(repr=False)

    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.bins])

    def relative(self) -> np.ndarray:
        return np.array([b.relative for b in self.bins])


@dataclass
class DistributionTable:
    group_size: int
    kind: str  # "portfolio" | "trading"
    grid: np.ndarray
    cdf: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def mass_at_zero(self) -> float:
        return float(self.cdf[0])


def sample_pairs(n_investors: int, max_pairs: int = 200_000, seed: int = 0) -> np.ndarray:
    """All unordered pairs for small populations, otherwise uniform random distinct pairs."""
    if n_investors < 2:
        raise ValueError("need at least two investors")
    if n_investors <= EXACT_PAIR_LIMIT:
        a, b = np.triu_indices(n_investors, 1)
        return np.stack([a, b], axis=1).astype(np.int64)
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n_investors, size=max_pairs)
    b = rng.integers(0, n_investors - 1, size=max_pairs)
    b = b + (b >= a)
    return np.stack([a, b], axis=1).astype(np.int64)


def _bootstrap_mean_ci(values: np.ndarray, reps: int, rng: np.random.Generator,
                       level: float = 0.95) -> tuple[float, float]:
    m = len(values)
    if m == 1 or np.all(values == values[0]):
        return float(values[0]), float(values[0])
    means = np.empty(reps)
    chunk = max(1, 2_000_000 // m)
    for start in range(0, reps, chunk):
        stop = min(reps, start + chunk)
        idx = rng.integers(0, m, size=(stop - start, m))
        means[start:stop] = values[idx].mean(axis=1)
    tail = (1 - level) / 2
    lo, hi = np.quantile(means, [tail, 1 - tail])
    return float(lo), float(hi)


def similarity_curve(pairs: np.ndarray, trading: sp.csr_matrix, portfolios: sp.csr_matrix,
                     bin_width: float = 0.05, boot_reps: int = 1000, variant: str = "all",
                     seed: int = 0) -> SimilarityCurve:
    """Relative trading similarity as a function of portfolio similarity.

    Args:
        pairs: (P, 2) investor row indices.
        trading, portfolios: Per-investor vectors.
        bin_width: Width of the portfolio-similarity bins; the last bin is closed.
        boot_reps: Bootstrap resamples per bin for the 95% interval.
        variant: "all" or "new"; "new" keeps only purchases of stocks the
            investor did not hold at the first date.
        seed: Bootstrap seed.
    """
    if variant not in ("all", "new"):
        raise ValueError(f"variant must be 'all' or 'new', got {variant!r}")
    if variant == "new":
        trading = new_stock_matrix(trading, portfolios)
    pairs = np.asarray(pairs, dtype=np.int64)
    a, b = pairs[:, 0], pairs[:, 1]
    ps = paired_cosine(portfolios[a], portfolios[b])
    ts = paired_cosine(trading[a], trading[b])
    global_mean = float(np.mean(ts)) if len(ts) else 0.0
    if not global_mean > 0:
        raise DegenerateSampleError("degenerate sample: mean trading similarity is zero")

    n_bins = int(round(1.0 / bin_width))
    which = np.minimum(np.floor(ps / bin_width + 1e-9).astype(np.int64), n_bins - 1)
    bins = []
    for k in range(n_bins):
        vals = ts[which == k]
        if len(vals) == 0:
            continue
        lo, hi = _bootstrap_mean_ci(vals, boot_reps, np.random.default_rng([seed, k]))
        bins.append(CurveBin(
            center=round((k + 0.5) * bin_width, 10),
            relative=float(np.mean(vals)) / global_mean,
            ci_low=lo / global_mean,
            ci_high=hi / global_mean,
            pairs=len(vals),
        ))
    return SimilarityCurve(variant, bins, bin_width, global_mean, ps, ts)


def _aggregate_sets(unit: sp.csr_matrix, sets: np.ndarray) -> sp.csr_matrix:
    it, n = sets.shape
    rows = np.repeat(np.arange(it), n)
    sel = sp.csr_matrix((np.full(it * n, 1.0 / n), (rows, sets.ravel())), shape=(it, unit.shape[0]))
    return sel @ unit


def random_group_distributions(portfolios: sp.csr_matrix, trading: sp.csr_matrix,
                               sizes: Sequence[int] = (1, 10, 100), samples: int = 2000,
                               seed: int = 0, investors=None) -> list[DistributionTable]:
    """CDFs of similarity between two disjoint random groups of each size.

    Groups are aggregated as the mean of their members' L1-normalized vectors.
    ``investors`` restricts the draw to those row indices (default: all rows).
    """
    pool = np.arange(portfolios.shape[0]) if investors is None else np.asarray(investors)
    if len(pool) < 2 * max(sizes):
        raise ValueError(f"population of {len(pool)} is smaller than 2 x {max(sizes)}")
    port_unit = normalize_rows(portfolios, "l1")
    trade_unit = normalize_rows(trading, "l1")
    tables = []
    for size in sizes:
        rng = np.random.default_rng([seed, size])
        draws = np.stack([rng.choice(pool, size=2 * size, replace=False) for _ in range(samples)])
        first, second = draws[:, :size], draws[:, size:]
        for kind, unit in (("portfolio", port_unit), ("trading", trade_unit)):
            sims = paired_cosine(_aggregate_sets(unit, first), _aggregate_sets(unit, second))
            cdf = np.searchsorted(np.sort(sims), CDF_GRID + 1e-12, side="right") / len(sims)
            tables.append(DistributionTable(size, kind, CDF_GRID.copy(), cdf, sims))
    return tables


def group_scatter(reports: Sequence[GroupReport]) -> list[tuple[int, float, float, int]]:
    if not reports:
        raise ValueError("no group reports")
    rows = [(r.group_id, r.mean_portfolio_similarity, r.mean_trading_similarity, r.investors)
            for r in reports]
    return sorted(rows)


# --- writers ------------------------------------------------------------------------


def write_curves(path: str | Path, curves: Sequence[SimilarityCurve]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "bin_center", "relative_trading_sim", "ci_low", "ci_high", "pairs"))
        for c in curves:
            for b in c.bins:
                w.writerow((c.variant, f"{b.center:.4f}", f"{b.relative:.9f}",
                            f"{b.ci_low:.9f}", f"{b.ci_high:.9f}", b.pairs))


def write_pair_sample(path: str | Path, pairs: np.ndarray, investors: Sequence[str],
                      curve: SimilarityCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("investor_a", "investor_b", "portfolio_sim", "trading_sim"))
        for (a, b), ps, ts in zip(pairs, curve.portfolio_sim, curve.trading_sim):
            w.writerow((investors[a], investors[b], repr(float(ps)), repr(float(ts))))


def write_distributions(path: str | Path, tables: Sequence[DistributionTable]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("group_size", "kind", "similarity", "cdf"))
        for t in tables:
            for x, y in zip(t.grid, t.cdf):
                w.writerow((t.group_size, t.kind, f"{x:.2f}", f"{y:.6f}"))


def write_scatter(path: str | Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("group_id", "mean_portfolio_sim", "mean_trading_sim", "investors"))
        for gid, ps, ts, n in rows:
            w.writerow((gid, f"{ps:.6f}", f"{ts:.6f}", n))
