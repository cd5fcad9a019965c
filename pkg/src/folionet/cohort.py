"""Within-group versus outside-group trading similarity.

The bootstrap draws, per iteration, two disjoint sets ``i1, i2`` of ``n``
investors from a group and one set ``i3`` of ``n`` investors from outside it,
aggregates each set's trading vectors (mean of L1-normalized members) and
records ``delta = sim(i1, i2) - sim(i1, i3)``. The significant set size is the
smallest ``n`` for which the fraction of iterations with ``delta > 0`` reaches
``alpha``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .vectors import normalize_rows, paired_cosine

NOT_REACHED = "not reached"


class BootstrapError(ValueError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    N: int = 1000
    n: int = 1
    alpha: float = 0.95
    n_max: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 1 <= self.n <= self.n_max:
            raise ValueError(f"need 1 <= n <= n_max, got n={self.n}, n_max={self.n_max}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class BootstrapOutcome:
    deltas: np.ndarray
    inside: np.ndarray
    outside: np.ndarray

    @property
    def indicator(self) -> np.ndarray:
        return self.deltas > 0

    @property
    def indicator_fraction(self) -> float:
        return float(np.mean(self.indicator))

    @property
    def s_inside(self) -> float:
        return float(np.mean(self.inside))

    @property
    def s_outside(self) -> float:
        return float(np.mean(self.outside))


@dataclass
class GroupReport:
    group_id: int
    investors: int
    mean_stocks: float
    top_stocks: list[tuple[str, float]]
    significant_set_size: int | None
    mean_portfolio_similarity: float
    mean_trading_similarity: float

    def table_row(self) -> str:
        top = ", ".join(f"{frac:.0%} {name}" for name, frac in self.top_stocks)
        sss = NOT_REACHED if self.significant_set_size is None else self.significant_set_size
        return (f"{self.group_id}: {self.investors:,} investors, mean stocks "
                f"{self.mean_stocks:.1f}, significant set size {sss}, {top}")


def _split_population(group, population):
    group = np.unique(np.asarray(group, dtype=np.int64))
    population = np.unique(np.asarray(population, dtype=np.int64))
    outside = np.setdiff1d(population, group, assume_unique=True)
    return group, outside


def _check_sizes(n: int, group: np.ndarray, outside: np.ndarray) -> None:
    if len(group) < 2 * n:
        raise BootstrapError(
            f"group has {len(group)} investors; need at least {2 * n} for two disjoint sets of {n}"
        )
    if len(outside) < n:
        raise BootstrapError(
            f"only {len(outside)} investors outside the group; need at least {n}"
        )


def _set_means(draws: np.ndarray, n_rows: int) -> sp.csr_matrix:
    """Sparse (iterations x investors) matrix averaging each row of ``draws``."""
    it, n = draws.shape
    rows = np.repeat(np.arange(it), n)
    return sp.csr_matrix((np.full(it * n, 1.0 / n), (rows, draws.ravel())), shape=(it, n_rows))


def bootstrap_compare(group, population, trading: sp.csr_matrix,
                      cfg: BootstrapConfig) -> BootstrapOutcome:
    """Run ``cfg.N`` within/outside comparisons at set size ``cfg.n``.

    Args:
        group: Row indices (into ``trading``) of the group's investors.
        population: Row indices of all investors considered; the outside
            sample is drawn from ``population`` minus ``group``.
        trading: Trading vectors, one row per investor.
        cfg: Iteration count, set size and seed.

    Iteration ``i`` draws from a generator seeded with ``(cfg.seed, i)``, so any
    split of the iterations across workers reproduces the sequential result.
    """
    group, outside = _split_population(group, population)
    n = cfg.n
    _check_sizes(n, group, outside)

    d_in = np.empty((cfg.N, 2 * n), dtype=np.int64)
    d_out = np.empty((cfg.N, n), dtype=np.int64)
    for i in range(cfg.N):
        rng = np.random.default_rng([cfg.seed, i])
        d_in[i] = rng.choice(group, size=2 * n, replace=False)
        d_out[i] = rng.choice(outside, size=n, replace=False)

    unit = normalize_rows(trading, "l1")
    n_rows = trading.shape[0]
    agg1 = _set_means(d_in[:, :n], n_rows) @ unit
    agg2 = _set_means(d_in[:, n:], n_rows) @ unit
    agg3 = _set_means(d_out, n_rows) @ unit
    inside = paired_cosine(agg1, agg2)
    outside_sim = paired_cosine(agg1, agg3)
    return BootstrapOutcome(inside - outside_sim, inside, outside_sim)


def significant_set_size(group, population, trading: sp.csr_matrix, N: int = 1000,
                         alpha: float = 0.95, n_max: int = 100, seed: int = 0) -> int | None:
    """Smallest set size whose indicator fraction reaches ``alpha``; ``None`` if never.

    Sizes are scanned upward from 1 to ``min(n_max, |group| // 2, |outside|)``.
    """
    group, outside = _split_population(group, population)
    _check_sizes(1, group, outside)
    limit = min(n_max, len(group) // 2, len(outside))
    for n in range(1, limit + 1):
        cfg = BootstrapConfig(N=N, n=n, alpha=alpha, n_max=max(n_max, n), seed=seed)
        if bootstrap_compare(group, outside, trading, cfg).indicator_fraction >= alpha:
            return n
    return None


def _mean_pair_similarity(m: sp.csr_matrix, members: np.ndarray, sample_pairs: int,
                          rng: np.random.Generator, exact_limit: int = 2000) -> float:
    k = len(members)
    if k < 2:
        return float("nan")
    unit = normalize_rows(m[members])
    if k <= exact_limit:
        gram = (unit @ unit.T).toarray()
        np.clip(gram, 0.0, 1.0, out=gram)
        iu = np.triu_indices(k, 1)
        return float(np.mean(gram[iu]))
    a = rng.integers(0, k, size=sample_pairs)
    b = rng.integers(0, k - 1, size=sample_pairs)
    b = b + (b >= a)
    return float(np.mean(paired_cosine(unit[a], unit[b])))


def group_stats(group, portfolios: sp.csr_matrix, trading: sp.csr_matrix,
                stock_names: Sequence[str] | None = None, sample_pairs: int = 200_000,
                seed: int = 0, group_id: int = 0,
                significant: int | None = None) -> GroupReport:
    """Size, diversification, top holdings and mean pairwise similarities of a group.

    Mean similarities are exact over all member pairs up to 2,000 members and
    otherwise averaged over ``sample_pairs`` random distinct pairs. A pair
    involving an empty vector scores 0.
    """
    members = np.unique(np.asarray(group, dtype=np.int64))
    if len(members) == 0:
        raise ValueError("group must be non-empty")
    sub = sp.csr_matrix(portfolios[members])
    held = (sub != 0)
    mean_stocks = float(np.mean(np.diff(held.indptr)))
    holders = np.asarray(held.sum(axis=0)).ravel()
    frac = holders / len(members)
    order = np.lexsort((np.arange(len(frac)), -frac))
    names = stock_names if stock_names is not None else [str(j) for j in range(len(frac))]
    top = [(names[j], float(frac[j])) for j in order[:3] if frac[j] > 0]
    rng = np.random.default_rng([seed, group_id])
    return GroupReport(
        group_id=group_id,
        investors=len(members),
        mean_stocks=mean_stocks,
        top_stocks=top,
        significant_set_size=significant,
        mean_portfolio_similarity=_mean_pair_similarity(portfolios, members, sample_pairs, rng),
        mean_trading_similarity=_mean_pair_similarity(trading, members, sample_pairs, rng),
    )


REPORT_COLUMNS = (
    "group_id", "investors", "mean_stocks", "top1_stock", "top1_frac", "top2_stock", "top2_frac",
    "top3_stock", "top3_frac", "significant_set_size", "mean_portfolio_sim", "mean_trading_sim",
)


def write_reports(path: str | Path, reports: Sequence[GroupReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            top = list(r.top_stocks) + [("", float("nan"))] * (3 - len(r.top_stocks))
            flat = []
            for name, frac in top[:3]:
                flat += [name, "" if np.isnan(frac) else f"{frac:.6f}"]
            sss = NOT_REACHED if r.significant_set_size is None else r.significant_set_size
            w.writerow([r.group_id, r.investors, f"{r.mean_stocks:.6f}", *flat, sss,
                        f"{r.mean_portfolio_similarity:.6f}", f"{r.mean_trading_similarity:.6f}"])


def read_reports(path: str | Path) -> list[GroupReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            top = [(rec[f"top{k}_stock"], float(rec[f"top{k}_frac"]))
                   for k in (1, 2, 3) if rec[f"top{k}_stock"]]
            sss = rec["significant_set_size"]
            out.append(GroupReport(
                group_id=int(rec["group_id"]),
                investors=int(rec["investors"]),
                mean_stocks=float(rec["mean_stocks"]),
                top_stocks=top,
                significant_set_size=None if sss == NOT_REACHED else int(sss),
                mean_portfolio_similarity=float(rec["mean_portfolio_sim"]),
                mean_trading_similarity=float(rec["mean_trading_sim"]),
            ))
    return out
