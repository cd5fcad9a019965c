"""Portfolio vectors, trading vectors and cosine similarity.

Single vectors are sparse mappings ``{stock_index: value}``; the ``*_matrix``
functions do the same work for a whole universe at once on CSR matrices with
one row per investor.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

SparseVector = Mapping[int, float]

# Guards half-way cases such as 0.145 that binary floats store just below the half.
_ROUND_GUARD = 1e-9


class VectorError(ValueError):
    pass


def round_half_away(x, places: int = 2):
    """Round non-negative values half away from zero to ``places`` decimals, returning integer units."""
    scale = 10 ** places
    return np.floor(np.asarray(x, dtype=np.float64) * scale + 0.5 + _ROUND_GUARD).astype(np.int64)


def portfolio_vector(holdings: Mapping[int, int], prices, round_to: int = 2) -> dict[int, float]:
    """Capital proportions per stock, rounded to ``round_to`` decimals.

    Entries that round to zero are dropped and the result is not renormalized.
    """
    values = {i: s * prices[i] for i, s in holdings.items() if s > 0}
    total = math.fsum(values.values())
    if not total > 0:
        raise VectorError("empty portfolio")
    scale = 10 ** round_to
    out = {}
    for i in sorted(values):
        units = int(round_half_away(values[i] / total, round_to))
        if units:
            out[i] = units / scale
    return out


def trading_vector(holdings_t1: Mapping[int, int], holdings_t2: Mapping[int, int],
                   prices_t1) -> dict[int, float]:
    """Capital bought between the two dates, valued at first-date prices.

    Only positive differences are kept, so an investor who only sold gets an
    empty vector.
    """
    out = {}
    for i in sorted(set(holdings_t1) | set(holdings_t2)):
        diff = (holdings_t2.get(i, 0) - holdings_t1.get(i, 0)) * prices_t1[i]
        if diff > 0:
            out[i] = diff
    return out


def new_stock_filter(trading: SparseVector, portfolio_t1: SparseVector) -> dict[int, float]:
    """Keep only purchases of stocks absent from the first-date portfolio."""
    return {i: v for i, v in trading.items() if not portfolio_t1.get(i, 0)}


def _as_pairs(x):
    if isinstance(x, Mapping):
        return x
    arr = np.asarray(x, dtype=np.float64)
    return {int(i): float(arr[i]) for i in np.flatnonzero(arr)}


def cosine(x, y) -> float:
    """Normalized dot product of two non-negative vectors (mappings or 1-D arrays).

    Raises VectorError when either vector is zero.
    """
    x, y = _as_pairs(x), _as_pairs(y)
    nx = math.sqrt(math.fsum(v * v for v in x.values()))
    ny = math.sqrt(math.fsum(v * v for v in y.values()))
    if nx == 0 or ny == 0:
        raise VectorError("undefined similarity: zero vector")
    if len(y) < len(x):
        x, y = y, x
    dot = math.fsum(v * y[i] for i, v in x.items() if i in y)
    return min(1.0, max(0.0, dot / (nx * ny)))


def cosine_or_zero(x, y) -> float:
    try:
        return cosine(x, y)
    except VectorError:
        return 0.0


def aggregate(vectors: Sequence[SparseVector]) -> dict[int, float]:
    """Mean of the L1-normalized members; zero members contribute nothing but count."""
    if not vectors:
        raise VectorError("cannot aggregate an empty collection")
    acc: dict[int, float] = {}
    for vec in vectors:
        vec = _as_pairs(vec)
        total = math.fsum(vec.values())
        if total <= 0:
            continue
        for i, v in vec.items():
            acc[i] = acc.get(i, 0.0) + v / total
    n = len(vectors)
    return {i: acc[i] / n for i in sorted(acc) if acc[i] > 0}


# --- whole-universe versions -------------------------------------------------


def value_matrix(shares: sp.spmatrix, prices: np.ndarray) -> sp.csr_matrix:
    m = sp.csr_matrix(sp.csr_matrix(shares, dtype=np.float64) @ sp.diags(np.asarray(prices, dtype=np.float64)))
    m.sum_duplicates()
    m.sort_indices()
    return m


def portfolio_units(shares: sp.spmatrix, prices: np.ndarray, round_to: int = 2) -> sp.csr_matrix:
    """Rounded portfolio proportions as integer multiples of 10**-round_to.

    Rows with no positive value come back empty.
    """
    values = value_matrix(shares, prices).tocsr()
    values.sum_duplicates()
    values.sort_indices()
    values.data[values.data < 0] = 0
    values.eliminate_zeros()
    totals = np.asarray(values.sum(axis=1)).ravel()
    row_of = np.repeat(np.arange(values.shape[0]), np.diff(values.indptr))
    rounded = round_half_away(values.data / totals[row_of], round_to)
    units = sp.csr_matrix((rounded, values.indices.copy(), values.indptr.copy()), shape=values.shape)
    units.eliminate_zeros()
    return units


def portfolio_matrix(shares: sp.spmatrix, prices: np.ndarray, round_to: int = 2) -> sp.csr_matrix:
    units = portfolio_units(shares, prices, round_to)
    out = units.astype(np.float64)
    out.data /= 10 ** round_to
    return out


def trading_matrix(shares_t1: sp.spmatrix, shares_t2: sp.spmatrix,
                   prices_t1: np.ndarray) -> sp.csr_matrix:
    diff = sp.csr_matrix(shares_t2, dtype=np.int64) - sp.csr_matrix(shares_t1, dtype=np.int64)
    out = value_matrix(diff, prices_t1).tocsr()
    out.data[out.data < 0] = 0
    out.eliminate_zeros()
    out.sort_indices()
    return out


def new_stock_matrix(trading: sp.csr_matrix, portfolios: sp.csr_matrix) -> sp.csr_matrix:
    held = (portfolios != 0).astype(np.float64)
    out = trading - trading.multiply(held)
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def normalize_rows(m: sp.spmatrix, norm: str = "l2") -> sp.csr_matrix:
    """Scale rows to unit L1 or L2 norm; zero rows stay zero."""
    m = sp.csr_matrix(m, dtype=np.float64, copy=True)
    if norm == "l2":
        scale = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    elif norm == "l1":
        scale = np.asarray(np.abs(m).sum(axis=1)).ravel()
    else:
        raise ValueError(f"unknown norm {norm!r}")
    inv = np.zeros_like(scale)
    np.divide(1.0, scale, out=inv, where=scale > 0)
    return sp.csr_matrix(sp.diags(inv) @ m)


def paired_cosine(a: sp.spmatrix, b: sp.spmatrix) -> np.ndarray:
    """Row-wise cosine between matching rows of ``a`` and ``b``; zero rows score 0."""
    a = normalize_rows(a)
    b = normalize_rows(b)
    sims = np.asarray(a.multiply(b).sum(axis=1)).ravel()
    return np.clip(sims, 0.0, 1.0)


def row_dicts(m: sp.csr_matrix) -> list[dict[int, float]]:
    m = sp.csr_matrix(m)
    return [
        dict(zip(m.indices[m.indptr[r]:m.indptr[r + 1]].tolist(),
                 m.data[m.indptr[r]:m.indptr[r + 1]].tolist()))
        for r in range(m.shape[0])
    ]


def write_vectors(path: str | Path, investors: Sequence[str], m: sp.csr_matrix,
                  decimals: int | None = None) -> None:
    """Dump a vector matrix as ``investor_id,stock_index,value`` rows (empty rows omitted)."""
    m = sp.csr_matrix(m)
    m.sort_indices()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("investor_id", "stock_index", "value"))
        for r, inv in enumerate(investors):
            for k in range(m.indptr[r], m.indptr[r + 1]):
                v = float(m.data[k])
                w.writerow((inv, int(m.indices[k]), f"{v:.{decimals}f}" if decimals else repr(v)))


def read_vectors(path: str | Path, investors: Sequence[str], n_stocks: int) -> sp.csr_matrix:
    index = {inv: r for r, inv in enumerate(investors)}
    rows, cols, vals = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(index[rec["investor_id"]])
            cols.append(int(rec["stock_index"]))
            vals.append(float(rec["value"]))
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(investors), n_stocks), dtype=np.float64)
    m.sort_indices()
    return m


def support_sizes(m: sp.csr_matrix) -> np.ndarray:
    return np.diff(sp.csr_matrix(m).indptr)

