"""Portfolio classes and the reduced similarity network.

Investors with identical rounded portfolio vectors collapse into one node. A
class of ``n`` investors gets a self-loop of weight ``n(n-1)/2`` (one unit per
within-class investor pair), and two classes ``k, m`` whose canonical vectors
have cosine ``s >= threshold`` are joined with weight ``n_k * n_m * s``.

Canonical vectors are kept as integer rounding units. Dot products are then
exact integers and every route to a similarity value produces the same float.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

# Upper bound on candidate pairs materialized per block of the inverted-index join.
_BLOCK_PAIRS = 4_000_000
# Pairs this close to the threshold are re-decided in exact integer arithmetic.
_NEAR = 1e-9


@dataclass
class PortfolioClass:
    class_id: int
    stocks: np.ndarray  # sorted stock indices
    units: np.ndarray  # integer multiples of 10**-round_to
    members: list = field(default_factory=list)
    round_to: int = 2

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def canonical(self) -> dict[int, float]:
        scale = 10 ** self.round_to
        return {int(i): int(u) / scale for i, u in zip(self.stocks, self.units)}


@dataclass
class SimilarityGraph:
    """Weighted undirected graph over portfolio classes (node ``k`` is class ``k``)."""

    sizes: np.ndarray  # investors per node
    edges: np.ndarray  # (E, 2) int64 with edges[:, 0] < edges[:, 1], lexicographically sorted
    weights: np.ndarray  # (E,)
    self_loops: np.ndarray  # (N,)
    threshold: float
    similarity: np.ndarray | None = None  # (E,) class-pair cosine when known

    @property
    def n_nodes(self) -> int:
        return len(self.self_loops)

    @property
    def n_edges(self) -> int:
        return len(self.weights)

    def total_weight(self) -> float:
        return float(np.sum(self.self_loops) + np.sum(self.weights))

    def strength(self) -> np.ndarray:
        s = 2.0 * np.asarray(self.self_loops, dtype=np.float64)
        np.add.at(s, self.edges[:, 0], self.weights)
        np.add.at(s, self.edges[:, 1], self.weights)
        return s

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric CSR adjacency of the cross-class edges (self-loops excluded)."""
        n = self.n_nodes
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        vals = np.concatenate([self.weights, self.weights])
        adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        adj.sort_indices()
        return adj


def class_matrix(classes: Sequence[PortfolioClass], n_stocks: int | None = None) -> sp.csr_matrix:
    indptr = np.zeros(len(classes) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(c.stocks) for c in classes])
    indices = np.concatenate([c.stocks for c in classes]).astype(np.int64) if classes else np.zeros(0, np.int64)
    data = np.concatenate([c.units for c in classes]).astype(np.int64) if classes else np.zeros(0, np.int64)
    if n_stocks is None:
        n_stocks = int(indices.max()) + 1 if len(indices) else 0
    return sp.csr_matrix((data, indices, indptr), shape=(len(classes), n_stocks))


def dedupe(units: sp.csr_matrix, investors: Sequence, round_to: int = 2) -> list[PortfolioClass]:
    """Group investors with identical rounded portfolios.

    Args:
        units: CSR matrix of rounded portfolio units, one row per investor (see
            ``vectors.portfolio_units``). Empty rows are skipped.
        investors: Row labels.

    Classes are numbered in order of their first member.
    """
    units = sp.csr_matrix(units)
    units.sort_indices()
    by_key: dict[tuple, PortfolioClass] = {}
    classes: list[PortfolioClass] = []
    for r, inv in enumerate(investors):
        lo, hi = units.indptr[r], units.indptr[r + 1]
        if lo == hi:
            continue
        idx = units.indices[lo:hi]
        val = units.data[lo:hi]
        key = (idx.tobytes(), val.tobytes())
        cls = by_key.get(key)
        if cls is None:
            cls = PortfolioClass(len(classes), idx.astype(np.int64), val.astype(np.int64), [], round_to)
            by_key[key] = cls
            classes.append(cls)
        cls.members.append(inv)
    return classes


def pair_similarity(dots, sq_a, sq_b) -> np.ndarray:
    """Cosine from exact integer dot products and squared norms."""
    prod = np.asarray(sq_a, dtype=np.int64) * np.asarray(sq_b, dtype=np.int64)
    s = np.asarray(dots, dtype=np.float64) / np.sqrt(prod.astype(np.float64))
    return np.minimum(s, 1.0)


def exact_at_least(dots, sq_a, sq_b, threshold: float) -> np.ndarray:
    """``dot / sqrt(sq_a * sq_b) >= threshold`` decided exactly.

    The threshold is read as the decimal it prints as (0.9 means 9/10), so a
    pair whose cosine is exactly 0.9 is kept even when the float quotient
    lands an ulp below.
    """
    theta = Fraction(repr(float(threshold)))
    num2, den2 = theta.numerator ** 2, theta.denominator ** 2
    return np.array([
        int(d) > 0 and int(d) ** 2 * den2 >= num2 * int(a) * int(b)
        for d, a, b in zip(dots, sq_a, sq_b)
    ], dtype=bool)


def _check_threshold(threshold: float) -> None:
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")


def candidate_blocks(x: sp.csr_matrix, max_pairs: int = _BLOCK_PAIRS):
    """Yield row ranges whose inverted-index fan-out stays near ``max_pairs``."""
    postings_len = np.diff(x.tocsc().indptr)
    work = np.zeros(x.shape[0], dtype=np.int64)
    row_of = np.repeat(np.arange(x.shape[0]), np.diff(x.indptr))
    np.add.at(work, row_of, postings_len[x.indices])
    start, acc = 0, 0
    for r in range(x.shape[0]):
        acc += work[r]
        if acc >= max_pairs:
            yield start, r + 1
            start, acc = r + 1, 0
    if start < x.shape[0]:
        yield start, x.shape[0]


def build_graph(classes: Sequence[PortfolioClass], threshold: float = 0.9,
                n_stocks: int | None = None) -> SimilarityGraph:
    """Thresholded similarity network over portfolio classes.

    Candidate pairs come from an inverted index stock -> classes holding it:
    the sparse product of a block of class rows with the transposed class
    matrix accumulates, for every class sharing at least one stock with a
    block row, the integer dot product over the shared stocks. Pairs with
    disjoint support never appear.
    """
    _check_threshold(threshold)
    x = class_matrix(classes, n_stocks)
    sizes = np.array([c.n for c in classes], dtype=np.int64)
    sq = np.asarray(x.multiply(x).sum(axis=1), dtype=np.int64).ravel()
    postings = x.T.tocsr()

    src, dst, sims = [], [], []
    for lo, hi in candidate_blocks(x):
        dots = (x[lo:hi] @ postings).tocoo()
        rows = dots.row.astype(np.int64) + lo
        keep = dots.col > rows
        rows, cols, d = rows[keep], dots.col[keep].astype(np.int64), dots.data[keep]
        s = pair_similarity(d, sq[rows], sq[cols])
        hit = s >= threshold
        near = np.flatnonzero(np.abs(s - threshold) <= _NEAR)
        if len(near):
            exact = exact_at_least(d[near], sq[rows[near]], sq[cols[near]], threshold)
            hit[near] = exact
            s[near[exact]] = np.maximum(s[near[exact]], threshold)
        src.append(rows[hit])
        dst.append(cols[hit])
        sims.append(s[hit])
    return _assemble(sizes, src, dst, sims, threshold)


def _assemble(sizes, src, dst, sims, threshold) -> SimilarityGraph:
    src = np.concatenate(src) if src else np.zeros(0, np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
    sims = np.concatenate(sims) if sims else np.zeros(0)
    order = np.lexsort((dst, src))
    src, dst, sims = src[order], dst[order], sims[order]
    weights = sizes[src].astype(np.float64) * sizes[dst].astype(np.float64) * sims
    self_loops = sizes.astype(np.float64) * (sizes - 1) / 2.0
    edges = np.stack([src, dst], axis=1) if len(src) else np.zeros((0, 2), np.int64)
    log.info("similarity graph nodes=%d edges=%d threshold=%g", len(sizes), len(weights), threshold)
    return SimilarityGraph(sizes, edges, weights, self_loops, float(threshold), sims)


def write_graph(path: str | Path, graph: SimilarityGraph) -> None:
    """Edge-list file with 1-based node ids; every node's self-loop line precedes its edges."""
    starts = np.searchsorted(graph.edges[:, 0], np.arange(graph.n_nodes + 1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes={graph.n_nodes} threshold={graph.threshold!r}\n")
        for k in range(graph.n_nodes):
            fh.write(f"{k + 1} {k + 1} {float(graph.self_loops[k])!r}\n")
            for e in range(starts[k], starts[k + 1]):
                fh.write(f"{k + 1} {int(graph.edges[e, 1]) + 1} {float(graph.weights[e])!r}\n")


def read_graph(path: str | Path, sizes: np.ndarray | None = None) -> SimilarityGraph:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing graph header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        n = int(meta["nodes"])
        threshold = float(meta["threshold"])
        self_loops = np.zeros(n)
        src, dst, w = [], [], []
        for line in fh:
            a, b, weight = line.split()
            a, b = int(a) - 1, int(b) - 1
            if a == b:
                self_loops[a] = float(weight)
            else:
                if a > b:
                    a, b = b, a
                src.append(a)
                dst.append(b)
                w.append(float(weight))
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((dst, src))
    edges = np.stack([src[order], dst[order]], axis=1) if len(src) else np.zeros((0, 2), np.int64)
    if sizes is None:
        # n(n-1)/2 = w  =>  n = (1 + sqrt(1 + 8w)) / 2
        sizes = np.rint((1 + np.sqrt(1 + 8 * self_loops)) / 2).astype(np.int64)
    return SimilarityGraph(np.asarray(sizes), edges, np.asarray(w)[order], self_loops, threshold)


def write_membership(path: str | Path, classes: Sequence[PortfolioClass]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("class_id", "investor_id"))
        for c in classes:
            for inv in c.members:
                w.writerow((c.class_id + 1, inv))


def read_membership(path: str | Path) -> list[list[str]]:
    """Member lists indexed by 0-based class id."""
    members: dict[int, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            members.setdefault(int(rec["class_id"]) - 1, []).append(rec["investor_id"])
    if not members:
        return []
    out = [[] for _ in range(max(members) + 1)]
    for k, v in members.items():
        out[k] = v
    return out
