"""Greedy two-level map-equation search (node moves plus module aggregation)."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..simnet import SimilarityGraph
from . import _core
from .codelength import plogp
from .flow import FlowDistribution, flow_matrix, flows

MAX_SWEEPS = 200
MAX_REFINEMENTS = 8


@dataclass
class FlowNetwork:
    """Nodes with codebook rates, outgoing flows and symmetric link flows.

    ``out[a]`` counts all flow leaving node ``a``: to other nodes of this
    network and to anything outside it. ``parent_exit`` is the exit rate of the
    module that encloses the whole network (0 for the root).
    """

    rate: np.ndarray
    out: np.ndarray
    links: sp.csr_matrix
    parent_exit: float = 0.0

    @property
    def n(self) -> int:
        return len(self.rate)

    @classmethod
    def from_graph(cls, graph: SimilarityGraph, fl: FlowDistribution | None = None) -> "FlowNetwork":
        fl = fl if fl is not None else flows(graph)
        links = flow_matrix(graph, fl)
        out = np.asarray(links.sum(axis=1)).ravel()
        return cls(fl.node_visit.copy(), out, links, 0.0)

    def subnetwork(self, nodes: np.ndarray, parent_exit: float) -> "FlowNetwork":
        nodes = np.asarray(nodes, dtype=np.int64)
        links = self.links[nodes][:, nodes].tocsr()
        links.sort_indices()
        return FlowNetwork(self.rate[nodes].copy(), self.out[nodes].copy(), links, parent_exit)

    def module_exits(self, partition: np.ndarray) -> np.ndarray:
        part = np.asarray(partition, dtype=np.int64)
        k = int(part.max()) + 1
        exits = np.bincount(part, weights=self.out, minlength=k)
        coo = self.links.tocoo()
        same = part[coo.row] == part[coo.col]
        internal = np.bincount(part[coo.row[same]], weights=coo.data[same], minlength=k)
        return np.maximum(exits - internal, 0.0)

    def codelength(self, partition: np.ndarray) -> float:
        part = np.asarray(partition, dtype=np.int64)
        exits = self.module_exits(part)
        rates = np.bincount(part, weights=self.rate, minlength=len(exits))
        pe = self.parent_exit
        terms = [
            float(plogp(pe + exits.sum())),
            -float(plogp(pe)),
            -2.0 * math.fsum(plogp(exits)),
            math.fsum(plogp(exits + rates)),
            -math.fsum(plogp(self.rate)),
        ]
        return math.fsum(terms)

    def flat_codelength(self) -> float:
        """Codelength with every node in a single module."""
        return self.codelength(np.zeros(self.n, dtype=np.int64))

    def aggregate(self, partition: np.ndarray) -> "FlowNetwork":
        part = np.asarray(partition, dtype=np.int64)
        k = int(part.max()) + 1
        ind = sp.csr_matrix((np.ones(self.n), (np.arange(self.n), part)), shape=(self.n, k))
        links = (ind.T @ self.links @ ind).tocsr()
        links.setdiag(0.0)
        links.eliminate_zeros()
        links.sort_indices()
        out = self.module_exits(part)
        rate = np.bincount(part, weights=self.rate, minlength=k)
        return FlowNetwork(rate, out, links, self.parent_exit)


def canonical_labels(partition: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """Relabel modules 0..k-1 by descending total weight, ties by smallest member."""
    part = np.asarray(partition, dtype=np.int64)
    uniq, inv = np.unique(part, return_inverse=True)
    first = np.full(len(uniq), len(part), dtype=np.int64)
    np.minimum.at(first, inv, np.arange(len(part)))
    if weight is None:
        order = np.argsort(first, kind="stable")
    else:
        w = np.bincount(inv, weights=weight, minlength=len(uniq))
        order = np.lexsort((first, -w))
    relabel = np.empty(len(uniq), dtype=np.int64)
    relabel[order] = np.arange(len(uniq))
    return relabel[inv]


def _moves(net: FlowNetwork, module: np.ndarray, seed: int) -> np.ndarray:
    module = np.ascontiguousarray(module, dtype=np.int64).copy()
    links = net.links
    _core.local_moves(
        links.indptr.astype(np.int64), links.indices.astype(np.int64), links.data.astype(np.float64),
        net.rate.astype(np.float64), net.out.astype(np.float64), module,
        float(net.parent_exit), np.uint64(seed), MAX_SWEEPS,
    )
    return canonical_labels(module)


def _multilevel(net: FlowNetwork, start: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Node moves from ``start``, then repeated contraction and super-node moves."""
    leaf_to_node = _moves(net, start, int(rng.integers(2**63)))
    level = net
    level_part = leaf_to_node
    while True:
        k = int(level_part.max()) + 1
        if k == level.n or k == 1:
            break
        level = level.aggregate(level_part)
        level_part = _moves(level, np.arange(level.n), int(rng.integers(2**63)))
        leaf_to_node = level_part[leaf_to_node]
    return canonical_labels(leaf_to_node)


def _trial(net: FlowNetwork, seed_words: tuple[int, ...]) -> tuple[np.ndarray, float]:
    rng = np.random.default_rng(list(seed_words))
    part = _multilevel(net, np.arange(net.n), rng)
    best = net.codelength(part)
    for _ in range(MAX_REFINEMENTS):
        candidate = _multilevel(net, part, rng)
        length = net.codelength(candidate)
        if length < best - _core.MIN_GAIN:
            part, best = candidate, length
        else:
            break
    return part, best


def search(net: FlowNetwork, seed: int = 0, trials: int = 10, threads: int = 1,
           ) -> tuple[np.ndarray, float]:
    """Best partition over ``trials`` seeded restarts, never worse than the trivial ones.

    The result is identical for any ``threads``: trial ``t`` is seeded from
    ``(seed, t)`` and ties between trials go to the lowest index.
    """
    if net.n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    seeds = [(int(seed), t) for t in range(max(1, int(trials)))]
    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: _trial(net, s), seeds))
    else:
        results = [_trial(net, s) for s in seeds]

    one = np.zeros(net.n, dtype=np.int64)
    singles = np.arange(net.n, dtype=np.int64)
    results.append((one, net.codelength(one)))
    results.append((singles, net.codelength(singles)))
    best_part, best_len = results[0]
    for part, length in results[1:]:
        if length < best_len - _core.MIN_GAIN:
            best_part, best_len = part, length
    return canonical_labels(best_part, net.rate), best_len


def optimize_two_level(graph: SimilarityGraph, seed: int = 0, trials: int = 10,
                       threads: int = 1) -> tuple[np.ndarray, float]:
    """Partition of the graph's nodes minimizing the two-level codelength.

    Returns ``(partition, codelength)`` with module ids ordered by descending flow.
    """
    net = FlowNetwork.from_graph(graph)
    return search(net, seed, trials, threads)
