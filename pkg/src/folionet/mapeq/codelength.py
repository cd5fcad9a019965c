"""Two-level map-equation codelength.

For a partition M of the nodes into modules i,

    L(M) = q H(Q) + sum_i p_i H(P^i)

where ``q_i`` is the rate at which the walker leaves module i, ``q = sum q_i``,
``H(Q)`` is the entropy of the normalized exit rates, ``p_i = q_i + sum of
visit rates in i`` and ``H(P^i)`` is the entropy of {q_i, visit rates in i}
normalized by ``p_i``. All logarithms are base 2, so L is in bits per step.
"""

from __future__ import annotations

import math

import numpy as np

from ..simnet import SimilarityGraph
from .flow import FlowDistribution, flows


def plogp(x) -> np.ndarray:
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def module_exits(graph: SimilarityGraph, fl: FlowDistribution, partition) -> np.ndarray:
    """Exit rate of every module id in ``partition`` (length max id + 1)."""
    part = np.asarray(partition, dtype=np.int64)
    n_mod = int(part.max()) + 1 if len(part) else 0
    exits = np.zeros(n_mod)
    a, b = part[graph.edges[:, 0]], part[graph.edges[:, 1]]
    cross = a != b
    np.add.at(exits, a[cross], fl.edge_flow[cross])
    np.add.at(exits, b[cross], fl.edge_flow[cross])
    return exits


def codelength(graph: SimilarityGraph, partition, fl: FlowDistribution | None = None) -> float:
    """Codelength in bits of ``partition`` (one module id per node)."""
    if fl is None:
        fl = flows(graph)
    part = np.asarray(partition, dtype=np.int64)
    if len(part) != graph.n_nodes:
        raise ValueError("partition must assign every node")
    exits = module_exits(graph, fl, part)
    visits = np.bincount(part, weights=fl.node_visit, minlength=len(exits))
    terms = [
        float(plogp(exits.sum())),
        -2.0 * math.fsum(plogp(exits)),
        -math.fsum(plogp(fl.node_visit)),
        math.fsum(plogp(exits + visits)),
    ]
    return max(0.0, math.fsum(terms))


def one_module_codelength(graph: SimilarityGraph, fl: FlowDistribution | None = None) -> float:
    if fl is None:
        fl = flows(graph)
    return max(0.0, -math.fsum(plogp(fl.node_visit)))
