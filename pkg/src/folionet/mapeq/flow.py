"""Random-walk flow on a weighted undirected similarity graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..simnet import SimilarityGraph


class DegenerateGraphError(ValueError):
    pass


@dataclass
class FlowDistribution:
    """Stationary visit rates and per-direction link flows.

    For an undirected graph the walker's stationary distribution is
    proportional to node strength, where a self-loop of weight ``w`` adds
    ``2w``. ``edge_flow[e]`` is the rate of stepping along edge ``e`` in one
    given direction, ``w_e / total``; the opposite direction carries the same
    amount. Self-loop steps stay inside the node and never produce exit flow.
    """

    node_visit: np.ndarray
    edge_flow: np.ndarray
    self_flow: np.ndarray
    total: float


def flows(graph: SimilarityGraph) -> FlowDistribution:
    strength = graph.strength()
    total = float(np.sum(strength))
    if not total > 0:
        raise DegenerateGraphError("degenerate graph: all weights are zero")
    return FlowDistribution(
        node_visit=strength / total,
        edge_flow=np.asarray(graph.weights, dtype=np.float64) / total,
        self_flow=2.0 * np.asarray(graph.self_loops, dtype=np.float64) / total,
        total=total,
    )


def flow_matrix(graph: SimilarityGraph, fl: FlowDistribution) -> sp.csr_matrix:
    """Symmetric CSR matrix of per-direction link flows (no diagonal)."""
    n = graph.n_nodes
    e = graph.edges
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    vals = np.concatenate([fl.edge_flow, fl.edge_flow])
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.sort_indices()
    return m
