"""Small builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from folionet import ingest, simnet, vectors
from folionet.simnet import SimilarityGraph
from folionet.synth import generate


def graph_from_dense(w, self_loops=None, sizes=None, threshold=0.9) -> SimilarityGraph:
    """SimilarityGraph from a symmetric dense weight matrix (diagonal ignored)."""
    w = np.asarray(w, dtype=np.float64)
    n = len(w)
    iu = np.triu_indices(n, 1)
    keep = w[iu] > 0
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1).astype(np.int64)
    loops = np.zeros(n) if self_loops is None else np.asarray(self_loops, dtype=np.float64)
    sizes = np.ones(n, dtype=np.int64) if sizes is None else np.asarray(sizes)
    return SimilarityGraph(sizes, edges, w[iu][keep], loops, threshold)


def random_weighted_graph(rng: np.random.Generator, n: int, density: float = 0.5):
    """Connected-ish random symmetric weights, returned with random self-loops."""
    w = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < density:
                w[a, b] = w[b, a] = rng.uniform(0.1, 5.0)
    for a in range(n - 1):  # a path keeps the graph connected
        if w[a, a + 1] == 0:
            w[a, a + 1] = w[a + 1, a] = rng.uniform(0.1, 1.0)
    loops = np.where(rng.random(n) < 0.3, rng.uniform(0, 3, size=n), 0.0)
    return w, loops


def brute_force_suite():
    """The fixed set of 20 small random graphs used for exhaustive comparisons."""
    rng = np.random.default_rng(20240)
    suite = []
    for _ in range(20):
        n = int(rng.integers(4, 9))
        w, loops = random_weighted_graph(rng, n, density=float(rng.uniform(0.2, 0.7)))
        suite.append((w, loops))
    return suite


def market_pipeline(spec):
    """Generated market -> (universe, units, classes)."""
    pair, truth = generate(spec)
    u = ingest.clean_universe(pair)
    units = vectors.portfolio_units(u.shares_t1, u.price_t1)
    classes = simnet.dedupe(units, u.investors)
    return pair, truth, u, units, classes


def market_trading(spec):
    """Generated market -> (universe, portfolio matrix, trading matrix, planted labels)."""
    pair, truth = generate(spec)
    u = ingest.clean_universe(pair)
    port = vectors.portfolio_matrix(u.shares_t1, u.price_t1)
    trade = vectors.trading_matrix(u.shares_t1, u.shares_t2, u.price_t1)
    return u, port, trade, truth.label_array(u.investors)
