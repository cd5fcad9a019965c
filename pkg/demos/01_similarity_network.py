"""
From holdings to a reduced similarity network
=============================================

Nine investors, three distinct portfolios. Identical portfolios collapse
into one node whose self-loop stands in for all the pairs inside it.
"""

# %%
import numpy as np
import scipy.sparse as sp

from folionet import simnet, vectors

# %%
# Holdings in shares, and one price per stock. Stocks 0..2.
prices = np.array([10.0, 25.0, 4.0])
holdings = [
    {0: 6, 1: 1.6},   # 60 / 40 by value
    {1: 4},           # all in stock 1
    {0: 2, 2: 20},    # 20 / 80
]
owners = [0, 1, 0, 2, 0, 1, 2, 0, 1]
for h in holdings:
    print(vectors.portfolio_vector(h, prices))

# %%
# Integer "units" (hundredths at two decimals) keep every dot product exact.
rows = [holdings[k] for k in owners]
shares = sp.lil_matrix((len(rows), 3))
for r, h in enumerate(rows):
    for j, q in h.items():
        shares[r, j] = q
units = vectors.portfolio_units(shares.tocsr(), prices)
print(units.toarray())

# %%
classes = simnet.dedupe(units, [f"inv{r}" for r in range(len(rows))])
for c in classes:
    print(c.n, c.canonical, c.members)

# %%
# Self-loops hold n(n-1)/2 within-class pairs; edges hold n_k * n_m * cosine.
for theta in (0.9, 0.5, 0.1):
    g = simnet.build_graph(classes, theta)
    print(f"theta={theta}: loops={g.self_loops.tolist()} edges={g.edges.tolist()} "
          f"weights={np.round(g.weights, 4).tolist()} total={g.total_weight():.4f}")

# %%
# The total weight equals the sum of investor-pair cosines at or above theta.
x = units.toarray().astype(float)
x /= np.linalg.norm(x, axis=1, keepdims=True)
s = x @ x.T
iu = np.triu_indices(len(x), 1)
pairs = s[iu]
print(pairs[pairs >= 0.1 - 1e-12].sum(), simnet.build_graph(classes, 0.1).total_weight())
