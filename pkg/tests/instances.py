"""Random problem generators shared by the tests."""

import numpy as np

from gtvmin.analysis import Partition, check_well_connected
from gtvmin.graph import build_graph
from gtvmin.losses import squared_loss


def random_graph(rng, n=None, p=0.4):
    n = n or int(rng.integers(2, 15))
    recs = [(i, j, rng.uniform(0.1, 3.0)) for i in range(1, n + 1)
            for j in range(i + 1, n + 1) if rng.random() < p]
    return build_graph(n, recs)


def random_squared_losses(rng, n, d, m=3):
    return [squared_loss(rng.standard_normal((m, d)), rng.standard_normal(m)) for _ in range(n)]


def two_cluster_instance(rng, max_size=8, noise=0.01):
    """
    Two dense clusters (internal weights in [1, 2], spanning path added)
    joined by one or two weak edges, with squared losses around a
    per-cluster parameter vector.
    """
    sizes = rng.integers(2, max_size + 1, size=2)
    d = int(rng.integers(1, 4))
    n = int(sizes.sum())
    clusters = [list(range(1, sizes[0] + 1)), list(range(sizes[0] + 1, n + 1))]
    recs = {}
    for c in clusters:
        for a in c:
            for b in c:
                if a < b and rng.random() < 0.8:
                    recs[(a, b)] = rng.uniform(1, 2)
        for a, b in zip(c[:-1], c[1:]):
            recs.setdefault((a, b), rng.uniform(1, 2))
    for _ in range(int(rng.integers(1, 3))):
        a, b = int(rng.choice(clusters[0])), int(rng.choice(clusters[1]))
        recs.setdefault((a, b), rng.uniform(0.01, 0.05))
    g = build_graph(n, [(a, b, w) for (a, b), w in recs.items()])
    part = Partition(clusters)
    w_bar = rng.standard_normal((2, d))
    losses = []
    for c, members in enumerate(clusters):
        for _ in members:
            X = rng.standard_normal((5, d))
            losses.append(squared_loss(X, X @ w_bar[c] + noise * rng.standard_normal(5)))
    return g, part, losses


LAMBDA_GRID = (0.1, 0.3, 1.0, 3.0, 10.0, 30.0)


def certify(g, part, losses, grid=LAMBDA_GRID):
    """First lambda on the grid at which every cluster is certified, with certificates."""
    for lam in grid:
        certs = [check_well_connected(g, part, c, losses, lam) for c in range(1, part.F + 1)]
        if all(c.well_connected for c in certs):
            return lam, certs
    return None, None
