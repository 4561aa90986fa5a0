"""
Synthetic networked datasets, Gaussian Wasserstein similarity graphs and
evaluation metrics.

All randomness comes from ``numpy.random.default_rng`` (PCG64). Functions
accept either an integer seed or a ``Generator``; passing one generator
through a whole pipeline consumes a single deterministic stream.
"""

import math
from dataclasses import dataclass

import numpy as np

from .analysis import Partition
from .graph import build_graph
from .losses import LocalDataset, LocalLoss, trivial_loss

ZERO_DISTANCE_WEIGHT = 1e9


@dataclass(frozen=True)
class TopologySpec:
    """
    kind : {'sbm', 'chain', 'star'}
    sizes : cluster sizes for 'sbm'
    p_in, p_out : SBM edge probabilities
    n : nodes per cluster for 'chain' (two clusters)
    eps : weight of the inter-cluster chain edge (0 drops the edge)
    leaves : number of peripheral nodes for 'star'
    """

    kind: str
    sizes: tuple = (100, 100)
    p_in: float = 0.5
    p_out: float = 0.01
    n: int = 50
    eps: float = 0.0
    leaves: int = 49

    def __post_init__(self):
        if self.kind not in ("sbm", "chain", "star"):
            raise ValueError(f"unknown topology {self.kind!r}")
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if min(self.sizes) < 1 or self.n < 1 or self.leaves < 1:
            raise ValueError("sizes must be >= 1")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")


@dataclass(frozen=True)
class LabelModelSpec:
    """
    d : feature dimension
    sigma : label noise standard deviation
    m : samples per node
    scheme : 'bernoulli' (cluster vectors with iid entries in {0, 0.5}),
        'fixed' (``vectors`` per cluster) or 'gaussian' (iid N(0, I) per node)
    """

    d: int = 2
    sigma: float = 0.0
    m: int = 5
    scheme: str = "fixed"
    vectors: tuple = ((2.0, 2.0), (-2.0, 2.0))

    def __post_init__(self):
        if self.scheme not in ("bernoulli", "fixed", "gaussian"):
            raise ValueError(f"unknown ground-truth scheme {self.scheme!r}")
        if self.m < 1 or self.d < 1 or self.sigma < 0:
            raise ValueError("need m >= 1, d >= 1 and sigma >= 0")


def gen_graph(spec, seed=None):
    """Sample a graph and its ground-truth partition."""
    rng = np.random.default_rng(seed)
    if spec.kind == "sbm":
        sizes = list(spec.sizes)
        n = sum(sizes)
        labels = np.repeat(np.arange(len(sizes)), sizes)
        iu, ju = np.triu_indices(n, k=1)
        same = labels[iu] == labels[ju]
        prob = np.where(same, spec.p_in, spec.p_out)
        keep = rng.random(iu.size) < prob
        recs = [(int(i) + 1, int(j) + 1, 1.0) for i, j in zip(iu[keep], ju[keep])]
        clusters, start = [], 1
        for s in sizes:
            clusters.append(list(range(start, start + s)))
            start += s
        return build_graph(n, recs), Partition(clusters)
    if spec.kind == "chain":
        k = spec.n
        recs = [(i, i + 1, 1.0) for i in range(1, 2 * k) if i != k]
        if spec.eps > 0:
            recs.append((k, k + 1, spec.eps))
        return (build_graph(2 * k, recs),
                Partition([list(range(1, k + 1)), list(range(k + 1, 2 * k + 1))]))
    n = spec.leaves + 1
    recs = [(1, i, 1.0) for i in range(2, n + 1)]
    return build_graph(n, recs), Partition([[i] for i in range(1, n + 1)])


def gen_labels(partition, spec, seed=None):
    """
    Local datasets from a noisy linear model ``y = x'w_i + sigma * noise``
    with standard normal features.

    Returns
    -------
    datasets : list of LocalDataset
        One per node in node order.
    w_true : ndarray, shape (n, d)
    """
    rng = np.random.default_rng(seed)
    n, d = partition.n, spec.d
    lab = partition.assignment - 1
    if spec.scheme == "bernoulli":
        vecs = 0.5 * (rng.random((partition.F, d)) < 0.5)
        w_true = vecs[lab]
    elif spec.scheme == "fixed":
        vecs = np.asarray(spec.vectors, dtype=float)
        if vecs.shape != (partition.F, d):
            raise ValueError(f"need {partition.F} vectors of length {d}")
        w_true = vecs[lab]
    else:
        w_true = rng.standard_normal((n, d))
    datasets = []
    for i in range(n):
        X = rng.standard_normal((spec.m, d))
        y = X @ w_true[i] + spec.sigma * rng.standard_normal(spec.m)
        datasets.append(LocalDataset(X, y))
    return datasets, w_true


def make_losses(datasets, kind="squared", eta=0.0):
    return [LocalLoss(kind, ds, eta=eta) for ds in datasets]


def sample_nodes(n, rho, seed=None):
    """``ceil(rho * n)`` nodes drawn uniformly without replacement (sorted, 1-based)."""
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    k = math.ceil(rho * n - 1e-12)
    return sorted(int(i) + 1 for i in rng.choice(n, size=k, replace=False))


def apply_sampling_mask(losses, sampled):
    """
    Replace the losses of nodes outside ``sampled`` (1-based ids) by the
    trivial loss. Returns the new list and the sampled fraction.
    """
    n = len(losses)
    keep = set(int(i) for i in sampled)
    if any(not 1 <= i <= n for i in keep):
        raise ValueError(f"sampled node outside 1..{n}")
    out = [loss if i + 1 in keep else trivial_loss(loss.d) for i, loss in enumerate(losses)]
    return out, len(keep) / n


def _sqrtm_psd(S):
    ev, V = np.linalg.eigh(S)
    ev = np.where(ev < 1e-12 * max(1.0, abs(ev).max(initial=0.0)), 0.0, ev)
    return (V * np.sqrt(ev)) @ V.T


def _check_cov(S):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, abs(S).max())):
        raise ValueError("covariance must be a symmetric square matrix")
    return 0.5 * (S + S.T)


def gaussian_wasserstein(mu1, Sigma1, mu2, Sigma2):
    """Squared 2-Wasserstein distance between two Gaussians."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    S1, S2 = _check_cov(Sigma1), _check_cov(Sigma2)
    r1 = _sqrtm_psd(S1)
    cross = _sqrtm_psd(r1 @ S2 @ r1)
    val = float(np.sum((mu1 - mu2) ** 2) + np.trace(S1) + np.trace(S2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def build_threshold_graph(stats, eta):
    """
    Connect nodes whose Gaussian statistics are within Wasserstein distance
    ``eta``; the edge weight is the inverse distance (capped at 1e9 for
    coincident statistics).

    Parameters
    ----------
    stats : list of (mu, Sigma)
    eta : float
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    n = len(stats)
    recs = []
    for i in range(n):
        for j in range(i + 1, n):
            W = gaussian_wasserstein(stats[i][0], stats[i][1], stats[j][0], stats[j][1])
            if W <= eta:
                weight = ZERO_DISTANCE_WEIGHT if W <= 1.0 / ZERO_DISTANCE_WEIGHT else 1.0 / W
                recs.append((i + 1, j + 1, weight))
    return build_graph(n, recs)


def mse(w_hat, w_true):
    """Node-averaged squared Euclidean estimation error."""
    w_hat = np.asarray(w_hat, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if w_hat.shape != w_true.shape:
        raise ValueError(f"shape mismatch {w_hat.shape} vs {w_true.shape}")
    if w_hat.ndim == 1:
        return float(np.mean((w_hat - w_true) ** 2))
    return float(np.mean(np.sum((w_hat - w_true) ** 2, axis=1)))


def validation_error(w_hat, datasets):
    """Node average of the mean squared prediction error on validation sets."""
    w_hat = np.asarray(w_hat, dtype=float)
    if len(datasets) != len(w_hat):
        raise ValueError("need one validation set per node")
    errs = []
    for i, ds in enumerate(datasets):
        if ds is None or ds.m == 0:
            raise ValueError(f"node {i + 1} has an empty validation set")
        errs.append(np.mean((ds.X @ w_hat[i] - ds.y) ** 2))
    return float(np.mean(errs))


def split_dataset(ds, ratio=0.3, seed=None):
    """Seeded shuffle split into ``(train, validation)``; both parts nonempty."""
    if ds.m < 2:
        raise ValueError("need at least two samples to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.m)
    n_val = min(max(int(round(ratio * ds.m)), 1), ds.m - 1)
    val, tr = perm[:n_val], perm[n_val:]
    return LocalDataset(ds.X[tr], ds.y[tr]), LocalDataset(ds.X[val], ds.y[val])
