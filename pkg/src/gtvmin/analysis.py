"""
Cluster-structure diagnostics: cluster graphs, cluster-wise minimizers,
well-connectedness certificates and the deviation bound for GTV solutions
with a norm penalty.

A cluster ``C`` with hub ``i0`` is well-connected when, for every nonempty
``A`` in ``C \\ {i0}``,

    sum_{i in A} beta_i  <  cut(A, C \\ A),
    beta_i = boundary_i + L_i |dC| / sigma_C + eps_i / lambda,

where ``boundary_i`` is the weight from ``i`` to nodes outside ``C``,
``|dC|`` the total boundary weight, ``L_i`` the gradient Lipschitz constant
of ``l_i``, ``sigma_C`` the strong convexity parameter of the cluster sum and
``eps_i`` the gradient norm of ``l_i`` at the cluster minimizer. The check
is a strict flow-feasibility question and is answered with max-flow/min-cut.
"""

import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.spatial.distance import pdist

from .graph import build_graph, weighted_boundary
from .losses import SumLoss

# boundary cases count as violations: beta_i is inflated by this margin
STRICT_MARGIN = 1e-12
EXHAUSTIVE_MAX = 25


class AssumptionViolation(ValueError):
    """Cluster-wise problem lacks a unique minimizer."""


@dataclass(frozen=True)
class Partition:
    """Disjoint covering of ``1..n`` by clusters (1-based node ids)."""

    clusters: tuple

    def __init__(self, clusters, n=None):
        clusters = tuple(tuple(int(i) for i in c) for c in clusters)
        flat = [i for c in clusters for i in c]
        if any(len(c) == 0 for c in clusters):
            raise ValueError("empty cluster")
        if len(set(flat)) != len(flat):
            raise ValueError("clusters overlap")
        n = len(flat) if n is None else n
        if sorted(flat) != list(range(1, n + 1)):
            raise ValueError(f"clusters must cover nodes 1..{n} exactly")
        object.__setattr__(self, "clusters", clusters)

    @classmethod
    def from_assignment(cls, assignment):
        """``assignment[i-1]`` is the 1-based cluster id of node ``i``."""
        assignment = np.asarray(assignment, dtype=int)
        F = int(assignment.max())
        return cls([list(np.flatnonzero(assignment == c) + 1) for c in range(1, F + 1)])

    @property
    def F(self):
        return len(self.clusters)

    @property
    def n(self):
        return sum(len(c) for c in self.clusters)

    @property
    def assignment(self):
        out = np.empty(self.n, dtype=int)
        for c, members in enumerate(self.clusters):
            out[np.asarray(members) - 1] = c + 1
        return out

    def to_dict(self):
        return {"clusters": [list(c) for c in self.clusters]}


def load_partition(path):
    with open(path) as fh:
        return Partition(json.load(fh)["clusters"])


def save_partition(p, path):
    with open(path, "w") as fh:
        json.dump(p.to_dict(), fh)


@dataclass
class ClusterGraph:
    graph: object
    losses: list


def build_cluster_graph(g, p, losses):
    """
    Merge every cluster into a single node. Edge weights between clusters
    are summed, and each cluster carries the sum of its member losses.
    """
    lab = p.assignment - 1
    agg = {}
    for h, t, a in zip(g.heads, g.tails, g.weights):
        c, c2 = lab[h], lab[t]
        if c != c2:
            key = (min(c, c2) + 1, max(c, c2) + 1)
            agg[key] = agg.get(key, 0.0) + a
    cg = build_graph(p.F, [(i, j, a) for (i, j), a in sorted(agg.items())])
    return ClusterGraph(cg, [SumLoss([losses[i - 1] for i in c]) for c in p.clusters])


def _newton_minimize(loss, tol=1e-10, max_iter=200):
    w = np.zeros(loss.d)
    f = loss.value(w)
    for _ in range(max_iter):
        gr = loss.grad(w)
        if np.linalg.norm(gr) <= tol:
            return w
        H = loss.hessian(w)
        try:
            p = np.linalg.solve(H, gr)
        except np.linalg.LinAlgError as exc:
            raise AssumptionViolation("singular Hessian in cluster-wise problem") from exc
        t = 1.0
        while t > 1e-14:
            w_new = w - t * p
            f_new = loss.value(w_new)
            if f_new <= f - 1e-4 * t * np.dot(gr, p):
                break
            if t == 1.0 and np.linalg.norm(loss.grad(w_new)) < np.linalg.norm(gr):
                break
            t *= 0.5
        w, f = w_new, f_new
    if np.linalg.norm(loss.grad(w)) > tol:
        raise AssumptionViolation("cluster-wise minimizer not found (loss may lack one)")
    return w


def cluster_oracle(loss):
    """
    Minimizer of an aggregated cluster loss.

    Closed form for quadratic members, damped Newton otherwise.

    Raises
    ------
    AssumptionViolation
        If the summed quadratic term is singular (no unique minimizer) or
        Newton fails to converge.
    """
    form = loss.quadratic_form
    if form is not None:
        P, q, _ = form
        ev = np.linalg.eigvalsh(P)
        if ev[0] <= 1e-12 * max(1.0, ev[-1]):
            raise AssumptionViolation("summed quadratic term is singular")
        return np.linalg.solve(P, q)
    return _newton_minimize(loss)


def strong_convexity(loss):
    """``2 lambda_min(P)`` for a quadratic (aggregated) loss."""
    form = loss.quadratic_form
    if form is None:
        raise ValueError("strong convexity is only computed for quadratic losses")
    return 2.0 * float(np.linalg.eigvalsh(form[0])[0])


@dataclass
class FlowResult:
    """
    Outcome of a flow-feasibility check.

    ``flow`` is the signed edge flow (head to tail positive) when feasible;
    ``cut`` is a violating node set (1-based) otherwise.
    """

    feasible: bool
    flow: np.ndarray = None
    cut: list = None
    slack: float = None


def _cut_weight(g, mask):
    cross = mask[g.heads] != mask[g.tails]
    return float(g.weights[cross].sum())


def flow_feasible(g, demands, hub, margin=STRICT_MARGIN):
    """
    Decide whether a flow with node demands ``demands`` (delivered to
    ``hub``) fits strictly inside edge capacities ``g.weights``.

    Equivalent to ``sum_{i in A} demands_i < cut(A)`` for every nonempty
    ``A`` not containing ``hub``. Each demand is inflated by ``margin`` so
    that ties count as infeasible.

    Parameters
    ----------
    g : EmpiricalGraph
        Capacities are the edge weights.
    demands : array_like, shape (n,)
        Nonnegative demand bounds; the hub entry is ignored.
    hub : int
        1-based sink node.

    Returns
    -------
    FlowResult
    """
    beta = np.asarray(demands, dtype=float).copy()
    h0 = int(hub) - 1
    if beta.shape != (g.n,) or not np.all(np.isfinite(beta)):
        raise ValueError("demands must be a finite vector with one entry per node")
    beta[h0] = 0.0
    beta = beta + margin
    beta[h0] = 0.0
    G = nx.DiGraph()
    G.add_nodes_from(range(g.n))
    src = "s"
    G.add_node(src)
    for i in range(g.n):
        if i != h0:
            G.add_edge(src, i, capacity=float(beta[i]))
    for h, t, a in zip(g.heads, g.tails, g.weights):
        G.add_edge(int(h), int(t), capacity=float(a))
        G.add_edge(int(t), int(h), capacity=float(a))
    value, (side, _) = nx.minimum_cut(G, src, h0)
    A = np.zeros(g.n, dtype=bool)
    A[[i for i in side if i != src]] = True
    if A.any():
        excess = float(beta[A].sum()) - _cut_weight(g, A)
        if excess > 0:
            return FlowResult(False, cut=sorted(int(i) + 1 for i in np.flatnonzero(A)),
                              slack=-excess)
    _, fd = nx.maximum_flow(G, src, h0)
    flow = np.array([fd[int(h)][int(t)] - fd[int(t)][int(h)]
                     for h, t in zip(g.heads, g.tails)])
    return FlowResult(True, flow=flow, slack=float(beta.sum() - value))


def exhaustive_feasible(g, demands, hub, margin=STRICT_MARGIN, chunk=1 << 15):
    """
    Subset-enumeration version of :func:`flow_feasible` (exponential; used
    as an oracle). Returns ``(feasible, witness)``.
    """
    beta = np.asarray(demands, dtype=float).copy() + margin
    h0 = int(hub) - 1
    others = np.array([i for i in range(g.n) if i != h0], dtype=np.intp)
    k = others.size
    if k > EXHAUSTIVE_MAX - 1:
        raise ValueError(f"exhaustive check limited to {EXHAUSTIVE_MAX} nodes")
    pos = np.full(g.n, -1)
    pos[others] = np.arange(k)
    bits = np.arange(k, dtype=np.int64)
    for start in range(1, 1 << k, chunk):
        masks = np.arange(start, min(start + chunk, 1 << k), dtype=np.int64)
        B = ((masks[:, None] >> bits) & 1).astype(bool)
        full = np.zeros((masks.size, g.n), dtype=bool)
        full[:, others] = B
        lhs = B.astype(float) @ beta[others]
        cross = full[:, g.heads] != full[:, g.tails]
        rhs = cross.astype(float) @ g.weights
        bad = np.flatnonzero(lhs > rhs)
        if bad.size:
            return False, sorted(int(i) + 1 for i in np.flatnonzero(full[bad[0]]))
    return True, None


@dataclass
class ClusterCertificate:
    cluster: int
    hub: int
    sigma_c: float
    L: np.ndarray
    eps: np.ndarray
    boundary: float
    beta: np.ndarray
    well_connected: bool
    witness: list = None
    w_bar: np.ndarray = None
    members: tuple = field(default=())

    def to_dict(self):
        return {
            "cluster": self.cluster, "hub": self.hub, "members": list(self.members),
            "sigma_c": self.sigma_c, "L": self.L.tolist(), "eps": self.eps.tolist(),
            "boundary": self.boundary, "beta": self.beta.tolist(),
            "well_connected": self.well_connected, "witness": self.witness,
            "w_bar": None if self.w_bar is None else self.w_bar.tolist(),
        }


def check_well_connected(g, p, cluster, losses, lam, hub=None, mode="flow",
                         sigma_c=None, L=None, lipschitz_factor=1.0,
                         margin=STRICT_MARGIN):
    """
    Certify (or refute) well-connectedness of one cluster.

    Parameters
    ----------
    g : EmpiricalGraph
    p : Partition
    cluster : int
        1-based cluster id.
    losses : list of LocalLoss
    lam : float
        GTV regularization strength.
    hub : int, optional
        1-based hub node; when omitted every member is tried and the first
        passing hub is reported.
    mode : {'flow', 'exhaustive'}
    sigma_c, L : optional
        Strong convexity of the cluster sum and per-member Lipschitz
        constants; required when some member loss is not quadratic.
    lipschitz_factor : float
        Multiplier on the ``L_i |dC| / sigma_C`` term.

    Returns
    -------
    ClusterCertificate
    """
    members = list(p.clusters[cluster - 1])
    mlosses = [losses[i - 1] for i in members]
    agg = SumLoss(mlosses)
    quadratic = all(m.quadratic_form is not None for m in mlosses)
    if not quadratic and (sigma_c is None or L is None):
        raise ValueError("sigma_c and L must be supplied for non-quadratic losses")
    w_bar = cluster_oracle(agg)
    if sigma_c is None:
        sigma_c = strong_convexity(agg)
    L = np.array([m.lipschitz for m in mlosses]) if L is None else np.asarray(L, float)
    eps = np.array([np.linalg.norm(m.grad(w_bar)) for m in mlosses])
    boundary = weighted_boundary(g, members)

    inside = np.zeros(g.n, dtype=bool)
    inside[np.asarray(members) - 1] = True
    out_w = np.zeros(g.n)
    cross = inside[g.heads] != inside[g.tails]
    np.add.at(out_w, g.heads[cross], g.weights[cross])
    np.add.at(out_w, g.tails[cross], g.weights[cross])
    if lam > 0:
        eps_term = eps / lam
    else:
        eps_term = np.where(eps > 0, np.inf, 0.0)
    beta = (out_w[np.asarray(members) - 1]
            + lipschitz_factor * L * boundary / sigma_c + eps_term)

    sub = g.subgraph(members)
    hubs = [hub] if hub is not None else members
    first = None
    for h in hubs:
        local = members.index(int(h)) + 1
        if not np.all(np.isfinite(beta)):
            ok, wit = False, [i for i in members if i != h]
        elif mode == "exhaustive":
            ok, wit = exhaustive_feasible(sub, beta, local, margin)
            wit = None if ok else [members[i - 1] for i in wit]
        elif mode == "flow":
            res = flow_feasible(sub, beta, local, margin)
            ok, wit = res.feasible, None if res.feasible else [members[i - 1] for i in res.cut]
        else:
            raise ValueError(f"unknown mode {mode!r}")
        cert = ClusterCertificate(cluster, int(h), float(sigma_c), L, eps, boundary, beta,
                                  ok, wit, w_bar, tuple(members))
        if ok:
            return cert
        if first is None:
            first = cert
    return first


def max_spread(w):
    """Largest pairwise Euclidean distance between rows of ``w``."""
    w = np.asarray(w, dtype=float)
    if len(w) < 2:
        return 0.0
    return float(pdist(w).max())


@dataclass
class BoundReport:
    cluster: int
    certified: bool
    spread: float
    deviation: float
    bound: float
    holds: bool

    @property
    def status(self):
        return "certified" if self.certified else "inconclusive"


def verify_theorem_bound(g, p, losses, lam, penalty, w, certificates=None, tol=1e-6):
    """
    Compare a GTV solution ``w`` (array or SolveResult) with the
    cluster-wise minimizers.

    For each cluster reports the intra-cluster spread of ``w``, the largest
    deviation ``|w_i - w_bar_C|`` and the bound ``2 |dC| lam / sigma_C``.
    ``holds`` requires spread <= tol and deviation <= bound + tol; clusters
    without a passing certificate are marked inconclusive.
    """
    if not penalty.is_norm:
        raise ValueError("the deviation bound needs a norm penalty")
    w = np.asarray(getattr(w, "w_final", w), dtype=float)
    if certificates is None:
        certificates = [check_well_connected(g, p, c, losses, lam) for c in range(1, p.F + 1)]
    out = []
    for c, cert in enumerate(certificates, start=1):
        idx = np.asarray(p.clusters[c - 1]) - 1
        spread = max_spread(w[idx])
        dev = float(np.linalg.norm(w[idx] - cert.w_bar, axis=1).max())
        bound = 2.0 * cert.boundary * lam / cert.sigma_c
        holds = cert.well_connected and spread <= tol and dev <= bound + tol
        out.append(BoundReport(c, cert.well_connected, spread, dev, bound, holds))
    return out
