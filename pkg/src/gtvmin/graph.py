"""
Empirical graph data model.

Nodes are identified with ``1..n`` at every public boundary; arrays are
0-based internally. Node fields are arrays whose first axis indexes nodes,
edge fields are arrays whose first axis indexes edges in storage order.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Invalid graph description (the offending record is in the message)."""


@dataclass(frozen=True)
class EmpiricalGraph:
    """
    Undirected weighted graph with canonical edge orientation.

    Every undirected edge ``{i, j}`` is stored once with head ``min(i, j)``
    and tail ``max(i, j)``.

    Attributes
    ----------
    n : int
        Number of nodes.
    heads, tails : ndarray of int
        0-based head and tail of each edge, ``heads < tails``.
    weights : ndarray of float
        Strictly positive edge weights.
    """

    n: int
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    _degree: np.ndarray = field(init=False, repr=False, compare=False)
    _incident: tuple = field(init=False, repr=False, compare=False)
    _D: object = field(init=False, repr=False, compare=False)
    _Dt: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("heads", "tails", "weights"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        deg = np.bincount(self.heads, minlength=self.n) + np.bincount(
            self.tails, minlength=self.n)
        deg.setflags(write=False)
        object.__setattr__(self, "_degree", deg)
        incident = [[] for _ in range(self.n)]
        for e, (h, t) in enumerate(zip(self.heads, self.tails)):
            incident[h].append((e, 1))
            incident[t].append((e, -1))
        object.__setattr__(self, "_incident", tuple(tuple(x) for x in incident))
        E = len(self.weights)
        rows = np.repeat(np.arange(E), 2)
        cols = np.stack([self.heads, self.tails], axis=1).reshape(-1)
        vals = np.tile([1.0, -1.0], E)
        D = sp.csr_matrix((vals, (rows, cols)), shape=(E, self.n))
        object.__setattr__(self, "_D", D)
        object.__setattr__(self, "_Dt", D.T.tocsr())

    @property
    def num_edges(self):
        return len(self.weights)

    @property
    def degree(self):
        """Neighbourhood sizes ``|N(i)|`` (0-based array)."""
        return self._degree

    def neighborhood_size(self, i):
        """``|N(i)|`` for the 1-based node id ``i``."""
        return int(self._degree[_check_node(self.n, i) - 1])

    def incident_edges(self, i):
        """
        Edges incident to node ``i`` (1-based) as ``(edge index, sign)``
        pairs, sign ``+1`` if ``i`` is the head and ``-1`` if the tail.
        """
        return list(self._incident[_check_node(self.n, i) - 1])

    @property
    def edges(self):
        """Edge records ``(head, tail, weight)`` with 1-based ids."""
        return [(int(h) + 1, int(t) + 1, float(a))
                for h, t, a in zip(self.heads, self.tails, self.weights)]

    def edge_index(self, i, j):
        """Storage index of the edge ``{i, j}`` (1-based ids)."""
        h, t = sorted((i, j))
        hit = np.flatnonzero((self.heads == h - 1) & (self.tails == t - 1))
        if hit.size == 0:
            raise KeyError(f"no edge {{{i}, {j}}}")
        return int(hit[0])

    def subgraph(self, nodes):
        """
        Induced subgraph on the 1-based ``nodes`` (relabelled ``1..k`` in
        the given order).
        """
        nodes = [int(v) for v in nodes]
        pos = {v - 1: k for k, v in enumerate(nodes)}
        recs = [(pos[h] + 1, pos[t] + 1, a)
                for h, t, a in zip(self.heads, self.tails, self.weights)
                if h in pos and t in pos]
        return build_graph(len(nodes), recs)

    def to_dict(self):
        return {"n": self.n,
                "edges": [{"i": i, "j": j, "weight": a} for i, j, a in self.edges]}


def _check_node(n, i):
    if not (1 <= int(i) <= n):
        raise GraphError(f"node id {i} outside 1..{n}")
    return int(i)


def build_graph(n, edge_list):
    """
    Build an empirical graph from ``(i, j, weight)`` records.

    Parameters
    ----------
    n : int
        Node count; valid ids are ``1..n``.
    edge_list : iterable of (int, int, float)
        Undirected edges. Orientation is canonicalized (smaller id is the
        head).

    Raises
    ------
    GraphError
        On self-loops, duplicates, nonpositive or non-finite weights and
        out-of-range ids.
    """
    n = int(n)
    if n < 1:
        raise GraphError(f"node count must be >= 1, got {n}")
    heads, tails, weights = [], [], []
    seen = set()
    for rec in edge_list:
        i, j, a = rec
        if int(i) != i or int(j) != j:
            raise GraphError(f"non-integer node id in edge {rec!r}")
        i, j, a = int(i), int(j), float(a)
        if not (1 <= i <= n and 1 <= j <= n):
            raise GraphError(f"edge {rec!r}: node id outside 1..{n}")
        if i == j:
            raise GraphError(f"edge {rec!r}: self-loop")
        if not np.isfinite(a) or a <= 0:
            raise GraphError(f"edge {rec!r}: weight must be positive and finite")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"edge {rec!r}: duplicate edge {key}")
        seen.add(key)
        heads.append(key[0] - 1)
        tails.append(key[1] - 1)
        weights.append(a)
    return EmpiricalGraph(n, np.array(heads, dtype=np.intp),
                          np.array(tails, dtype=np.intp),
                          np.array(weights, dtype=float))


def _as_field(values, count, what):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0 or arr.shape[0] != count:
        raise ValueError(f"{what} field needs {count} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} field has non-finite entries")
    return arr


def node_field(g, values):
    """Validate ``values`` as a node field of ``g`` (one row per node)."""
    return _as_field(values, g.n, "node")


def edge_field(g, values):
    """Validate ``values`` as an edge field of ``g`` (one row per edge)."""
    return _as_field(values, g.num_edges, "edge")


def apply_incidence(g, w):
    """
    Block-incidence map: ``u[e] = w[head(e)] - w[tail(e)]``.

    ``w`` may be ``(n,)`` or ``(n, d)``; the result has matching trailing
    shape.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 0 or w.shape[0] != g.n:
        raise ValueError(f"node field needs {g.n} entries, got shape {w.shape}")
    return g._D @ w


def apply_incidence_transpose(g, u):
    """
    Adjoint of :func:`apply_incidence` (signed divergence).

    Node ``i`` receives the sum of ``u[e]`` over edges it heads minus the
    sum over edges it tails.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[0] != g.num_edges:
        raise ValueError(f"edge field needs {g.num_edges} entries, got shape {u.shape}")
    # CSR products accumulate each row in a fixed order: results are reproducible
    return g._Dt @ u


def weighted_boundary(g, cluster):
    """Total weight of edges with exactly one endpoint in ``cluster`` (1-based ids)."""
    mask = np.zeros(g.n, dtype=bool)
    for i in cluster:
        mask[_check_node(g.n, i) - 1] = True
    cut = mask[g.heads] != mask[g.tails]
    return float(g.weights[cut].sum())


def load_graph(path):
    """Read the JSON graph format ``{"n": .., "edges": [{"i", "j", "weight"}]}``."""
    with open(path) as fh:
        doc = json.load(fh)
    return graph_from_dict(doc)


def graph_from_dict(doc):
    try:
        n = doc["n"]
        recs = [(e["i"], e["j"], e["weight"]) for e in doc["edges"]]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    return build_graph(n, recs)


def save_graph(g, path):
    with open(path, "w") as fh:
        json.dump(g.to_dict(), fh, indent=1)
