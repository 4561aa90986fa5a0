"""
Preconditioned primal-dual iterations for GTV minimization.

The problem is ``min_w sum_i l_i(w_i) + lam * sum_e A_e phi(w_head - w_tail)``.
Each iteration performs a node-wise primal update (a prox step of the local
loss with step ``tau_i = 1/|N(i)|``) followed by an edge-wise dual update
(a prox step of the penalty conjugate with step ``sigma_e = 1/2``) on the
over-relaxed parameter differences.

Everything runs in a fixed order on a single thread, so repeated runs give
bitwise identical traces.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import apply_incidence, apply_incidence_transpose
from .losses import UnsupportedOperation

STOP_MAX_ITERS = "max_iters"
STOP_GAP_TOL = "gap_tol"
STOP_NON_FINITE = "non_finite"

# an edge counts as unsaturated when |u_e|_* < lamA_e - COMPLEMENTARITY_TOL
COMPLEMENTARITY_TOL = 1e-9
# slack for the {0}-indicator conjugate of trivial losses
TRIVIAL_ATOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters
    ----------
    lam : float
        GTV regularization strength (``lam = 0`` decouples the nodes).
    penalty : GtvPenalty
    max_iters : int
    gap_tol : float, optional
        Stop once the primal-dual gap drops to this value; the gap is
        checked at trace points only.
    trace_every : int
        Stride between trace records.
    """

    lam: float
    penalty: object
    max_iters: int = 1000
    gap_tol: float = None
    trace_every: int = 10

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.gap_tol is not None and not self.gap_tol >= 0:
            raise ValueError(f"gap_tol must be >= 0, got {self.gap_tol}")
        if int(self.trace_every) != self.trace_every or self.trace_every < 1:
            raise ValueError(f"trace_every must be a positive integer, got {self.trace_every}")


@dataclass
class SolverState:
    w: np.ndarray
    u: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    k: int = 0
    trace: list = field(default_factory=list)


@dataclass
class SolveResult:
    w_final: np.ndarray
    u_final: np.ndarray
    iterations: int
    stop_reason: str
    trace: list


def init_state(g, d):
    """Zero iterates, ``tau_i = 1/|N(i)|`` (1 for isolated nodes), ``sigma_e = 1/2``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    deg = g.degree.astype(float)
    tau = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 1.0)
    return SolverState(w=np.zeros((g.n, d)), u=np.zeros((g.num_edges, d)),
                       tau=tau, sigma=np.full(g.num_edges, 0.5))


def _check_losses(g, losses):
    if len(losses) != g.n:
        raise ValueError(f"need {g.n} losses, got {len(losses)}")
    dims = {loss.d for loss in losses}
    if len(dims) != 1:
        raise ValueError(f"losses disagree on dimension: {sorted(dims)}")
    return dims.pop()


class PrimalStep:
    """
    Node-wise primal update for fixed step sizes.

    Nodes whose prox is affine (``v -> M v + c``) are updated together with
    one batched product; the rest are updated one by one.
    """

    def __init__(self, losses, tau):
        self.losses = losses
        self.tau = np.asarray(tau, dtype=float)
        aff, other, Ms, cs = [], [], [], []
        for i, loss in enumerate(losses):
            mc = loss.affine_prox(self.tau[i])
            if mc is None:
                other.append(i)
            else:
                aff.append(i)
                Ms.append(mc[0])
                cs.append(mc[1])
        self.affine = np.array(aff, dtype=np.intp)
        self.other = other
        if aff:
            self.M = np.stack(Ms)
            self.c = np.stack(cs)

    def __call__(self, v):
        out = np.empty_like(v)
        if self.affine.size:
            out[self.affine] = np.einsum("kij,kj->ki", self.M, v[self.affine]) + self.c
        for i in self.other:
            out[i] = self.losses[i].prox(v[i], self.tau[i])
        return out


def _step(state, g, config, primal):
    w_old, u = state.w, state.u
    w_new = primal(w_old - state.tau[:, None] * apply_incidence_transpose(g, u))
    if config.lam > 0 and g.num_edges:
        z = u + state.sigma[:, None] * (2.0 * apply_incidence(g, w_new)
                                        - apply_incidence(g, w_old))
        u = config.penalty.dual_update(z, state.sigma, config.lam * g.weights)
    return SolverState(w=w_new, u=u, tau=state.tau, sigma=state.sigma,
                       k=state.k + 1, trace=state.trace)


def run_iteration(state, g, losses, config):
    """Advance ``state`` by one primal-dual iteration (returns a new state)."""
    _check_losses(g, losses)
    return _step(state, g, config, PrimalStep(losses, state.tau))


def gtv_eval(g, w, penalty, lam=1.0):
    """
    ``lam * sum_e A_e phi(w_head - w_tail)`` and the per-edge terms
    ``lam * A_e phi(.)``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    per_edge = lam * g.weights * penalty.value(apply_incidence(g, w))
    return float(per_edge.sum()), per_edge


def primal_objective(g, losses, penalty, lam, w):
    w = np.asarray(w, dtype=float)
    total = sum(loss.value(w[i]) for i, loss in enumerate(losses))
    return float(total) + gtv_eval(g, w, penalty, lam)[0]


def dual_objective(g, losses, penalty, lam, u):
    """
    ``-sum_i l_i*(-(D'u)_i) - sum_e lamA_e phi*(u_e / lamA_e)``; None when a
    conjugate is unavailable.
    """
    u = np.asarray(u, dtype=float)
    if any(not loss.has_conjugate for loss in losses):
        return None
    if g.num_edges:
        if lam == 0:
            edge_term = 0.0 if not np.any(u) else np.inf
        else:
            ok, edge_term = penalty.conjugate_domain_ok(u, lam * g.weights)
        if not np.isfinite(edge_term):
            return -np.inf
        demand = apply_incidence_transpose(g, u)
        scale = TRIVIAL_ATOL * max(1.0, float(np.abs(u).max()))
    else:
        edge_term = 0.0
        demand = np.zeros((g.n, losses[0].d))
        scale = 0.0
    total = 0.0
    for i, loss in enumerate(losses):
        if loss.kind == "trivial":
            val = loss.conjugate(-demand[i], atol=scale)
        else:
            val = loss.conjugate(-demand[i])
        if not np.isfinite(val):
            return -np.inf
        total += val
    return -total - edge_term


def pd_gap(g, losses, penalty, lam, w, u):
    """
    Primal objective at ``w`` minus dual objective at ``u``.

    Returns None when some local loss has no usable conjugate, and ``inf``
    when ``u`` is dual infeasible.
    """
    dual = dual_objective(g, losses, penalty, lam, u)
    if dual is None:
        return None
    return primal_objective(g, losses, penalty, lam, w) - dual


def kkt_residuals(g, losses, penalty, lam, w, u):
    """
    Optimality residuals for a norm penalty.

    Returns
    -------
    conservation : float
        ``max_i |(D'u)_i + grad l_i(w_i)|``.
    feasibility : float
        ``max_e (|u_e|_* - lamA_e)_+``.
    complementarity : float
        ``max |w_head - w_tail|`` over edges with ``|u_e|_* < lamA_e - 1e-9``.
    """
    if not penalty.is_norm:
        raise UnsupportedOperation(f"KKT residuals need a norm penalty, got {penalty.kind}")
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    demand = apply_incidence_transpose(g, u)
    grads = np.stack([loss.grad(w[i]) for i, loss in enumerate(losses)])
    conservation = float(np.linalg.norm(demand + grads, axis=1).max(initial=0.0))
    if g.num_edges == 0:
        return conservation, 0.0, 0.0
    lam_a = lam * g.weights
    dn = penalty.dual_norm(u)
    feasibility = float(np.maximum(dn - lam_a, 0.0).max())
    interior = dn < lam_a - COMPLEMENTARITY_TOL
    diffs = np.linalg.norm(apply_incidence(g, w), axis=1)
    complementarity = float(diffs[interior].max(initial=0.0))
    return conservation, feasibility, complementarity


def _record(state, g, losses, config):
    gtv, _ = gtv_eval(g, state.w, config.penalty, config.lam)
    obj = float(sum(loss.value(state.w[i]) for i, loss in enumerate(losses))) + gtv
    gap = pd_gap(g, losses, config.penalty, config.lam, state.w, state.u)
    state.trace.append((state.k, obj, gtv, gap))
    return gap


def solve(g, losses, config, state=None):
    """
    Run primal-dual iterations until ``max_iters`` or the gap tolerance.

    With ``lam = 0`` the nodes decouple: the dual phase is skipped and every
    node uses step 1, as it would on an edgeless graph.
    """
    d = _check_losses(g, losses)
    if state is None:
        state = init_state(g, d)
        if config.lam == 0:
            state.tau = np.ones(g.n)
    primal = PrimalStep(losses, state.tau)
    every = config.trace_every
    reason = STOP_MAX_ITERS
    gap = _record(state, g, losses, config)
    start = state.k
    while True:
        if config.gap_tol is not None and gap is not None and gap <= config.gap_tol:
            reason = STOP_GAP_TOL
            break
        if state.k - start >= config.max_iters:
            break
        nxt = _step(state, g, config, primal)
        if not (np.all(np.isfinite(nxt.w)) and np.all(np.isfinite(nxt.u))):
            reason = STOP_NON_FINITE
            break
        state = nxt
        if (state.k - start) % every == 0 or state.k - start == config.max_iters:
            gap = _record(state, g, losses, config)
    if state.trace[-1][0] != state.k:
        _record(state, g, losses, config)
    return SolveResult(w_final=state.w, u_final=state.u, iterations=state.k - start,
                       stop_reason=reason, trace=list(state.trace))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iter", "objective", "gtv", "gap"])
        for rec in trace:
            out.writerow([_fmt(v) for v in rec])


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["iter"]), float(r["objective"]), float(r["gtv"]),
             float(r["gap"]) if r["gap"] != "" else None) for r in rows]


def write_weights(w, path):
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["node_id"] + [f"w_{j + 1}" for j in range(w.shape[1])])
        for i, row in enumerate(w):
            out.writerow([i + 1] + [_fmt(x) for x in row])


def read_weights(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = sorted(rows[1:], key=lambda r: int(r[0]))
    return np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), -1)
