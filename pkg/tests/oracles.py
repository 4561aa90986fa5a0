"""Independent numerical oracles built on a generic conic solver."""

import cvxpy as cp
import numpy as np

SOLVER_OPTS = dict(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12,
                   tol_feas=1e-12, tol_ktratio=1e-9, max_iter=500)


def _solve(prob):
    prob.solve(**SOLVER_OPTS)
    assert prob.status in ("optimal", "optimal_inaccurate"), prob.status


def loss_expr(loss, z):
    """cvxpy expression of a LocalLoss, written from its data."""
    if loss.kind == "trivial":
        return cp.Constant(0.0)
    X, y, m = loss.dataset.X, loss.dataset.y, loss.dataset.m
    if loss.kind == "logistic":
        return cp.sum(cp.logistic(cp.multiply(-y, X @ z))) / m
    expr = cp.sum_squares(X @ z - y) / m
    if loss.kind == "ridge":
        expr = expr + loss.eta * cp.sum_squares(z)
    elif loss.kind == "lasso":
        expr = expr + loss.eta * cp.norm1(z)
    return expr


def prox_loss(loss, v, tau):
    z = cp.Variable(v.size)
    _solve(cp.Problem(cp.Minimize(loss_expr(loss, z) + cp.sum_squares(z - v) / (2 * tau))))
    return z.value


def penalty_expr(kind, x, Q=None):
    if kind == "norm2":
        return cp.norm2(x)
    if kind == "norm1":
        return cp.norm1(x)
    if kind == "quadratic":
        return 0.5 * cp.sum_squares(x)
    return 0.5 * cp.quad_form(x, Q)


def prox_penalty(kind, v, gamma, Q=None):
    """argmin_x gamma * phi(x) + |x - v|^2 / 2."""
    x = cp.Variable(v.size)
    _solve(cp.Problem(cp.Minimize(gamma * penalty_expr(kind, x, Q) + 0.5 * cp.sum_squares(x - v))))
    return x.value


def dual_prox_from_conjugate(kind, v, sigma, lam_a, Q=None):
    """
    argmin_z lamA phi*(z / lamA) + |v - z|^2 / (2 sigma), with the
    conjugate written out for each penalty.
    """
    z = cp.Variable(v.size)
    fit = cp.sum_squares(v - z) / (2 * sigma)
    cons = []
    if kind == "norm2":
        cons = [cp.norm2(z) <= lam_a]
        obj = fit
    elif kind == "norm1":
        cons = [cp.norm_inf(z) <= lam_a]
        obj = fit
    elif kind == "quadratic":
        obj = fit + cp.sum_squares(z) / (2 * lam_a)
    else:
        obj = fit + cp.quad_form(z, np.linalg.inv(Q)) / (2 * lam_a)
    _solve(cp.Problem(cp.Minimize(obj), cons))
    return z.value


def gtv_optimum(g, losses, kind, lam, Q=None):
    """Brute-force optimum of the full GTV problem on a small graph."""
    d = losses[0].d
    W = cp.Variable((g.n, d))
    obj = sum(loss_expr(loss, W[i]) for i, loss in enumerate(losses))
    for h, t, a in zip(g.heads, g.tails, g.weights):
        obj = obj + lam * a * penalty_expr(kind, W[h] - W[t], Q)
    prob = cp.Problem(cp.Minimize(obj))
    _solve(prob)
    return W.value, prob.value
