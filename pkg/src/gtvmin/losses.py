"""
Local loss functions and their primal update (proximity) operators.

All data-fitting losses average over the local samples (factor ``1/m``).
Squared, ridge and trivial losses are quadratics ``v'Pv - 2q'v + c`` and
have affine proximity operators; logistic and lasso losses use inner
iterative solvers.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

KINDS = ("squared", "logistic", "ridge", "lasso", "trivial")

INNER_TOL = 1e-10
INNER_MAX_ITER = 500


class UnsupportedOperation(NotImplementedError):
    """The requested operation is not defined for this loss."""


class InnerSolverWarning(RuntimeWarning):
    """An inner prox solve stopped before reaching its tolerance."""


@dataclass(frozen=True)
class LocalDataset:
    """Labelled local dataset: features ``X`` (m, d) and labels ``y`` (m,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _newton_prox(fun, grad, hess, v, tau, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
    """Damped Newton for argmin_z fun(z) + |z - v|^2 / (2 tau)."""
    z = v.copy()
    eye = np.eye(v.size)

    def obj(x):
        return fun(x) + np.dot(x - v, x - v) / (2 * tau)

    f = obj(z)
    res = np.inf
    for _ in range(max_iter):
        g = grad(z) + (z - v) / tau
        res = np.linalg.norm(g)
        if res <= tol:
            return z, res
        p = np.linalg.solve(hess(z) + eye / tau, g)
        slope = np.dot(g, p)
        t = 1.0
        while True:
            z_new = z - t * p
            f_new = obj(z_new)
            if f_new <= f - 1e-4 * t * slope or t < 1e-12:
                break
            # near the minimizer f is flat to rounding; take the full step
            # whenever it still shrinks the gradient
            if t == 1.0 and np.linalg.norm(grad(z_new) + (z_new - v) / tau) < res:
                break
            t *= 0.5
        z, f = z_new, f_new
    res = np.linalg.norm(grad(z) + (z - v) / tau)
    if res > tol:
        warnings.warn(f"Newton prox stopped at residual {res:.3e}", InnerSolverWarning,
                      stacklevel=3)
    return z, res


class _QuadraticMixin:
    """Shared closed forms for losses of the form v'Pv - 2q'v + c."""

    def _init_quadratic(self, P, q, c):
        self._P, self._q, self._c = P, q, c
        # eigendecomposition is reused by every (I + 2 tau P)^-1 and by P^-1
        self._evals, self._evecs = np.linalg.eigh(P)
        self._evals = np.maximum(self._evals, 0.0)

    @property
    def quadratic_form(self):
        """``(P, q, c)`` with loss ``v'Pv - 2q'v + c``, or None."""
        if self._P is None:
            return None
        return self._P, self._q, self._c

    def affine_prox(self, tau):
        """
        ``(M, b)`` such that the proximity operator with step ``tau`` is
        ``v -> M v + b``; None when the prox is not affine.
        """
        if self._P is None:
            return None
        V, lam = self._evecs, self._evals
        M = (V / (1.0 + 2.0 * tau * lam)) @ V.T
        return M, 2.0 * tau * (M @ self._q)

    def _positive_definite(self):
        if self._P is None:
            return False
        top = self._evals[-1] if self._evals.size else 0.0
        return self._evals[0] > 1e-10 * max(1.0, top)

    def _quadratic_conjugate(self, z):
        a = z + 2.0 * self._q
        coef = self._evecs.T @ a
        return float(np.dot(coef, coef / self._evals) / 4.0 - self._c)


class LocalLoss(_QuadraticMixin):
    """
    Per-node loss ``l_i``.

    Parameters
    ----------
    kind : {'squared', 'logistic', 'ridge', 'lasso', 'trivial'}
    dataset : LocalDataset, optional
        Required for every kind except ``'trivial'``.
    eta : float
        Regularization strength for ridge (``eta |v|_2^2``) and lasso
        (``eta |v|_1``).
    d : int, optional
        Parameter dimension; only needed for the trivial loss.
    """

    def __init__(self, kind, dataset=None, eta=0.0, d=None):
        if kind not in KINDS:
            raise ValueError(f"unknown loss kind {kind!r}")
        self.kind = kind
        self.eta = float(eta)
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if kind == "trivial":
            if d is None:
                if dataset is None:
                    raise ValueError("trivial loss needs d")
                d = dataset.d
            self.dataset = None
            self.d = int(d)
            P = np.zeros((self.d, self.d))
            self._init_quadratic(P, np.zeros(self.d), 0.0)
            return
        if dataset is None or dataset.m == 0:
            raise ValueError(f"{kind} loss needs a nonempty dataset")
        if d is not None and d != dataset.d:
            raise ValueError(f"d={d} does not match dataset dimension {dataset.d}")
        self.dataset = dataset
        self.d = dataset.d
        X, y, m = dataset.X, dataset.y, dataset.m
        if kind == "logistic" and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("logistic labels must be -1 or +1")
        self._Q = X.T @ X / m
        self._ytil = X.T @ y / m
        self._L_data = 2.0 * float(np.linalg.eigvalsh(self._Q)[-1])
        if kind in ("squared", "ridge"):
            P = self._Q + (self.eta * np.eye(self.d) if kind == "ridge" else 0.0)
            self._init_quadratic(P, self._ytil, float(np.mean(y ** 2)))
        else:
            self._P = None

    def __repr__(self):
        m = 0 if self.dataset is None else self.dataset.m
        return f"LocalLoss(kind={self.kind!r}, d={self.d}, m={m}, eta={self.eta})"

    def _check(self, v):
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.d:
            raise ValueError(f"expected a vector of length {self.d}, got {v.size}")
        return v

    # -- evaluation ---------------------------------------------------------

    def value(self, v):
        v = self._check(v)
        if self.kind == "trivial":
            return 0.0
        X, y = self.dataset.X, self.dataset.y
        if self.kind == "logistic":
            return float(np.mean(np.logaddexp(0.0, -y * (X @ v))))
        r = X @ v - y
        val = float(np.mean(r ** 2))
        if self.kind == "ridge":
            val += self.eta * float(np.dot(v, v))
        elif self.kind == "lasso":
            val += self.eta * float(np.abs(v).sum())
        return val

    def grad(self, v):
        v = self._check(v)
        if self.kind == "trivial":
            return np.zeros(self.d)
        if self.kind == "lasso":
            raise UnsupportedOperation("lasso loss is not differentiable")
        X, y, m = self.dataset.X, self.dataset.y, self.dataset.m
        if self.kind == "logistic":
            s = expit(-y * (X @ v))
            return -(X.T @ (y * s)) / m
        return 2.0 * (self._P @ v - self._q)

    def hessian(self, v):
        v = self._check(v)
        if self.kind == "lasso":
            raise UnsupportedOperation("lasso loss is not twice differentiable")
        if self.kind == "logistic":
            X, y, m = self.dataset.X, self.dataset.y, self.dataset.m
            s = expit(y * (X @ v))
            return (X.T * (s * (1.0 - s))) @ X / m
        return 2.0 * self._P

    @property
    def differentiable(self):
        return self.kind != "lasso"

    @property
    def lipschitz(self):
        """Lipschitz constant of the gradient (Euclidean norm)."""
        if self.kind == "trivial":
            return 0.0
        if self.kind == "lasso":
            raise UnsupportedOperation("lasso loss has no gradient")
        if self.kind == "logistic":
            return self._L_data / 8.0
        return 2.0 * float(self._evals[-1])

    # -- primal update ------------------------------------------------------

    def prox(self, v, tau, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
        """argmin_z l(z) + |z - v|^2 / (2 tau)."""
        v = self._check(v)
        if not np.all(np.isfinite(v)):
            raise ValueError("prox argument has non-finite entries")
        if not tau > 0:
            raise ValueError("tau must be positive")
        if self.kind == "trivial":
            return v.copy()
        aff = self.affine_prox(tau)
        if aff is not None:
            M, b = aff
            return M @ v + b
        if self.kind == "logistic":
            z, _ = _newton_prox(self.value, self.grad, self.hessian, v, tau, tol, max_iter)
            return z
        return self._lasso_prox(v, tau, tol, max_iter)

    def _lasso_prox(self, v, tau, tol, max_iter):
        step = 1.0 / (self._L_data + 1.0 / tau)
        Q2, y2 = 2.0 * self._Q, 2.0 * self._ytil
        z = v.copy()
        change = np.inf
        for _ in range(max_iter):
            g = Q2 @ z - y2 + (z - v) / tau
            z_new = _soft_threshold(z - step * g, step * self.eta)
            change = np.linalg.norm(z_new - z)
            z = z_new
            if change <= tol:
                return z
        warnings.warn(f"lasso prox stopped at step change {change:.3e}",
                      InnerSolverWarning, stacklevel=3)
        return z

    # -- conjugate ----------------------------------------------------------

    @property
    def has_conjugate(self):
        return self.kind == "trivial" or (
            self.kind in ("squared", "ridge") and self._positive_definite())

    def conjugate(self, z, atol=0.0):
        """
        Convex conjugate ``sup_w z'w - l(w)``; ``inf`` outside its domain.

        For the trivial loss this is the indicator of ``{0}``; ``atol``
        allows for rounding in ``z``.
        """
        z = self._check(z)
        if self.kind == "trivial":
            return 0.0 if np.max(np.abs(z), initial=0.0) <= atol else np.inf
        if self.kind not in ("squared", "ridge"):
            raise UnsupportedOperation(f"no closed-form conjugate for {self.kind} loss")
        if not self._positive_definite():
            raise UnsupportedOperation("conjugate needs a positive definite quadratic term")
        return self._quadratic_conjugate(z)


class SumLoss(_QuadraticMixin):
    """
    Sum of member losses evaluated at a common argument (pooled training).

    Offers the same interface as :class:`LocalLoss`, so a cluster graph can
    be handed to the solver directly.
    """

    kind = "sum"

    def __init__(self, members):
        members = list(members)
        if not members:
            raise ValueError("SumLoss needs at least one member")
        dims = {m.d for m in members}
        if len(dims) != 1:
            raise ValueError(f"member dimensions differ: {sorted(dims)}")
        self.members = members
        self.d = dims.pop()
        forms = [m.quadratic_form for m in members]
        if all(f is not None for f in forms):
            self._init_quadratic(sum(f[0] for f in forms), sum(f[1] for f in forms),
                                 float(sum(f[2] for f in forms)))
        else:
            self._P = None
        self._all_trivial = all(m.kind == "trivial" for m in members)

    def __repr__(self):
        return f"SumLoss({len(self.members)} members, d={self.d})"

    @property
    def differentiable(self):
        return all(m.differentiable for m in self.members)

    def value(self, v):
        return float(sum(m.value(v) for m in self.members))

    def grad(self, v):
        return sum(m.grad(v) for m in self.members)

    def hessian(self, v):
        return sum(m.hessian(v) for m in self.members)

    @property
    def lipschitz(self):
        return float(sum(m.lipschitz for m in self.members))

    def prox(self, v, tau, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
        v = np.asarray(v, dtype=float).reshape(-1)
        aff = self.affine_prox(tau)
        if aff is not None:
            M, b = aff
            return M @ v + b
        if not self.differentiable:
            raise UnsupportedOperation("prox of a sum with nonsmooth members")
        z, _ = _newton_prox(self.value, self.grad, self.hessian, v, tau, tol, max_iter)
        return z

    @property
    def has_conjugate(self):
        return self._all_trivial or self._positive_definite()

    def conjugate(self, z, atol=0.0):
        z = np.asarray(z, dtype=float).reshape(-1)
        if self._all_trivial:
            return 0.0 if np.max(np.abs(z), initial=0.0) <= atol else np.inf
        if not self._positive_definite():
            raise UnsupportedOperation("conjugate needs a positive definite quadratic term")
        return self._quadratic_conjugate(z)


def squared_loss(X, y):
    return LocalLoss("squared", LocalDataset(X, y))


def logistic_loss(X, y):
    return LocalLoss("logistic", LocalDataset(X, y))


def ridge_loss(X, y, eta):
    return LocalLoss("ridge", LocalDataset(X, y), eta=eta)


def lasso_loss(X, y, eta):
    return LocalLoss("lasso", LocalDataset(X, y), eta=eta)


def trivial_loss(d):
    return LocalLoss("trivial", d=d)


# Operation-style aliases


def loss_eval(loss, v):
    return loss.value(v)


def loss_grad(loss, v):
    return loss.grad(v)


def primal_update(loss, v, tau):
    return loss.prox(v, tau)


def loss_conjugate(loss, z):
    return loss.conjugate(z)


# Dataset files


def load_datasets(path, n, kind="squared", eta=0.0):
    """
    Read ``{"d": .., "nodes": [{"id", "X", "y"}]}`` and build one loss per
    node ``1..n``. Nodes missing from the file get the trivial loss.
    """
    with open(path) as fh:
        doc = json.load(fh)
    return losses_from_dict(doc, n, kind=kind, eta=eta)


def losses_from_dict(doc, n, kind="squared", eta=0.0):
    d = int(doc["d"])
    losses = [trivial_loss(d) for _ in range(n)]
    for node in doc["nodes"]:
        i = int(node["id"])
        if not 1 <= i <= n:
            raise ValueError(f"dataset node id {i} outside 1..{n}")
        X = np.asarray(node["X"], dtype=float).reshape(-1, d)
        ds = LocalDataset(X, node["y"])
        losses[i - 1] = LocalLoss(kind, ds, eta=eta)
    return losses


def datasets_to_dict(datasets, d):
    """``datasets`` maps 1-based node ids to LocalDataset (None entries skipped)."""
    nodes = [{"id": int(i), "X": ds.X.tolist(), "y": ds.y.tolist()}
             for i, ds in sorted(datasets.items()) if ds is not None]
    return {"d": int(d), "nodes": nodes}


def save_datasets(datasets, d, path):
    with open(path, "w") as fh:
        json.dump(datasets_to_dict(datasets, d), fh)
