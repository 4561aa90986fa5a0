"""
GTV penalty functions, their conjugates and edge-wise dual updates.

The dual update for an edge with weight ``A_e`` is the proximity operator
of ``lamA * phi*(. / lamA)`` with ``lamA = lambda * A_e``. All operators
accept a single vector ``(d,)`` or a batch ``(E, d)`` with per-row ``lamA``
and ``sigma``.
"""

import json
import threading

import numpy as np

KINDS = ("norm2", "norm1", "quadratic", "quadratic_Q")
NORM_KINDS = ("norm2", "norm1")

# relative slack when testing membership of the dual-norm ball
DOMAIN_RTOL = 1e-12


def clip(v, gamma):
    """
    Euclidean clipping: scale ``v`` onto the ball of radius ``gamma`` when
    it lies outside, else return it unchanged.

    Works on the last axis, so ``v`` may be a batch; ``gamma`` broadcasts
    against the leading axes. Scalars are clamped with their sign kept.
    """
    v = np.asarray(v, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if v.ndim == 0:
        return np.clip(v, -gamma, gamma)
    norms = np.linalg.norm(v, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > gamma, gamma / norms, 1.0)
        return v * scale[..., None]


def _rows(v):
    v = np.asarray(v, dtype=float)
    return v, v.ndim == 1


class GtvPenalty:
    """
    Penalty ``phi`` applied to parameter differences along edges.

    Parameters
    ----------
    kind : {'norm2', 'norm1', 'quadratic', 'quadratic_Q'}
    Q : array_like, optional
        Positive definite matrix for ``quadratic_Q`` (``phi(v) = v'Qv / 2``).
    """

    def __init__(self, kind, Q=None):
        if kind not in KINDS:
            raise ValueError(f"unknown penalty kind {kind!r}")
        self.kind = kind
        self.Q = None
        self._cache = {}
        self._lock = threading.Lock()
        if kind == "quadratic_Q":
            if Q is None:
                raise ValueError("quadratic_Q penalty needs a matrix Q")
            Q = np.atleast_2d(np.asarray(Q, dtype=float))
            if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError("Q must be a symmetric square matrix")
            ev = np.linalg.eigvalsh(Q)
            if ev[0] <= 1e-12 * max(1.0, ev[-1]):
                raise ValueError("Q must be positive definite")
            Q = 0.5 * (Q + Q.T)
            Q.setflags(write=False)
            self.Q = Q
            self._Qinv = np.linalg.inv(Q)

    def __repr__(self):
        return f"GtvPenalty({self.kind!r})"

    @property
    def is_norm(self):
        return self.kind in NORM_KINDS

    def value(self, v):
        """``phi(v)``; rowwise for a batch."""
        v = np.asarray(v, dtype=float)
        if self.kind == "norm2":
            return np.linalg.norm(v, axis=-1)
        if self.kind == "norm1":
            return np.abs(v).sum(axis=-1)
        if self.kind == "quadratic":
            return 0.5 * (v * v).sum(axis=-1)
        return 0.5 * np.einsum("...i,ij,...j->...", v, self.Q, v)

    def dual_norm(self, u):
        """Dual norm of ``u`` for the norm kinds (l2 for norm2, l-inf for norm1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "norm2":
            return np.linalg.norm(u, axis=-1)
        if self.kind == "norm1":
            return np.abs(u).max(axis=-1, initial=0.0)
        raise ValueError(f"{self.kind} penalty is not a norm")

    def _shrink_matrix(self, s):
        # (s Q^-1 + I)^-1 = (s I + Q)^-1 Q, built once per distinct s
        M = self._cache.get(s)
        if M is None:
            M = np.linalg.solve(s * np.eye(self.Q.shape[0]) + self.Q, self.Q)
            M.setflags(write=False)
            with self._lock:
                M = self._cache.setdefault(s, M)
        return M

    def dual_update(self, v, sigma, lam_a):
        """
        argmin_z lamA phi*(z / lamA) + |v - z|^2 / (2 sigma).

        Parameters
        ----------
        v : ndarray, shape (d,) or (E, d)
        sigma, lam_a : float or ndarray of shape (E,)
            Dual step size and ``lambda * A_e``; both must be positive.
        """
        v = np.asarray(v, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        lam_a = np.asarray(lam_a, dtype=float)
        if np.any(sigma <= 0) or np.any(lam_a <= 0):
            raise ValueError("sigma and lamA must be positive")
        if self.kind == "norm2":
            return clip(v, lam_a)
        if self.kind == "norm1":
            g = lam_a[..., None] if v.ndim > 1 and lam_a.ndim else lam_a
            return np.clip(v, -g, g)
        s = np.broadcast_to(sigma / lam_a, v.shape[:-1])
        if self.kind == "quadratic":
            return v / (1.0 + s)[..., None]
        if v.ndim == 1:
            return self._shrink_matrix(float(s)) @ v
        out = np.empty_like(v)
        for val in np.unique(s):
            rows = s == val
            out[rows] = v[rows] @ self._shrink_matrix(float(val)).T
        return out

    def conjugate_domain_ok(self, u, lam_a):
        """
        Check ``u`` against the domain of ``lamA phi*(. / lamA)``.

        Returns
        -------
        ok : bool
            Dual-norm ball membership for norm kinds; always True otherwise.
        value : float
            Summed conjugate term ``lamA phi*(u / lamA)`` (0 when ok for
            norm kinds, ``inf`` when not).
        """
        u = np.atleast_2d(np.asarray(u, dtype=float))
        lam_a = np.broadcast_to(np.asarray(lam_a, dtype=float), u.shape[:1])
        if u.shape[0] == 0:
            return True, 0.0
        if self.is_norm:
            ok = bool(np.all(self.dual_norm(u) <= lam_a * (1.0 + DOMAIN_RTOL)))
            return ok, (0.0 if ok else np.inf)
        if self.kind == "quadratic":
            vals = (u * u).sum(axis=1) / (2.0 * lam_a)
        else:
            vals = np.einsum("ei,ij,ej->e", u, self._Qinv, u) / (2.0 * lam_a)
        return True, float(vals.sum())


def penalty_eval(p, v):
    return p.value(v)


def dual_update(p, v, sigma, lam_a):
    return p.dual_update(v, sigma, lam_a)


def conjugate_domain_ok(p, u, lam_a):
    return p.conjugate_domain_ok(u, lam_a)


def load_matrix(path):
    """Read a square matrix from JSON (nested list) or whitespace text."""
    if str(path).endswith(".json"):
        with open(path) as fh:
            return np.asarray(json.load(fh), dtype=float)
    return np.atleast_2d(np.loadtxt(path))


def parse_penalty(token):
    """Penalty from ``norm2 | norm1 | quadratic | quadratic_q:<matrix-file>``."""
    token = token.strip()
    if token in ("norm2", "norm1", "quadratic"):
        return GtvPenalty(token)
    head, sep, path = token.partition(":")
    if head.lower() == "quadratic_q" and sep and path:
        return GtvPenalty("quadratic_Q", load_matrix(path))
    raise ValueError(f"unknown penalty token {token!r}")
