"""Private local objectives ``f_i`` held by each agent."""

from __future__ import annotations

import numpy as np


class LocalObjective:
    """Convex, differentiable local cost.

    Subclasses provide ``value`` and ``gradient``; ``hessian`` is optional and
    only used by the centralized reference solvers.
    """

    dim: int

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)


class Quadratic(LocalObjective):
    """``f(x) = x^T Q x + q^T x + c`` with ``Q`` symmetric positive semidefinite.

    Note the absence of a factor 1/2: the gradient is ``2 Q x + q``.
    """

    def __init__(self, Q, q=None, c=0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError("Q must be square")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12:
            raise ValueError("Q must be symmetric")
        if n and np.min(np.linalg.eigvalsh(Q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
        if q.shape != (n,):
            raise ValueError("q must have length n")
        self.Q = Q
        self.q = q
        self.c = float(c)
        self.dim = n

    @classmethod
    def squared_distance(cls, center, weight=1.0):
        """``weight * ||x - center||^2``."""
        center = np.asarray(center, dtype=float)
        n = center.shape[0]
        return cls(weight * np.eye(n), -2.0 * weight * center, weight * float(center @ center))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x + self.q @ x + self.c)

    def gradient(self, x):
        return 2.0 * self.Q @ np.asarray(x, dtype=float) + self.q

    def hessian(self, x=None):
        return 2.0 * self.Q

    def as_smooth(self) -> "SmoothConvex":
        """The same function behind the generic gradient-only interface."""
        return SmoothConvex(self.dim, self.value, self.gradient, self.hessian)


class SmoothConvex(LocalObjective):
    """Convex function given by value and gradient callables."""

    def __init__(self, dim, value, gradient, hessian=None, lipschitz=False):
        self.dim = int(dim)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.lipschitz = lipschitz

    def value(self, x):
        return float(self._value(np.asarray(x, dtype=float)))

    def gradient(self, x):
        return np.asarray(self._gradient(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x):
        if self._hessian is None:
            raise NotImplementedError("no Hessian supplied")
        return np.asarray(self._hessian(np.asarray(x, dtype=float)), dtype=float)


class ExpSum(SmoothConvex):
    """``f(x) = sum_k exp(x[k])``."""

    def __init__(self, dim):
        super().__init__(dim, self._f, np.exp, lambda x: np.diag(np.exp(x)))

    @staticmethod
    def _f(x):
        return np.sum(np.exp(x))


def finite_difference_gradient(obj: LocalObjective, x, h=1e-6):
    """Central-difference gradient, used to audit user-supplied gradients."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.shape[0]):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
    return g


def check_gradient(obj: LocalObjective, x, rtol=1e-4, h=1e-6) -> bool:
    g = obj.gradient(x)
    fd = finite_difference_gradient(obj, x, h)
    return bool(np.linalg.norm(g - fd) <= rtol * max(1.0, np.linalg.norm(fd)))
