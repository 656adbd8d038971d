"""Local x-minimization step of the distributed iteration.

Agent ``i`` minimizes

    f_i(x) + lam_i^T x + rho_z/2 ||x - z_i||^2
        + sum_j (mu_i - mu_j)^T P_ij (x - x_j - b_ij)
        + rho_e/2 sum_j ||P_ij (x - x_j - b_ij)||^2

with neighbor states ``x_j`` held at their last received values.  When the
neighbor multiplier ``mu_j`` is omitted the linear edge term uses ``mu_i``
alone, which is the literal per-agent form of the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .exceptions import NonFiniteIterate, NotConverged, SingularSystem
from .objectives import LocalObjective, Quadratic

GD_TOL = 1e-10
GD_MAX_ITER = 500
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5


@dataclass
class NeighborTerm:
    """Data agent ``i`` holds about neighbor ``j``, oriented from ``i``."""

    P: np.ndarray
    b_bar: np.ndarray
    x: np.ndarray
    mu: np.ndarray | None = None


@dataclass
class SubproblemData:
    objective: LocalObjective
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    neighbors: Sequence[NeighborTerm] = ()
    rho_z: float = 1.0
    rho_e: float | None = None
    x_start: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.rho_e is None:
            self.rho_e = self.rho_z
        if self.rho_z <= 0 or self.rho_e <= 0:
            raise ValueError("penalty parameters must be positive")


def _linear_terms(data: SubproblemData):
    """Constant part of the subproblem gradient (everything but f and the x terms)."""
    c = data.lam - data.rho_z * data.z
    for nb in data.neighbors:
        dmu = data.mu if nb.mu is None else data.mu - nb.mu
        c = c + nb.P @ dmu - data.rho_e * (nb.P @ (nb.x + nb.b_bar))
    return c


def _penalty_matrix(n, neighbors, rho_z, rho_e):
    K = rho_z * np.eye(n)
    for nb in neighbors:
        K = K + rho_e * nb.P
    return K


def subproblem_value(data: SubproblemData, x) -> float:
    x = np.asarray(x, dtype=float)
    val = data.objective.value(x) + data.lam @ x + 0.5 * data.rho_z * np.sum((x - data.z) ** 2)
    for nb in data.neighbors:
        r = nb.P @ (x - nb.x - nb.b_bar)
        dmu = data.mu if nb.mu is None else data.mu - nb.mu
        val += dmu @ r + 0.5 * data.rho_e * (r @ r)
    return float(val)


def subproblem_gradient(data: SubproblemData, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    K = _penalty_matrix(x.shape[0], data.neighbors, data.rho_z, data.rho_e)
    return data.objective.gradient(x) + K @ x + _linear_terms(data)


def _hessian_or_none(obj):
    try:
        obj.hessian(np.zeros(obj.dim))
    except (NotImplementedError, AttributeError):
        return None
    return obj.hessian


def _gradient_descent(obj, K, c, x0, tol=GD_TOL, max_iter=GD_MAX_ITER):
    """Backtracking descent on ``obj(x) + x^T K x / 2 + c^T x``.

    The search direction is the negative gradient, preconditioned by the
    Newton matrix when ``obj`` supplies a Hessian.  Plain gradient steps can
    need far more than ``max_iter`` iterations once the curvature of ``obj``
    dominates ``K``.
    """
    hess = _hessian_or_none(obj)
    L = np.linalg.norm(K, 2)

    def delta(x, d):
        # F(x + d) - F(x) with the quadratic part expanded, so the decrease
        # stays visible when it is far below eps * |F|
        return (obj.value(x + d) - obj.value(x)) + d @ (K @ x + 0.5 * (K @ d) + c)

    def grad(x):
        return obj.gradient(x) + K @ x + c

    x = np.array(x0, dtype=float)
    g = grad(x)
    step = 1.0 / L
    for it in range(max_iter):
        if not np.all(np.isfinite(g)):
            raise NonFiniteIterate("x-update gradient is not finite")
        if np.max(np.abs(g)) < tol:
            return x
        gg = g @ g
        if hess is not None:
            try:
                d = -sla.cho_solve(sla.cho_factor(hess(x) + K), g)
                t = 1.0
            except np.linalg.LinAlgError:
                d, t = -g, 1.0 / L
        else:
            d = -g
            t = min(2.0 * step, 1.0 / L) if it else step
        slope = g @ d
        while True:
            x_new = x + t * d
            g_new = grad(x_new)
            df = delta(x, t * d)
            if df <= ARMIJO_C * t * slope:
                break
            # decrease lost in rounding: settle for a smaller gradient
            if df <= 1e-14 * max(1.0, abs(obj.value(x))) and g_new @ g_new < gg:
                break
            t *= ARMIJO_SHRINK
            if t < 1e-20:
                if np.max(np.abs(g)) < 1e3 * tol:
                    return x
                raise NotConverged("line search failed", iterations=it,
                                   residual=float(np.max(np.abs(g))))
        x, g = x_new, g_new
        if hess is None:
            step = t
    if np.max(np.abs(g)) < tol:
        return x
    raise NotConverged(f"gradient descent did not reach {tol:g} in {max_iter} iterations",
                       iterations=max_iter, residual=float(np.max(np.abs(g))))


def solve_x_update(data: SubproblemData) -> np.ndarray:
    """Unique minimizer of the local subproblem.

    Quadratic objectives use a closed-form Cholesky solve; any other
    objective uses backtracking gradient descent warm-started at
    ``data.x_start`` (or ``z`` when absent).
    """
    n = data.z.shape[0]
    K = _penalty_matrix(n, data.neighbors, data.rho_z, data.rho_e)
    c = _linear_terms(data)
    obj = data.objective
    if isinstance(obj, Quadratic):
        try:
            factor = sla.cho_factor(2.0 * obj.Q + K)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("x-update system is not positive definite") from exc
        return sla.cho_solve(factor, -obj.q - c)
    x0 = data.z if data.x_start is None else data.x_start
    return _gradient_descent(obj, K, c, x0)


class XUpdateSolver:
    """Per-agent x-update with the system matrix factored once.

    The penalty matrix depends only on ``rho_z``, ``rho_e`` and the local
    projectors, so it is fixed for the lifetime of a run.
    """

    def __init__(self, objective: LocalObjective, projectors: Sequence[np.ndarray],
                 rho_z: float, rho_e: float):
        self.objective = objective
        n = objective.dim
        self.K = rho_z * np.eye(n)
        for P in projectors:
            self.K += rho_e * P
        self._factor = None
        if isinstance(objective, Quadratic):
            try:
                self._factor = sla.cho_factor(2.0 * objective.Q + self.K)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem("x-update system is not positive definite") from exc

    def solve(self, c, x_start):
        """Minimize ``f(x) + x^T K x / 2 + c^T x``."""
        if self._factor is not None:
            return sla.cho_solve(self._factor, -self.objective.q - c, check_finite=False)
        return _gradient_descent(self.objective, self.K, c, x_start)
