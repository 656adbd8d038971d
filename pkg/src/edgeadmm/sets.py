"""Closed convex constraint sets with Euclidean projection.

Projection onto a set is the proximal operator of its indicator function,
which is how local constraints enter the z-update of the ADMM iteration.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .exceptions import DimensionMismatch, EmptySlice, NotConverged, RankDeficient

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 20000
DYKSTRA_FAIL_RESIDUAL = 1e-6


def _vector(v, dim):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != dim:
        raise DimensionMismatch(f"expected a vector of length {dim}, got shape {v.shape}")
    return v


class ConvexSet:
    """Nonempty closed convex subset of R^dim."""

    dim: int

    def project(self, v) -> np.ndarray:
        raise NotImplementedError

    def contains(self, v, tol=1e-9) -> bool:
        v = _vector(v, self.dim)
        return bool(np.linalg.norm(self.project(v) - v) <= tol)


class Box(ConvexSet):
    """Coordinate box ``lower <= v <= upper``; bounds may be infinite."""

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionMismatch("lower and upper must be vectors of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper entrywise")
        lower.setflags(write=False)
        upper.setflags(write=False)
        self.lower = lower
        self.upper = upper
        self.dim = lower.shape[0]

    def project(self, v):
        # np.clip treats infinite bounds as no-ops
        return np.clip(_vector(v, self.dim), self.lower, self.upper)

    def contains(self, v, tol=1e-9):
        v = _vector(v, self.dim)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def __repr__(self):
        return f"Box(dim={self.dim})"


class WholeSpace(Box):
    def __init__(self, dim):
        super().__init__(np.full(dim, -np.inf), np.full(dim, np.inf))

    def project(self, v):
        return _vector(v, self.dim).copy()

    def __repr__(self):
        return f"WholeSpace(dim={self.dim})"


class AffineSlice(ConvexSet):
    """Intersection of a base set with the affine subspace ``A_eq z = b_eq``.

    Parameters
    ----------
    base : ConvexSet
        Set being sliced, typically a :class:`Box`.
    A_eq, b_eq : array_like
        Full-row-rank equality constraints.
    method : {"dykstra", "newton"}
        Projection algorithm.  ``"dykstra"`` runs Dykstra's alternating
        projections with correction terms and works for any base set; on a
        box base it finishes with the Newton solve if the sweep budget runs
        out.
        ``"newton"`` solves the dual of the projection problem with a
        regularized semismooth Newton method; it needs a box base, accepts a
        warm-start multiplier and falls back to Dykstra if it stalls.
    tol : float
        Stopping tolerance for the chosen method.

    Raises
    ------
    EmptySlice
        If the intersection is certified empty.
    """

    def __init__(self, base: ConvexSet, A_eq, b_eq, method="dykstra", tol=DYKSTRA_TOL,
                 max_sweeps=DYKSTRA_MAX_SWEEPS):
        A = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b = np.atleast_1d(np.asarray(b_eq, dtype=float))
        if A.shape[1] != base.dim:
            raise DimensionMismatch(f"A_eq has {A.shape[1]} columns, base has dim {base.dim}")
        if b.shape != (A.shape[0],):
            raise DimensionMismatch("b_eq length must equal the number of rows of A_eq")
        if method not in ("dykstra", "newton"):
            raise ValueError(f"unknown projection method {method!r}")
        if method == "newton" and not isinstance(base, Box):
            raise ValueError("the newton projection requires a Box base")
        gram = A @ A.T
        if np.linalg.cond(gram) > 1e12:
            raise RankDeficient("A_eq must have full row rank")
        self.base = base
        self.A_eq = A
        self.b_eq = b
        self.dim = base.dim
        self.method = method
        self.tol = tol
        self.max_sweeps = max_sweeps
        self._gram = sla.cho_factor(gram)
        self._gram_scale = float(np.mean(np.diag(gram)))
        self._certify()

    def _certify(self):
        if isinstance(self.base, Box):
            bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
                      for lo, hi in zip(self.base.lower, self.base.upper)]
            res = linprog(np.zeros(self.dim), A_eq=self.A_eq, b_eq=self.b_eq,
                          bounds=bounds, method="highs")
            if res.status == 2:
                raise EmptySlice("box and affine constraints have no common point")
            start = res.x if res.status == 0 else np.zeros(self.dim)
        else:
            start = np.zeros(self.dim)
        try:
            z = self._dykstra(start)
        except NotConverged as exc:
            raise EmptySlice(f"could not certify a feasible point: {exc}") from exc
        if not self.base.contains(z, 1e-6) or np.max(np.abs(self.A_eq @ z - self.b_eq)) > 1e-6:
            raise EmptySlice("projection did not produce a feasible point")

    def affine_project(self, v):
        r = self.A_eq @ v - self.b_eq
        return v - self.A_eq.T @ sla.cho_solve(self._gram, r)

    def _dykstra(self, v):
        x, gap, done = self._dykstra_sweeps(v)
        if not done and gap > DYKSTRA_FAIL_RESIDUAL:
            raise NotConverged(f"Dykstra stopped after {self.max_sweeps} sweeps",
                               iterations=self.max_sweeps, residual=gap)
        return x

    def _dykstra_sweeps(self, v):
        """Run Dykstra; returns ``(x, gap, converged)``."""
        x = v.copy()
        p = np.zeros_like(v)
        q = np.zeros_like(v)
        gap = np.inf
        for sweep in range(1, self.max_sweeps + 1):
            y = self.base.project(x + p)
            p = x + p - y
            x_new = self.affine_project(y + q)
            q = y + q - x_new
            change = np.max(np.abs(x_new - x))
            gap = np.max(np.abs(x_new - y))
            x = x_new
            # a small step alone can stall short of the intersection
            if change < self.tol and gap < self.tol:
                return x, gap, True
        return x, gap, False

    def _newton(self, v, nu=None, max_iter=200):
        A, b = self.A_eq, self.b_eq
        lo, hi = self.base.lower, self.base.upper
        nu = np.zeros(A.shape[0]) if nu is None else np.array(nu, dtype=float)
        scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
        tol = 1e-12 * scale

        def dual(nu):
            z = np.clip(v - A.T @ nu, lo, hi)
            return 0.5 * np.sum((z - v) ** 2) + nu @ (A @ z - b), z

        phi, z = dual(nu)
        g = A @ z - b
        for _ in range(max_iter):
            gmax = np.max(np.abs(g))
            if gmax <= tol:
                return z, nu
            gnorm = math.sqrt(g @ g)
            free = (z > lo) & (z < hi)
            Af = A[:, free]
            J = Af @ Af.T
            J.flat[::J.shape[0] + 1] += 1e-3 * self._gram_scale * min(1.0, gnorm)
            d = sla.cho_solve(sla.cho_factor(J, check_finite=False), g, check_finite=False)
            t = 1.0
            while True:
                phi_t, z_t = dual(nu + t * d)
                g_t = A @ z_t - b
                if (math.sqrt(g_t @ g_t) <= 0.9 * gnorm
                        or phi_t >= phi + 1e-4 * t * (g @ d) - 1e-15 * abs(phi)):
                    break
                t *= 0.5
                if t < 1e-12:
                    if gmax <= 1e-9 * scale:
                        return z, nu
                    raise NotConverged("semismooth Newton line search failed",
                                       residual=gmax)
            nu = nu + t * d
            phi, z, g = phi_t, z_t, g_t
        raise NotConverged("semismooth Newton hit its iteration cap",
                           iterations=max_iter, residual=float(np.max(np.abs(g))))

    def project(self, v):
        return self.project_warm(v)[0]

    def project_warm(self, v, dual_start=None):
        """Project ``v`` and return ``(z, dual)``.

        ``dual`` is the equality multiplier from the Newton method (``None``
        for Dykstra); pass it back as ``dual_start`` to warm-start the next
        projection of a nearby point.
        """
        v = _vector(v, self.dim)
        if self.method == "newton":
            try:
                return self._newton(v, dual_start)
            except (NotConverged, np.linalg.LinAlgError):
                pass
            return self._dykstra(v), None
        x, gap, done = self._dykstra_sweeps(v)
        if done:
            return x, None
        # Dykstra crawls when the subspace meets a face at a shallow angle
        if isinstance(self.base, Box):
            try:
                return self._newton(v)[0], None
            except (NotConverged, np.linalg.LinAlgError):
                pass
        if gap > DYKSTRA_FAIL_RESIDUAL:
            raise NotConverged(f"Dykstra stopped after {self.max_sweeps} sweeps",
                               iterations=self.max_sweeps, residual=gap)
        return x, None

    def contains(self, v, tol=1e-9):
        v = _vector(v, self.dim)
        if not self.base.contains(v, tol):
            return False
        return bool(np.linalg.norm(self.project(v) - v) <= tol)

    def __repr__(self):
        return f"AffineSlice(dim={self.dim}, rows={self.A_eq.shape[0]}, method={self.method!r})"


def project(cset: ConvexSet, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``cset``."""
    return cset.project(v)


def contains(cset: ConvexSet, v, tol=1e-9) -> bool:
    return cset.contains(v, tol)
