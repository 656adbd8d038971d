"""Centralized reference solvers and certificate checks.

The distributed problem can be written in compact form

    min f(x) + I_X(z)   s.t.   C x + D z = E

with ``C = [I; M]``, ``D = [-I; 0]``, ``E = [0; e]``, ``M = Hb^T Pb Hb`` and
``e = Hb^T Pb bb``.  This module provides

* a projected-gradient ground-truth solver over the agreement manifold
  intersected with the product of local sets,
* centralized ADMM on the compact form, with the standard augmented
  Lagrangian ``f + I + y^T r + rho/2 ||r||^2``,
* KKT residuals, the Lyapunov series and the three descent inequalities
  used in the convergence argument, all as runtime checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .exceptions import Infeasible, NotConverged
from .graph import StackedOperators, stack_operators
from .objectives import LocalObjective, Quadratic
from .sets import AffineSlice, Box, WholeSpace
from .subproblem import _gradient_descent

PG_TOL = 1e-10
PG_MAX_ITER = 100000
INNER_TOL = 1e-13
DESCENT_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class CompactForm:
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    M: np.ndarray
    e: np.ndarray

    @property
    def size(self) -> int:
        return self.C.shape[1]

    def residual(self, x, z) -> np.ndarray:
        return self.C @ np.ravel(x) + self.D @ np.ravel(z) - self.E


def build_compact_form(ops: StackedOperators) -> CompactForm:
    """Assemble ``C``, ``D`` and ``E`` from the stacked edge operators."""
    N = ops.H_bar.shape[1]
    if ops.P_bar.size:
        PH = ops.P_bar @ ops.H_bar
        M = ops.H_bar.T @ PH
        e = ops.H_bar.T @ (ops.P_bar @ ops.b_bar)
    else:
        M = np.zeros((N, N))
        e = np.zeros(N)
    M = 0.5 * (M + M.T)
    I = np.eye(N)
    C = np.vstack([I, M])
    D = np.vstack([-I, np.zeros((N, N))])
    E = np.concatenate([np.zeros(N), e])
    return CompactForm(C, D, E, M, e)


class StackedObjective(LocalObjective):
    """``f(x) = sum_i f_i(x_i)`` on the stacked vector."""

    def __init__(self, objectives, n):
        self.objectives = tuple(objectives)
        self.n = n
        self.dim = n * len(self.objectives)

    def _blocks(self, x):
        return np.asarray(x, dtype=float).reshape(len(self.objectives), self.n)

    def value(self, x):
        return float(sum(f.value(xi) for f, xi in zip(self.objectives, self._blocks(x))))

    def gradient(self, x):
        return np.concatenate([f.gradient(xi) for f, xi in zip(self.objectives, self._blocks(x))])

    def hessian(self, x):
        return sla.block_diag(*[f.hessian(xi) for f, xi in zip(self.objectives, self._blocks(x))])

    def quadratic_data(self):
        """``(Q, q)`` of the stacked objective if every block is quadratic, else ``None``."""
        if not all(isinstance(f, Quadratic) for f in self.objectives):
            return None
        return (sla.block_diag(*[f.Q for f in self.objectives]),
                np.concatenate([f.q for f in self.objectives]))


class ProductSet:
    """Cartesian product of the agents' local sets."""

    def __init__(self, sets, n):
        self.sets = tuple(sets)
        self.n = n
        self.dim = n * len(self.sets)

    def project(self, v):
        v = np.asarray(v, dtype=float).reshape(len(self.sets), self.n)
        return np.concatenate([s.project(vi) for s, vi in zip(self.sets, v)])

    def contains(self, v, tol=1e-9):
        v = np.asarray(v, dtype=float).reshape(len(self.sets), self.n)
        return all(s.contains(vi, tol) for s, vi in zip(self.sets, v))

    def lp_data(self):
        """Bounds and equalities for an LP feasibility test, or ``None``."""
        bounds, A_rows, b_rows = [], [], []
        for i, s in enumerate(self.sets):
            eq = None
            if isinstance(s, AffineSlice) and isinstance(s.base, Box):
                eq, s = (s.A_eq, s.b_eq), s.base
            if not isinstance(s, Box):
                return None
            bounds += [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
                       for lo, hi in zip(s.lower, s.upper)]
            if eq is not None:
                A = np.zeros((eq[0].shape[0], self.dim))
                A[:, i * self.n:(i + 1) * self.n] = eq[0]
                A_rows.append(A)
                b_rows.append(eq[1])
        return bounds, A_rows, b_rows

    def normal_cone_distance(self, z, v):
        """Distance from ``v`` to the normal cone of the product at ``z``.

        Exact for boxes; for other sets ``||proj(z + v) - z||`` is reported,
        which is zero exactly when ``v`` lies in the cone.
        """
        z = np.asarray(z, dtype=float).reshape(len(self.sets), self.n)
        v = np.asarray(v, dtype=float).reshape(len(self.sets), self.n)
        total = 0.0
        for s, zi, vi in zip(self.sets, z, v):
            if isinstance(s, Box):
                tol = 1e-9 * np.maximum(1.0, np.abs(zi))
                at_lo = zi <= s.lower + tol
                at_hi = zi >= s.upper - tol
                d = vi.copy()
                d[at_lo] = np.maximum(vi[at_lo], 0.0)
                d[at_hi] = np.minimum(vi[at_hi], 0.0)
                d[at_lo & at_hi] = 0.0
                total += float(d @ d)
            else:
                r = s.project(zi + vi) - zi
                total += float(r @ r)
        return float(np.sqrt(total))


class _ManifoldProjector:
    """Projection onto ``{x : Pb (Hb x - bb) = 0}`` intersected with the product set."""

    def __init__(self, ops: StackedOperators, product: ProductSet, tol=INNER_TOL,
                 max_sweeps=200000):
        self.product = product
        self.tol = tol
        self.max_sweeps = max_sweeps
        if ops.P_bar.size:
            self.G = ops.P_bar @ ops.H_bar
            self.h = ops.P_bar @ ops.b_bar
            # G may be rank deficient (cycles), so use the pseudo-inverse
            self.G_pinv = np.linalg.pinv(self.G, rcond=1e-10)
        else:
            self.G = None

    def affine(self, v):
        if self.G is None:
            return v
        return v - self.G_pinv @ (self.G @ v - self.h)

    def __call__(self, v):
        if self.G is None:
            return self.product.project(v)
        x = v.copy()
        p = np.zeros_like(v)
        q = np.zeros_like(v)
        for _ in range(self.max_sweeps):
            y = self.product.project(x + p)
            p = x + p - y
            x_new = self.affine(y + q)
            q = y + q - x_new
            change = np.max(np.abs(x_new - x))
            gap = np.max(np.abs(x_new - y))
            x = x_new
            if change < self.tol and gap < self.tol:
                return x
        if gap > 1e-6:
            raise Infeasible(f"Dykstra could not reach the feasible set (gap {gap:.3g})")
        return x


def _certify_feasible(ops, product: ProductSet):
    data = product.lp_data()
    if data is None or ops.P_bar.size == 0:
        return
    bounds, A_rows, b_rows = data
    A = np.vstack([ops.P_bar @ ops.H_bar] + A_rows)
    b = np.concatenate([ops.P_bar @ ops.b_bar] + b_rows)
    res = linprog(np.zeros(product.dim), A_eq=A, b_eq=b, bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible("edge agreements and local sets have no common point")


@dataclass
class SaddleCertificate:
    """Primal-dual saddle point of the compact problem.

    ``y`` stacks the multipliers of the two constraint blocks
    ``x - z = 0`` and ``M x = e``.
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    ell: float
    feasibility: float = np.nan
    stationarity: float = np.nan
    rho: float = 1.0
    iterations: int = 0

    def lyapunov(self, y, z, rho=None) -> float:
        """``(1/rho) ||y - y*||^2 + rho ||D (z - z*)||^2``."""
        rho = self.rho if rho is None else rho
        dy = np.ravel(y) - self.y
        dz = np.ravel(z) - self.z
        return float(dy @ dy / rho + rho * (dz @ dz))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "z", "y_lambda", "y_mu"])
            N = self.x.size
            for k in range(N):
                w.writerow([k, repr(float(self.x[k])), repr(float(self.z[k])),
                            repr(float(self.y[k])), repr(float(self.y[N + k]))])


@dataclass
class CentralizedState:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def copy(self):
        return CentralizedState(self.x.copy(), self.z.copy(), self.y.copy())


class CentralizedADMM:
    """ADMM on the compact form with the joint x-minimization.

    The x-step minimizes ``f(x) + y^T (Cx + Dz - E) + rho/2 ||Cx + Dz - E||^2``
    over all agents at once; the z-step projects ``x + y_1 / rho`` onto the
    product of local sets; the dual step is ``y += rho (Cx + Dz - E)``.
    """

    def __init__(self, problem, rho=5.0, compact: CompactForm | None = None):
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.problem = problem
        self.rho = float(rho)
        ops = stack_operators(problem.graph, problem.agreements, problem.n)
        self.compact = build_compact_form(ops) if compact is None else compact
        self.f = StackedObjective(problem.objectives, problem.n)
        self.product = ProductSet(problem.sets, problem.n)
        N = self.compact.size
        M = self.compact.M
        self.K = self.rho * (np.eye(N) + M @ M)
        qd = self.f.quadratic_data()
        self._factor = None
        if qd is not None:
            self._Q, self._q = qd
            self._factor = sla.cho_factor(2.0 * self._Q + self.K)

    def x_step(self, z, y):
        N = self.compact.size
        M, e = self.compact.M, self.compact.e
        y1, y2 = y[:N], y[N:]
        c = y1 + M @ y2 - self.rho * z - self.rho * (M @ e)
        if self._factor is not None:
            return sla.cho_solve(self._factor, -self._q - c)
        return _gradient_descent(self.f, self.K, c, z)

    def step(self, state: CentralizedState) -> CentralizedState:
        N = self.compact.size
        x = self.x_step(state.z, state.y)
        z = self.product.project(x + state.y[:N] / self.rho)
        y = state.y + self.rho * self.compact.residual(x, z)
        return CentralizedState(x, z, y)

    def initial_state(self, x=None, y=None) -> CentralizedState:
        N = self.compact.size
        x = np.zeros(N) if x is None else np.ravel(np.asarray(x, float)).copy()
        z = self.product.project(x)
        y = np.zeros(2 * N) if y is None else np.ravel(np.asarray(y, float)).copy()
        return CentralizedState(x, z, y)

    def run(self, state=None, max_iter=1000, tol=None, record=True):
        """Iterate from ``state``; returns ``(final_state, history)``.

        ``history`` holds the initial state followed by every iterate.  With
        ``tol`` set, stops once the residual and the change in ``z`` and
        ``y`` all drop below it.
        """
        state = self.initial_state() if state is None else state
        history = [state] if record else None
        for _ in range(max_iter):
            new = self.step(state)
            if record:
                history.append(new)
            done = tol is not None and max(
                np.max(np.abs(self.compact.residual(new.x, new.z))),
                np.max(np.abs(new.z - state.z)),
                np.max(np.abs(new.y - state.y))) < tol
            state = new
            if done:
                break
        return state, history


def centralized_admm_step(state: CentralizedState, problem, compact: CompactForm,
                          rho=5.0) -> CentralizedState:
    """One step of centralized ADMM (builds the solver each call)."""
    return CentralizedADMM(problem, rho, compact).step(state)


def _projected_gradient(f, proj, x0, tol=PG_TOL, max_iter=PG_MAX_ITER):
    x = proj(x0)
    fx = f.value(x)
    g = f.gradient(x)
    t = 1.0
    for it in range(max_iter):
        t *= 2.0
        while True:
            x_new = proj(x - t * g)
            d = x_new - x
            f_new = f.value(x_new)
            g_new = f.gradient(x_new)
            # quadratic upper-bound test plus a local curvature test; the
            # latter stays meaningful once f changes fall below rounding
            if (f_new <= fx + g @ d + (d @ d) / (2 * t) + 1e-15 * max(1.0, abs(fx))
                    and (g_new - g) @ d <= (d @ d) / t):
                break
            t *= 0.5
            if t < 1e-16:
                raise NotConverged("projected gradient line search failed", iterations=it,
                                   residual=float(np.max(np.abs(d))))
        x, fx, g = x_new, f_new, g_new
        if np.max(np.abs(d)) < tol:
            return x, it + 1
    raise NotConverged(f"projected gradient did not reach {tol:g}", iterations=max_iter,
                       residual=float(np.max(np.abs(d))))


def _dual_estimate(f, compact, product, x):
    """Least-squares multipliers at a primal optimum.

    Solves ``grad f + M y2 = 0`` on the coordinates that are free in the
    local sets; ``y1`` then absorbs what is left on the active ones.
    """
    N = compact.size
    g = f.gradient(x)
    M = compact.M
    free = np.ones(N, dtype=bool)
    for i, s in enumerate(product.sets):
        if isinstance(s, Box) and not isinstance(s, WholeSpace):
            sl = slice(i * product.n, (i + 1) * product.n)
            xi = x[sl]
            tol = 1e-7 * np.maximum(1.0, np.abs(xi))
            free[sl] = (xi > s.lower + tol) & (xi < s.upper - tol)
        elif not isinstance(s, Box):
            free[i * product.n:(i + 1) * product.n] = False
    y2 = np.zeros(N)
    if np.any(free) and np.any(M):
        y2 = np.linalg.lstsq(M[free], -g[free], rcond=None)[0]
    y1 = -g - M @ y2
    return np.concatenate([y1, y2])


def kkt_check(cert: SaddleCertificate, problem, compact: CompactForm | None = None):
    """Return ``(feasibility, stationarity)`` residuals of a candidate saddle point.

    Feasibility is ``||C x + D z - E||``.  Stationarity is the distance from
    ``-(C + D)^T y - grad f(x)`` to the normal cone of the local sets at ``z``.
    """
    if compact is None:
        compact = build_compact_form(stack_operators(problem.graph, problem.agreements, problem.n))
    f = StackedObjective(problem.objectives, problem.n)
    product = ProductSet(problem.sets, problem.n)
    feas = float(np.linalg.norm(compact.residual(cert.x, cert.z)))
    v = -(compact.C + compact.D).T @ cert.y - f.gradient(cert.x)
    stat = product.normal_cone_distance(cert.z, v)
    return feas, stat


def solve_centralized(problem, rho=5.0, tol=PG_TOL, max_iter=PG_MAX_ITER,
                      polish_iter=20000, x0=None) -> SaddleCertificate:
    """Ground-truth saddle point of the edge-agreement problem.

    The primal optimum comes from projected gradient over the agreement
    manifold intersected with the local sets (projection by Dykstra).  The
    multipliers start from a least-squares estimate and are refined by
    centralized ADMM started at that point, which also polishes ``x``.

    Raises
    ------
    Infeasible
        If the agreement manifold misses the product of local sets.
    NotConverged
        If projected gradient hits its iteration cap.
    """
    ops = stack_operators(problem.graph, problem.agreements, problem.n)
    compact = build_compact_form(ops)
    f = StackedObjective(problem.objectives, problem.n)
    product = ProductSet(problem.sets, problem.n)
    _certify_feasible(ops, product)
    proj = _ManifoldProjector(ops, product)
    x0 = np.zeros(product.dim) if x0 is None else np.ravel(np.asarray(x0, float))
    x, it = _projected_gradient(f, proj, x0, tol, max_iter)

    admm = CentralizedADMM(problem, rho, compact)
    y = _dual_estimate(f, compact, product, x)
    state = CentralizedState(x.copy(), product.project(x), y)
    state, _ = admm.run(state, max_iter=polish_iter, tol=INNER_TOL, record=False)
    # keep the projected-gradient point if the polish drifted off
    if np.max(np.abs(state.z - x)) > 1e-6:
        state = CentralizedState(x, x, y)
    cert = SaddleCertificate(state.z.copy(), state.z.copy(), state.y.copy(),
                             f.value(state.z), rho=rho, iterations=it)
    cert.feasibility, cert.stationarity = kkt_check(cert, problem, compact)
    return cert


def lyapunov_series(history, cert: SaddleCertificate, rho=None) -> np.ndarray:
    """``V_k`` along a centralized-ADMM history."""
    return np.array([cert.lyapunov(s.y, s.z, rho) for s in history])


@dataclass
class DescentReport:
    """Per-iteration margins ``rhs - lhs``; an inequality holds where margin >= -slack."""

    gap_bound: np.ndarray
    value_bound: np.ndarray
    lyapunov: np.ndarray
    V: np.ndarray
    slack: float = DESCENT_SLACK
    worst: dict = field(default_factory=dict)

    def __post_init__(self):
        self.worst = {name: float(np.min(getattr(self, name), initial=np.inf))
                      for name in ("gap_bound", "value_bound", "lyapunov")}

    @property
    def ok(self) -> bool:
        return all(v >= -self.slack for v in self.worst.values())


def descent_checks(history, cert: SaddleCertificate, problem, compact=None, rho=None,
                 slack=DESCENT_SLACK) -> DescentReport:
    """Evaluate the three descent inequalities along a centralized-ADMM run.

    With ``ell_k = f(x_k)`` (``z_k`` is always feasible) and
    ``r_k = C x_k + D z_k - E``:

    * ``ell* - ell_{k+1} <= y*^T r_{k+1}``
    * ``ell_{k+1} - ell* <= -y_{k+1}^T r_{k+1}
      - rho (D dz)^T (-r_{k+1} + D (z_{k+1} - z*))``
    * ``V_{k+1} <= V_k - rho ||r_{k+1}||^2 - rho ||D dz||^2``

    where ``dz = z_{k+1} - z_k``.
    """
    rho = cert.rho if rho is None else rho
    if compact is None:
        compact = build_compact_form(stack_operators(problem.graph, problem.agreements, problem.n))
    f = StackedObjective(problem.objectives, problem.n)
    D = compact.D
    V = lyapunov_series(history, cert, rho)
    m3, m4, m5 = [], [], []
    for k in range(len(history) - 1):
        prev, cur = history[k], history[k + 1]
        r = compact.residual(cur.x, cur.z)
        ell = f.value(cur.x)
        Ddz = D @ (cur.z - prev.z)
        m3.append(cert.y @ r - (cert.ell - ell))
        rhs4 = -cur.y @ r - rho * Ddz @ (-r + D @ (cur.z - cert.z))
        m4.append(rhs4 - (ell - cert.ell))
        m5.append(V[k] - rho * (r @ r) - rho * (Ddz @ Ddz) - V[k + 1])
    return DescentReport(np.array(m3), np.array(m4), np.array(m5), V, slack)


def series_to_csv(path, V, report: DescentReport | None = None):
    """Write ``k, V`` and, when given, the three inequality margins."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["k", "V"] + (["gap_bound", "value_bound", "lyapunov"] if report is not None else [])
        w.writerow(cols)
        for k, v in enumerate(V):
            row = [k, repr(float(v))]
            if report is not None:
                row += ["" if k == 0 else repr(float(getattr(report, n)[k - 1]))
                        for n in ("gap_bound", "value_bound", "lyapunov")]
            w.writerow(row)
