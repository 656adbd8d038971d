"""Distributed ADMM for optimization under edge agreements.

Each agent ``i`` owns ``(x_i, z_i, lam_i, mu_i)`` and per iteration performs

1. x-update: local strongly convex minimization with neighbor states held
   at their previous values (see :mod:`edgeadmm.subproblem`);
2. z-update: projection of ``x_i + lam_i / rho_z`` onto its local set;
3. lam-update: ``lam_i += s_lam (x_i - z_i)``;
4. exchange of the new ``x_i`` with neighbors (barrier);
5. mu-update: ``mu_i += s_mu sum_j P_ij (x_i - x_j - b_ij)``;
6. exchange of the new ``mu_i`` with neighbors (barrier).

Step 6 only happens for the default ``x_update="lagrangian"`` variant, which
keeps the neighbor multiplier in the x-update.  All cross-agent information
flows through the agents' inboxes, so an agent never reads a peer's state
directly.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DimensionMismatch, NonFiniteIterate
from .graph import EdgeAgreement, Graph, edge_residual
from .objectives import LocalObjective
from .sets import ConvexSet
from .subproblem import XUpdateSolver

DUAL_STEP_MODES = ("unit", "rho", "scaled")
X_UPDATE_MODES = ("lagrangian", "literal")


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Problem data: graph, edge agreements, local objectives and local sets."""

    graph: Graph
    agreements: tuple[EdgeAgreement, ...]
    objectives: tuple[LocalObjective, ...]
    sets: tuple[ConvexSet, ...]

    def __post_init__(self):
        object.__setattr__(self, "agreements", tuple(self.agreements))
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "sets", tuple(self.sets))
        m = self.graph.m
        if len(self.objectives) != m or len(self.sets) != m:
            raise DimensionMismatch(f"need {m} objectives and {m} sets")
        n = self.objectives[0].dim
        for i, (f, s) in enumerate(zip(self.objectives, self.sets)):
            if f.dim != n or s.dim != n:
                raise DimensionMismatch(f"agent {i} has inconsistent dimension")
        if len(self.agreements) != self.graph.n_edges:
            raise DimensionMismatch("one agreement per edge is required")
        for e, ag in zip(self.graph.edges, self.agreements):
            if tuple(ag.edge) != e:
                raise DimensionMismatch(f"agreement {ag.edge} does not match edge {e}")
            if ag.dim != n:
                raise DimensionMismatch(f"agreement {ag.edge} has dim {ag.dim}, expected {n}")

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def n(self) -> int:
        return self.objectives[0].dim

    @property
    def agreement_rows(self) -> int:
        return sum(ag.rows for ag in self.agreements)

    def local_agreements(self, i: int) -> list[tuple[int, EdgeAgreement]]:
        """Agreements incident to agent ``i``, oriented with ``i`` first."""
        out = []
        for (a, b), ag in zip(self.graph.edges, self.agreements):
            if a == i:
                out.append((b, ag))
            elif b == i:
                out.append((a, ag.reversed()))
        return out

    def objective_value(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(self.m, self.n)
        return float(sum(f.value(xi) for f, xi in zip(self.objectives, x)))

    def edge_residual(self, x) -> float:
        return edge_residual(x, self.graph, self.agreements)

    def default_init(self):
        x = np.array([s.project(np.zeros(self.n)) for s in self.sets])
        return {"x": x, "z": x.copy(), "lam": np.zeros_like(x), "mu": np.zeros_like(x)}


def dual_updates(lam, mu, x_new, z_new, neighbor_x_new, lam_step, mu_step):
    """Multiplier updates for one agent.

    ``neighbor_x_new`` is a sequence of ``(P_ij, b_bar_ij, x_j)`` with the
    agreement oriented from this agent.
    """
    lam_new = lam + lam_step * (x_new - z_new)
    acc = np.zeros_like(mu)
    for P, b_bar, xj in neighbor_x_new:
        acc += P @ (x_new - xj - b_bar)
    return lam_new, mu + mu_step * acc


def stop_check(x, z, W1, agreement_rows, eps_abs=1e-8, eps_rel=1e-6, dual=None,
               dual_scale=0.0) -> bool:
    """Combined absolute/relative test on ``||x - z||`` and ``sqrt(W1)``.

    When ``dual`` is given (the penalty-weighted change of the primal
    iterates since the previous iteration) it must also fall below
    ``sqrt(size) eps_abs + eps_rel dual_scale``, where ``dual_scale`` is the
    norm of the multipliers.  Without it the test can fire while the
    multipliers, and hence the solution, are still moving.
    """
    x = np.ravel(x)
    z = np.ravel(z)
    if math.isinf(eps_abs) or math.isinf(eps_rel):
        return True
    primal = np.linalg.norm(x - z)
    if not (np.isfinite(primal) and np.isfinite(W1)):
        return False
    tol_p = math.sqrt(x.size) * eps_abs + eps_rel * max(np.linalg.norm(x), np.linalg.norm(z))
    tol_e = math.sqrt(agreement_rows) * eps_abs + eps_rel * np.linalg.norm(x)
    if not (primal <= tol_p and math.sqrt(max(W1, 0.0)) <= tol_e):
        return False
    if dual is None:
        return True
    return bool(np.isfinite(dual) and dual <= math.sqrt(x.size) * eps_abs + eps_rel * dual_scale)


@dataclass
class TraceRecord:
    k: int
    primal_residual: float
    W1: float
    objective: float
    W2: float | None = None
    V: float | None = None
    millis: float = 0.0


@dataclass
class IterationTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord):
        if self.records and rec.k <= self.records[-1].k:
            raise ValueError("trace iteration index must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)

    def has(self, name) -> bool:
        return bool(self.records) and getattr(self.records[0], name) is not None

    def to_csv(self, path, timing=False):
        """Write ``k, primal_residual, W1, objective[, W2][, V][, millis]``.

        Timing is excluded unless requested so that reruns are byte-identical.
        """
        cols = ["k", "primal_residual", "W1", "objective"]
        cols += [c for c in ("W2", "V") if self.has(c)]
        if timing:
            cols.append("millis")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.k if c == "k" else repr(float(getattr(r, c))) for c in cols])


class Agent:
    """Local state and update logic for one agent.

    The agent's only view of its peers is ``inbox_x`` / ``inbox_mu``, filled
    by the orchestrator at the barriers.
    """

    def __init__(self, index, objective, cset, local_agreements, rho_z, rho_e,
                 lam_step, mu_step, use_neighbor_mu=True):
        self.index = index
        self.objective = objective
        self.cset = cset
        self.neighbors = [j for j, _ in local_agreements]
        self.P = {j: ag.P for j, ag in local_agreements}
        self.b_bar = {j: ag.b_bar for j, ag in local_agreements}
        self.rho_z = rho_z
        self.rho_e = rho_e
        self.lam_step = lam_step
        self.mu_step = mu_step
        self.use_neighbor_mu = use_neighbor_mu
        self._xsolver = XUpdateSolver(objective, [ag.P for _, ag in local_agreements], rho_z, rho_e)
        self._warm = hasattr(cset, "project_warm")
        self._proj_dual = None
        self.x = self.z = self.lam = self.mu = None
        self.inbox_x: dict[int, np.ndarray] = {}
        self.inbox_mu: dict[int, np.ndarray] = {}

    def initialize(self, x, z, lam, mu):
        self.x, self.z = np.array(x, float), np.array(z, float)
        self.lam, self.mu = np.array(lam, float), np.array(mu, float)
        self._proj_dual = None

    def _linear_term(self):
        c = self.lam - self.rho_z * self.z
        for j in self.neighbors:
            P = self.P[j]
            dmu = self.mu - self.inbox_mu[j] if self.use_neighbor_mu else self.mu
            c = c + P @ (dmu - self.rho_e * (self.inbox_x[j] + self.b_bar[j]))
        return c

    def primal_step(self):
        """x-, z- and lam-updates; returns the new ``x`` to broadcast."""
        x = self._xsolver.solve(self._linear_term(), self.x)
        v = x + self.lam / self.rho_z
        if self._warm:
            z, self._proj_dual = self.cset.project_warm(v, self._proj_dual)
        else:
            z = self.cset.project(v)
        self.lam = self.lam + self.lam_step * (x - z)
        self.x, self.z = x, z
        return x

    def multiplier_step(self):
        _, self.mu = dual_updates(
            self.lam, self.mu, self.x, self.z,
            [(self.P[j], self.b_bar[j], self.inbox_x[j]) for j in self.neighbors],
            self.lam_step, self.mu_step)
        return self.mu


@dataclass
class RunResult:
    z: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    trace: IterationTrace
    converged: bool
    n_iter: int
    history: list | None = None


def resolve_steps(dual_step, rho_z, rho_e, lam_step=None, mu_step=None, max_degree=1):
    """Multiplier step sizes ``(s_lam, s_mu)``.

    ``"unit"`` uses 1 for both, ``"rho"`` uses the penalties, and
    ``"scaled"`` keeps ``s_lam = 1`` with
    ``s_mu = min(rho_z, rho_e) / (4 max_degree)``.  The mu-recursion is a
    gradient step on the node-aggregated residual ``M x - e`` with
    ``||M|| <= 2 max_degree``; the scaled step keeps the linearized
    iteration stable both with no bound active and with every bound
    active, where the plain ``rho`` step can diverge.
    """
    if dual_step not in DUAL_STEP_MODES:
        raise ValueError(f"dual_step must be one of {DUAL_STEP_MODES}")
    if dual_step == "unit":
        s_lam, s_mu = 1.0, 1.0
    elif dual_step == "rho":
        s_lam, s_mu = rho_z, rho_e
    else:
        s_lam, s_mu = 1.0, min(rho_z, rho_e) / (4.0 * max(1, max_degree))
    return (s_lam if lam_step is None else float(lam_step),
            s_mu if mu_step is None else float(mu_step))


class BulkSynchronousNetwork:
    """Orchestrates agents under a bulk-synchronous barrier model."""

    def __init__(self, problem: ProblemSpec, rho_z, rho_e, lam_step, mu_step,
                 x_update="lagrangian", n_jobs=None):
        if x_update not in X_UPDATE_MODES:
            raise ValueError(f"x_update must be one of {X_UPDATE_MODES}")
        self.problem = problem
        self.use_neighbor_mu = x_update == "lagrangian"
        self.agents = [
            Agent(i, problem.objectives[i], problem.sets[i], problem.local_agreements(i),
                  rho_z, rho_e, lam_step, mu_step, self.use_neighbor_mu)
            for i in range(problem.m)
        ]
        self.n_jobs = n_jobs

    def _map(self, fn, pool):
        if pool is None:
            return [fn(a) for a in self.agents]
        return list(pool.map(fn, self.agents))

    def _exchange(self, attr):
        snapshot = [getattr(a, attr).copy() for a in self.agents]
        box = "inbox_x" if attr == "x" else "inbox_mu"
        for a in self.agents:
            getattr(a, box).update({j: snapshot[j] for j in a.neighbors})

    def initialize(self, init):
        for i, a in enumerate(self.agents):
            a.initialize(init["x"][i], init["z"][i], init["lam"][i], init["mu"][i])
        self._exchange("x")
        self._exchange("mu")

    def step(self, pool=None):
        self._map(Agent.primal_step, pool)
        self._exchange("x")
        self._map(Agent.multiplier_step, pool)
        if self.use_neighbor_mu:
            self._exchange("mu")

    def stacked(self, attr):
        return np.array([getattr(a, attr) for a in self.agents])


def _check_init(problem, init):
    if init is None:
        return problem.default_init()
    out = {}
    for key in ("x", "z", "lam", "mu"):
        if init.get(key) is not None:
            arr = np.array(init[key], dtype=float).reshape(problem.m, problem.n)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"initial {key} is not finite")
            out[key] = arr
    if "x" not in out:
        # projecting 0 can be costly for sliced sets, so only do it when needed
        out.setdefault("z", problem.default_init()["z"])
        out["x"] = out["z"].copy()
    elif "z" not in out:
        out["z"] = np.array([s.project(xi) for s, xi in zip(problem.sets, out["x"])])
    for key in ("lam", "mu"):
        out.setdefault(key, np.zeros((problem.m, problem.n)))
    return out


def run(problem: ProblemSpec, init=None, *, rho=5.0, rho_edge=None, max_iter=2000,
        eps_abs=1e-8, eps_rel=1e-6, dual_step="unit", lam_step=None, mu_step=None,
        x_update="lagrangian", stop=True, x_star=None, certificate=None,
        record_iterates=False, n_jobs=None) -> RunResult:
    """Run the distributed iteration.

    Parameters
    ----------
    problem : ProblemSpec
    init : dict, optional
        Per-agent ``x``, ``z``, ``lam``, ``mu`` as ``(m, n)`` arrays; missing
        entries default to ``x = z = proj(0)`` and zero multipliers.  If only
        ``x`` is given, ``z`` is its projection.
    rho, rho_edge : float
        Penalty on ``x = z`` and on the edge terms (``rho_edge`` defaults to
        ``rho``).
    dual_step : {"unit", "rho", "scaled"}
        Multiplier step sizes, see :func:`resolve_steps`.
        ``lam_step``/``mu_step`` override either.
    x_update : {"lagrangian", "literal"}
        Whether the x-update includes neighbor multipliers.
    stop : bool
        Apply :func:`stop_check` each iteration; otherwise run ``max_iter``.
    x_star, certificate : optional
        Reference optimum (for W2) and saddle certificate (for V) to record.
    n_jobs : int, optional
        Run agent updates on a thread pool; results are identical to the
        sequential mode.

    Returns
    -------
    RunResult
        ``z`` is the solution (each ``z_i`` lies in its local set).
    """
    rho_edge = rho if rho_edge is None else rho_edge
    if rho <= 0 or rho_edge <= 0:
        raise ValueError("penalty parameters must be positive")
    max_deg = max((problem.graph.degree(i) for i in range(problem.m)), default=0)
    s_lam, s_mu = resolve_steps(dual_step, rho, rho_edge, lam_step, mu_step, max_deg)
    init = _check_init(problem, init)
    net = BulkSynchronousNetwork(problem, rho, rho_edge, s_lam, s_mu, x_update, n_jobs)
    net.initialize(init)
    x_star = None if x_star is None else np.asarray(x_star, float).reshape(problem.m, problem.n)
    trace = IterationTrace()
    history = [] if record_iterates else None
    converged = False
    rows = problem.agreement_rows
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor(n_jobs) if n_jobs and n_jobs > 1 else None
    k = 0
    x_prev, z_prev = init["x"], init["z"]
    try:
        for k in range(1, max_iter + 1):
            net.step(pool)
            x, z = net.stacked("x"), net.stacked("z")
            lam, mu = net.stacked("lam"), net.stacked("mu")
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))
                    and np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
                raise NonFiniteIterate(f"non-finite iterate at iteration {k}", iteration=k)
            W1 = problem.edge_residual(x)
            if not np.isfinite(W1):
                raise NonFiniteIterate(f"edge residual overflowed at iteration {k}", iteration=k)
            W2 = None if x_star is None else float(np.sum((x - x_star) ** 2))
            V = None
            if certificate is not None:
                V = certificate.lyapunov(np.concatenate([lam.ravel(), mu.ravel()]), z.ravel(), rho)
            trace.append(TraceRecord(k, float(np.linalg.norm(x - z)), W1,
                                     problem.objective_value(x), W2, V,
                                     1e3 * (time.perf_counter() - t0)))
            if record_iterates:
                history.append((x.copy(), z.copy(), lam.copy(), mu.copy()))
            dual = max(rho, rho_edge) * math.sqrt(np.sum((x - x_prev) ** 2)
                                                  + np.sum((z - z_prev) ** 2))
            x_prev, z_prev = x, z
            if stop and stop_check(x, z, W1, rows, eps_abs, eps_rel, dual,
                                   math.sqrt(np.sum(lam ** 2) + np.sum(mu ** 2))):
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(net.stacked("z"), net.stacked("x"), net.stacked("lam"), net.stacked("mu"),
                     trace, converged, k, history)
