"""Estimator-style wrappers with ``get_params``/``set_params`` and fitted attributes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .admm import DUAL_STEP_MODES, X_UPDATE_MODES, ProblemSpec, run
from .battery import DemandProfile, build_mpc_instance, cold_start, mpc_loop, parse_own_controls, ring_graph
from .oracle import PG_MAX_ITER, PG_TOL, kkt_check, solve_centralized


def _check_choice(name, value, choices):
    if value not in choices:
        raise ValueError(f"{name} must be one of {choices}, got {value!r}")


class EdgeAgreementADMM(BaseEstimator):
    """Distributed ADMM solver for edge-agreement problems.

    Parameters
    ----------
    rho : float
        Penalty on the local copy constraint ``x_i = z_i``.
    rho_edge : float or None
        Penalty on the edge agreements; ``None`` means ``rho``.
    max_iter : int
    eps_abs, eps_rel : float
        Stopping thresholds.
    dual_step : {"unit", "rho", "scaled"}
    x_update : {"lagrangian", "literal"}
    n_jobs : int or None
        Thread count for the per-agent updates.

    Attributes
    ----------
    z_ : ndarray of shape (m, n)
        Solution; each row lies in its agent's set.
    x_, lam_, mu_ : ndarray of shape (m, n)
    trace_ : IterationTrace
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, rho=5.0, rho_edge=None, max_iter=2000, eps_abs=1e-8, eps_rel=1e-6,
                 dual_step="unit", x_update="lagrangian", n_jobs=None):
        self.rho = rho
        self.rho_edge = rho_edge
        self.max_iter = max_iter
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.dual_step = dual_step
        self.x_update = x_update
        self.n_jobs = n_jobs

    def fit(self, problem: ProblemSpec, init=None, x_star=None, certificate=None):
        if not isinstance(problem, ProblemSpec):
            raise TypeError("fit expects a ProblemSpec")
        _check_choice("dual_step", self.dual_step, DUAL_STEP_MODES)
        _check_choice("x_update", self.x_update, X_UPDATE_MODES)
        if init is not None:
            init = {k: None if v is None else check_array(np.reshape(v, (problem.m, problem.n)))
                    for k, v in init.items()}
        res = run(problem, init, rho=self.rho, rho_edge=self.rho_edge, max_iter=self.max_iter,
                  eps_abs=self.eps_abs, eps_rel=self.eps_rel, dual_step=self.dual_step,
                  x_update=self.x_update, x_star=x_star, certificate=certificate,
                  n_jobs=self.n_jobs)
        self.z_, self.x_, self.lam_, self.mu_ = res.z, res.x, res.lam, res.mu
        self.trace_ = res.trace
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.problem_ = problem
        return self

    def predict(self, X=None):
        """Return the fitted solution ``z_``."""
        check_is_fitted(self, "z_")
        return self.z_

    def score(self, X=None, y=None):
        """Negative objective value at the solution."""
        check_is_fitted(self, "z_")
        return -self.problem_.objective_value(self.z_)


class CentralizedOracle(BaseEstimator):
    """Ground-truth solver producing a saddle-point certificate.

    Attributes
    ----------
    certificate_ : SaddleCertificate
    x_ : ndarray of shape (m, n)
    objective_ : float
    kkt_residuals_ : tuple of float
        ``(feasibility, stationarity)``.
    """

    def __init__(self, rho=5.0, tol=PG_TOL, max_iter=PG_MAX_ITER):
        self.rho = rho
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, problem: ProblemSpec):
        cert = solve_centralized(problem, rho=self.rho, tol=self.tol, max_iter=self.max_iter)
        self.certificate_ = cert
        self.x_ = cert.x.reshape(problem.m, problem.n)
        self.objective_ = cert.ell
        self.kkt_residuals_ = kkt_check(cert, problem)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "x_")
        return self.x_


class DistributedMPC(BaseEstimator):
    """Receding-horizon controller for a battery network.

    ``fit`` takes the node parameters and the communication graph (a ring
    by default); ``predict`` returns the first control of every node for a
    given SoC and demand forecast; ``simulate`` runs the closed loop.
    """

    def __init__(self, horizon=20, delta=5.0, rho1=12.0, rho2=30.0, n_iter=150,
                 warm_start=False, dual_step="unit", x_update="lagrangian",
                 projection="newton"):
        self.horizon = horizon
        self.delta = delta
        self.rho1 = rho1
        self.rho2 = rho2
        self.n_iter = n_iter
        self.warm_start = warm_start
        self.dual_step = dual_step
        self.x_update = x_update
        self.projection = projection

    def fit(self, nodes, graph=None):
        nodes = list(nodes)
        if not nodes:
            raise ValueError("need at least one node")
        self.nodes_ = nodes
        self.graph_ = ring_graph(len(nodes)) if graph is None else graph
        if self.graph_.m != len(nodes):
            raise ValueError("graph size does not match the number of nodes")
        return self

    def predict(self, soc, demand, t=0.0):
        """First-slot ``(u_c, u_d)`` per node, shape ``(m, 2)``."""
        check_is_fitted(self, "nodes_")
        soc = check_array(np.atleast_2d(soc)).ravel()
        m, T = len(self.nodes_), self.horizon
        inst = build_mpc_instance(self.nodes_, self.graph_, soc, demand, t, T, self.delta,
                                  self.projection)
        x0 = np.array([cold_start(i, soc[i], inst.demand, self.nodes_, T, self.delta)
                       for i in range(m)])
        res = run(inst.problem, {"x": x0, "z": x0.copy()}, rho=self.rho1, rho_edge=self.rho2,
                  max_iter=self.n_iter, stop=False, dual_step=self.dual_step,
                  x_update=self.x_update)
        return np.array([parse_own_controls(res.z[i], i, m, T)[0] for i in range(m)])

    def simulate(self, demand: DemandProfile, steps, t0=0.0, callback=None):
        check_is_fitted(self, "nodes_")
        return mpc_loop(self.nodes_, self.graph_, demand, steps, T=self.horizon,
                        delta=self.delta, rho1=self.rho1, rho2=self.rho2, n_iter=self.n_iter,
                        warm=self.warm_start, dual_step=self.dual_step,
                        x_update=self.x_update, projection=self.projection, t0=t0,
                        callback=callback)
