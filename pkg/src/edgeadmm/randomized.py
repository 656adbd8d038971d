"""Random feasible instances and the distributed-vs-centralized comparison suite."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .admm import ProblemSpec, run
from .exceptions import EdgeADMMError
from .graph import Graph, build_edge_agreement, stack_operators
from .objectives import Quadratic
from .oracle import solve_centralized
from .sets import Box

COORD_TOL = 1e-4
OBJ_RTOL = 1e-6


def random_graph(m, rng, extra_prob=0.5) -> Graph:
    """Connected graph: a random spanning tree plus independent extra edges."""
    order = rng.permutation(m)
    edges = []
    for k in range(1, m):
        edges.append((int(order[rng.integers(k)]), int(order[k])))
    present = {frozenset(e) for e in edges}
    for i in range(m):
        for j in range(i + 1, m):
            if frozenset((i, j)) not in present and rng.random() < extra_prob:
                edges.append((i, j))
    return Graph(m, tuple(edges))


def _random_agreement(i, j, n, x0, rng):
    d = int(rng.integers(1, n + 1))
    while True:
        A = rng.normal(size=(d, n))
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] > 0.2 * s[0]:
            break
    return build_edge_agreement(i, j, A, A @ (x0[i] - x0[j]), n)


def agreement_sigma(graph, agreements, n) -> float:
    """Smallest nonzero singular value of the stacked edge operator ``P_bar H_bar``.

    The slowest mode of both ADMM variants contracts at a rate governed by
    its square, so near-degenerate agreement geometry shows up as stalling.
    """
    ops = stack_operators(graph, agreements, n)
    if ops.P_bar.size == 0:
        return np.inf
    s = np.linalg.svd(ops.P_bar @ ops.H_bar, compute_uv=False)
    s = s[s > 1e-9 * s[0]]
    return float(s.min()) if s.size else np.inf


def random_instance(rng, m=None, n=None, min_sigma=0.0,
                    max_draws=200) -> tuple[ProblemSpec, np.ndarray]:
    """Random feasible instance and the anchor point used to build it.

    Agreements are generated from a random anchor ``x0`` so that
    ``A_ij (x0_i - x0_j) = b_ij``, and every box contains ``x0_i``.  The
    quadratic objectives are strongly convex, so the optimum is unique.
    Agreements are redrawn (at most ``max_draws`` times) until
    :func:`agreement_sigma` reaches ``min_sigma``.
    """
    m = int(rng.integers(2, 5)) if m is None else m
    n = int(rng.integers(1, 4)) if n is None else n
    graph = random_graph(m, rng)
    x0 = rng.normal(size=(m, n))
    for _ in range(max_draws):
        agreements = [_random_agreement(i, j, n, x0, rng) for i, j in graph.edges]
        if agreement_sigma(graph, agreements, n) >= min_sigma:
            break
    objectives, sets = [], []
    for i in range(m):
        B = rng.normal(size=(n, n))
        Q = B @ B.T / n + 0.5 * np.eye(n)
        center = x0[i] + rng.normal(scale=2.0, size=n)
        objectives.append(Quadratic(Q, -2.0 * Q @ center, float(center @ Q @ center)))
        lo = x0[i] - rng.uniform(0.1, 1.5, size=n)
        hi = x0[i] + rng.uniform(0.1, 1.5, size=n)
        sets.append(Box(lo, hi))
    return ProblemSpec(graph, agreements, objectives, sets), x0


@dataclass
class InstanceResult:
    index: int
    m: int
    n: int
    coord_gap: float
    objective_gap: float
    objective: float
    iterations: int
    converged: bool
    passed: bool
    error: str = ""


SUITE_RHO = 10.0
SUITE_DUAL_STEP = "scaled"
# instances below this floor stall for tens of thousands of iterations
SUITE_MIN_SIGMA = 0.5


def compare_instance(problem, index=0, rho=SUITE_RHO, max_iter=20000, coord_tol=COORD_TOL,
                     obj_rtol=OBJ_RTOL, **run_kw) -> InstanceResult:
    """Run both solvers on one instance and record the gaps."""
    try:
        cert = solve_centralized(problem)
        run_kw.setdefault("dual_step", SUITE_DUAL_STEP)
        res = run(problem, rho=rho, max_iter=max_iter, eps_abs=1e-10, eps_rel=1e-9, **run_kw)
    except EdgeADMMError as exc:
        return InstanceResult(index, problem.m, problem.n, np.inf, np.inf, np.nan, 0, False,
                              False, f"{type(exc).__name__}: {exc}")
    gap = float(np.max(np.abs(res.z.ravel() - cert.x)))
    ogap = abs(problem.objective_value(res.z) - cert.ell)
    ok = gap < coord_tol and ogap < obj_rtol * (1 + abs(cert.ell))
    return InstanceResult(index, problem.m, problem.n, gap, ogap, cert.ell, res.n_iter,
                          res.converged, bool(ok))


def run_oracle_suite(count=50, seed=0, coord_tol=COORD_TOL, obj_rtol=OBJ_RTOL,
                     out=None, **run_kw) -> list[InstanceResult]:
    """Compare distributed and centralized solutions on ``count`` random instances.

    Failures are recorded per instance and never abort the suite.  With
    ``out`` given, the gap table is written there as CSV.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    results = []
    for k in range(count):
        problem, _ = random_instance(rng, min_sigma=SUITE_MIN_SIGMA)
        results.append(compare_instance(problem, k, coord_tol=coord_tol, obj_rtol=obj_rtol,
                                        **run_kw))
    if out is not None:
        write_report(results, out)
    return results


def write_report(results, path):
    cols = ["index", "m", "n", "coord_gap", "objective_gap", "objective", "iterations",
            "converged", "passed", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            w.writerow([r.index, r.m, r.n, repr(r.coord_gap), repr(r.objective_gap),
                        repr(r.objective), r.iterations, int(r.converged), int(r.passed),
                        r.error])


if __name__ == "__main__":  # pragma: no cover
    t0 = time.perf_counter()
    rs = run_oracle_suite(50)
    print(sum(r.passed for r in rs), "of", len(rs), f"in {time.perf_counter() - t0:.1f}s")
