"""Distributed ADMM for optimization under pairwise affine edge agreements.

Agents hold private convex costs and local convex sets and must satisfy
``A_ij (x_i - x_j) = b_ij`` on every edge of an undirected graph.  The
package provides the distributed solver, a centralized reference oracle,
and a distributed MPC application to battery energy storage networks.
"""

from .admm import IterationTrace, ProblemSpec, RunResult, dual_updates, run, stop_check
from .battery import BatteryNode, DemandProfile, mpc_loop, reference_nodes, ring_graph
from .estimators import CentralizedOracle, DistributedMPC, EdgeAgreementADMM
from .exceptions import (ConfigError, DimensionMismatch, EdgeADMMError, EmptySlice, Infeasible,
                         InfeasibleDemand, NonFiniteIterate, NotConverged, RankDeficient,
                         SingularSystem)
from .graph import (EdgeAgreement, Graph, build_edge_agreement, check_consistency,
                    check_well_configured, edge_residual, incidence, stack_operators)
from .objectives import ExpSum, Quadratic, SmoothConvex
from .oracle import build_compact_form, kkt_check, descent_checks, solve_centralized
from .sets import AffineSlice, Box, WholeSpace, contains, project
from .subproblem import SubproblemData, solve_x_update

__version__ = "0.1.0"

__all__ = [
    "AffineSlice", "BatteryNode", "Box", "CentralizedOracle", "ConfigError", "DemandProfile",
    "DimensionMismatch", "DistributedMPC", "EdgeADMMError", "EdgeAgreement", "EdgeAgreementADMM",
    "EmptySlice", "ExpSum", "Graph", "Infeasible", "InfeasibleDemand", "IterationTrace",
    "NonFiniteIterate", "NotConverged", "ProblemSpec", "Quadratic", "RankDeficient", "RunResult",
    "SingularSystem", "SmoothConvex", "SubproblemData", "WholeSpace", "build_compact_form",
    "build_edge_agreement", "check_consistency", "check_well_configured", "contains",
    "dual_updates", "edge_residual", "incidence", "kkt_check", "descent_checks", "mpc_loop",
    "reference_nodes", "project", "ring_graph", "run", "solve_centralized", "solve_x_update",
    "stack_operators", "stop_check",
]
