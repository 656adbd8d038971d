"""Undirected communication graphs and per-edge affine agreements.

Agents are indexed from 0 in the Python API.  Each undirected edge is stored
once with the orientation given at construction; the agreement for the
reversed orientation is derived (same ``A``, negated ``b``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, RankDeficient

RANK_RTOL = 1e-9
MAX_GRAM_CONDITION = 1e12


@dataclass(frozen=True)
class Graph:
    """Undirected graph on ``m`` agents with a fixed edge orientation."""

    m: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[frozenset, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("graph needs at least one agent")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        nbrs = [set() for _ in range(self.m)]
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at agent {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) references an unknown agent")
            key = frozenset((i, j))
            if key in seen:
                raise ValueError(f"edge ({i}, {j}) listed twice")
            seen.add(key)
            nbrs[i].add(j)
            nbrs[j].add(i)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "neighbors", tuple(frozenset(s) for s in nbrs))

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[Sequence[int]], one_based=False):
        off = 1 if one_based else 0
        return cls(m, tuple((int(i) - off, int(j) - off) for i, j in edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def edge_index(self, i: int, j: int) -> tuple[int, int]:
        """Return ``(l, sign)``: row of edge {i, j} and +1 if stored as (i, j)."""
        for l, (a, b) in enumerate(self.edges):
            if (a, b) == (i, j):
                return l, 1
            if (a, b) == (j, i):
                return l, -1
        raise KeyError(f"no edge between {i} and {j}")


@dataclass(frozen=True, eq=False)
class EdgeAgreement:
    """Affine agreement ``A (x_i - x_j) = b`` on the oriented edge (i, j).

    ``P`` is the orthogonal projector onto the row space of ``A`` and
    ``b_bar`` the minimum-norm solution of ``A y = b``, so the agreement is
    equivalent to ``P (x_i - x_j - b_bar) = 0``.
    """

    edge: tuple[int, int]
    A: np.ndarray
    b: np.ndarray
    P: np.ndarray
    b_bar: np.ndarray

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    def reversed(self) -> "EdgeAgreement":
        i, j = self.edge
        return EdgeAgreement((j, i), self.A, -self.b, self.P, -self.b_bar)

    def oriented_from(self, i: int) -> "EdgeAgreement":
        """View of this agreement with agent ``i`` as the first endpoint."""
        if self.edge[0] == i:
            return self
        if self.edge[1] == i:
            return self.reversed()
        raise KeyError(f"agent {i} is not an endpoint of edge {self.edge}")

    def residual(self, xi, xj) -> np.ndarray:
        return self.A @ (np.asarray(xi) - np.asarray(xj)) - self.b


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def build_edge_agreement(i: int, j: int, A, b, n: int | None = None) -> EdgeAgreement:
    """Build the agreement ``A (x_i - x_j) = b`` and its projector data.

    Raises
    ------
    DimensionMismatch
        If ``len(b)`` differs from the row count of ``A`` or ``A`` has the
        wrong column count.
    RankDeficient
        If ``A A^T`` is singular (condition number above 1e12).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d, cols = A.shape
    if n is not None and cols != n:
        raise DimensionMismatch(f"A has {cols} columns, expected {n}")
    if b.shape != (d,):
        raise DimensionMismatch(f"b has shape {b.shape}, expected ({d},)")
    if d > cols:
        raise RankDeficient(f"A is {d}x{cols}; more rows than columns")
    gram = A @ A.T
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > MAX_GRAM_CONDITION:
        raise RankDeficient(f"A for edge ({i}, {j}) does not have full row rank")
    # SPD solve rather than an explicit inverse
    factor = sla.cho_factor(gram)
    P = A.T @ sla.cho_solve(factor, A)
    P = 0.5 * (P + P.T)
    b_bar = A.T @ sla.cho_solve(factor, b)
    return EdgeAgreement((int(i), int(j)), _readonly(A), _readonly(b), _readonly(P), _readonly(b_bar))


def incidence(graph: Graph) -> np.ndarray:
    """Oriented incidence matrix: row ``l`` has +1 at ``i_l`` and -1 at ``j_l``."""
    H = np.zeros((graph.n_edges, graph.m))
    for l, (i, j) in enumerate(graph.edges):
        H[l, i] = 1.0
        H[l, j] = -1.0
    return H


@dataclass(frozen=True, eq=False)
class StackedOperators:
    H: np.ndarray
    H_bar: np.ndarray
    P_bar: np.ndarray
    b_bar: np.ndarray
    n: int

    def edge_residual(self, x) -> np.ndarray:
        """Stacked ``P_bar (H_bar x - b_bar)`` for a flat or (m, n) ``x``."""
        return self.P_bar @ (self.H_bar @ np.ravel(x) - self.b_bar)


def _check_agreements(graph: Graph, agreements: Sequence[EdgeAgreement], n=None):
    if len(agreements) != graph.n_edges:
        raise DimensionMismatch(
            f"{len(agreements)} agreements for {graph.n_edges} edges")
    for (i, j), ag in zip(graph.edges, agreements):
        if tuple(ag.edge) != (i, j):
            raise DimensionMismatch(
                f"agreement for {ag.edge} does not match edge ({i}, {j})")
        if n is not None and ag.dim != n:
            raise DimensionMismatch(f"agreement on {ag.edge} has dim {ag.dim}, expected {n}")


def stack_operators(graph: Graph, agreements: Sequence[EdgeAgreement], n: int) -> StackedOperators:
    _check_agreements(graph, agreements, n)
    H = incidence(graph)
    H_bar = np.kron(H, np.eye(n))
    if agreements:
        P_bar = sla.block_diag(*[ag.P for ag in agreements])
        b_bar = np.concatenate([ag.b_bar for ag in agreements])
    else:
        P_bar = np.zeros((0, 0))
        b_bar = np.zeros(0)
    return StackedOperators(H, H_bar, P_bar, b_bar, n)


@dataclass(frozen=True)
class ConsistencyReport:
    ok: bool
    edge: tuple[int, int] | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def check_consistency(agreements, atol=1e-12) -> ConsistencyReport:
    """Check ``A_ij = A_ji`` and ``b_ij = -b_ji`` wherever both orientations are given.

    ``agreements`` is either a mapping ``(i, j) -> (A, b)`` that may hold both
    orientations of an edge, or a sequence of :class:`EdgeAgreement` (whose
    reversed views are consistent by construction).
    """
    if isinstance(agreements, Mapping):
        pairs = {k: (np.atleast_2d(np.asarray(v[0], float)), np.atleast_1d(np.asarray(v[1], float)))
                 for k, v in agreements.items()}
    else:
        pairs = {}
        for ag in agreements:
            rev = ag.reversed()
            pairs[tuple(ag.edge)] = (ag.A, ag.b)
            pairs[tuple(rev.edge)] = (rev.A, rev.b)
    for (i, j), (A, b) in sorted(pairs.items()):
        if (j, i) not in pairs or i > j:
            continue
        A2, b2 = pairs[(j, i)]
        if A.shape != A2.shape or not np.allclose(A, A2, rtol=0, atol=atol):
            return ConsistencyReport(False, (i, j), "A_ij != A_ji")
        if b.shape != b2.shape or not np.allclose(b, -b2, rtol=0, atol=atol):
            return ConsistencyReport(False, (i, j), "b_ij != -b_ji")
    return ConsistencyReport(True)


@dataclass(frozen=True)
class WellConfiguredReport:
    literal: bool
    rank_HtP: int
    rank_P: int


def _numerical_rank(M) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def check_well_configured(ops: StackedOperators) -> WellConfiguredReport:
    """Diagnose ``ker H_bar^T  ∩  image P_bar = {0}`` via a rank comparison.

    Advisory only: the condition fails for any graph with a cycle when the
    projectors are identities, even though such problems are solvable.
    """
    if ops.P_bar.size == 0:
        return WellConfiguredReport(True, 0, 0)
    r_htp = _numerical_rank(ops.H_bar.T @ ops.P_bar)
    r_p = _numerical_rank(ops.P_bar)
    return WellConfiguredReport(r_htp == r_p, r_htp, r_p)


def edge_residual(x, graph: Graph, agreements: Sequence[EdgeAgreement]) -> float:
    """Sum of squared agreement violations ``sum ||A_ij (x_i - x_j) - b_ij||^2``."""
    x = np.asarray(x, dtype=float).reshape(graph.m, -1)
    total = 0.0
    for (i, j), ag in zip(graph.edges, agreements):
        r = ag.residual(x[i], x[j])
        total += float(r @ r)
    return total
