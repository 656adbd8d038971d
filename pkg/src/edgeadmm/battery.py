"""Distributed MPC for a network of lithium-ion battery storage nodes.

Every node keeps its own copy of the whole network's control plan, so the
local decision vector is

    xi_i = [s_i(1..T), u(0), ..., u(T-1)],   u(l) = [u_1c, u_1d, ..., u_mc, u_md]

of length ``(2m + 1) T``.  The SoC part is coupled to the node's own
control copy by the battery dynamics, every control copy has to meet the
demand, and neighbors agree on the control part.  The result is an
edge-agreement problem solved with :func:`edgeadmm.admm.run` at each plant
step, after which only the node's own first control is applied.

Sign convention: ``u_c >= 0`` charges, ``u_d <= 0`` discharges, and the
network delivers ``-sum(u_c + u_d)`` kW.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .admm import ProblemSpec, run
from .exceptions import DimensionMismatch, EmptySlice, InfeasibleDemand
from .graph import Graph, build_edge_agreement
from .objectives import Quadratic
from .sets import AffineSlice, Box

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class BatteryNode:
    """Parameters of one storage node.

    SoC is in percent, controls in kW, capacity in kWh.
    """

    Q_max: float
    s_lower: float
    s_upper: float
    s0: float
    u_lower: float
    u_upper: float
    eta_c: float = 0.9
    eta_d: float = 1.1
    r: float = 1.0

    def __post_init__(self):
        if self.Q_max <= 0:
            raise ValueError("Q_max must be positive")
        if not self.s_lower < self.s_upper:
            raise ValueError("s_lower must be below s_upper")
        if not self.s_lower <= self.s0 <= self.s_upper:
            raise ValueError("initial SoC must lie within its bounds")
        if not self.u_lower < 0 < self.u_upper:
            raise ValueError("control bounds must satisfy u_lower < 0 < u_upper")
        if not 0 < self.eta_c <= 1 <= self.eta_d:
            raise ValueError("efficiencies must satisfy 0 < eta_c <= 1 <= eta_d")
        if self.r <= 0:
            raise ValueError("cost weight must be positive")

    def alpha(self, delta) -> float:
        """SoC change per kW over one sampling interval of ``delta`` seconds."""
        return delta / (SECONDS_PER_HOUR * self.Q_max)

    @property
    def eta(self) -> np.ndarray:
        return np.array([self.eta_c, self.eta_d])


NODE_TABLE = {
    "Q_max": [125, 100, 80, 90, 75, 200],
    "s_upper": [80, 90, 90, 80, 90, 80],
    "s_lower": [30, 20, 20, 30, 20, 30],
    "s0": [50, 70, 80, 80, 75, 40],
    "u_upper": [110, 100, 70, 85, 60, 180],
    "r": [1.0, 0.9, 0.5, 0.8, 0.5, 2.0],
}


def reference_nodes(eta=(0.9, 1.1)):
    """The six-node network used in the reference study."""
    t = NODE_TABLE
    return [BatteryNode(float(t["Q_max"][k]), float(t["s_lower"][k]), float(t["s_upper"][k]),
                        float(t["s0"][k]), -float(t["u_upper"][k]), float(t["u_upper"][k]),
                        eta[0], eta[1], float(t["r"][k]))
            for k in range(6)]


def ring_graph(m) -> Graph:
    if m == 1:
        return Graph(1, ())
    if m == 2:
        return Graph(2, ((0, 1),))
    return Graph(m, tuple((k, (k + 1) % m) for k in range(m)))


class DemandProfile:
    """Power demand ``P(t)`` in kW; positive means the network must supply power."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], description=""):
        self._fn = fn
        self.description = description

    def __call__(self, t):
        out = np.asarray(self._fn(np.asarray(t, dtype=float)), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValueError("demand profile returned a non-finite value")
        return out

    def horizon(self, t_now, T, delta) -> np.ndarray:
        return self(t_now + delta * np.arange(T))

    @classmethod
    def sinusoids(cls, amplitudes, frequencies, phases=None, offset=0.0):
        """``offset + sum_k a_k sin(w_k t + phi_k)`` with ``w`` in rad/s and ``phi`` in rad."""
        a = np.asarray(amplitudes, dtype=float)
        w = np.asarray(frequencies, dtype=float)
        ph = np.zeros_like(a) if phases is None else np.asarray(phases, dtype=float)
        if not a.shape == w.shape == ph.shape:
            raise DimensionMismatch("amplitudes, frequencies and phases must match")

        def fn(t):
            return offset + np.sum(a[:, None] * np.sin(np.multiply.outer(w, np.ravel(t))
                                                      + ph[:, None]), axis=0).reshape(np.shape(t))
        return cls(fn, "sinusoids")

    @classmethod
    def tabulated(cls, times, values):
        """Zero-order hold through samples; held constant outside the table."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or times.ndim != 1 or times.size == 0:
            raise DimensionMismatch("times and values must be equal-length vectors")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")

        def fn(t):
            idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 1)
            return values[idx]
        return cls(fn, "tabulated")

    @classmethod
    def constant(cls, value):
        return cls(lambda t: np.full(np.shape(t), float(value)), "constant")

    @classmethod
    def reference(cls):
        return cls.sinusoids([300.0, 250.0], [0.005 * np.pi, 0.003 * np.pi], [0.0, 20.0])


# ----------------------------------------------------------------------------
# layout helpers


def block_size(m, T) -> int:
    return (2 * m + 1) * T


def own_control_offsets(i, m, T) -> np.ndarray:
    """Index of node ``i``'s charge control in each horizon slot (0-based ``i``)."""
    return T + 2 * m * np.arange(T) + 2 * i


def parse_own_controls(z, i, m, T) -> np.ndarray:
    """Node ``i``'s own ``(u_c, u_d)`` for every horizon slot, shape ``(T, 2)``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (block_size(m, T),):
        raise DimensionMismatch(f"expected a vector of length {block_size(m, T)}, got {z.shape}")
    if not 0 <= i < m:
        raise DimensionMismatch(f"node {i} is out of range for m = {m}")
    off = own_control_offsets(i, m, T)
    return np.column_stack([z[off], z[off + 1]])


def dynamics_matrices(node: BatteryNode, i, m, T, delta):
    """``(A_i, B_i, E)`` with ``A_i x + B_i u = C_i`` and ``E u = P``."""
    A = np.eye(T) - np.eye(T, k=-1)
    row = np.zeros(2 * m)
    row[2 * i:2 * i + 2] = -node.alpha(delta) * node.eta
    B = np.kron(np.eye(T), row[None, :])
    E = np.kron(np.eye(T), -np.ones((1, 2 * m)))
    return A, B, E


def constraint_matrix(node, i, m, T, delta) -> np.ndarray:
    """``A_bar = [[A_i, B_i], [0, E]]``."""
    A, B, E = dynamics_matrices(node, i, m, T, delta)
    return np.block([[A, B], [np.zeros((T, T)), E]])


def constraint_rhs(s_now, demand_horizon) -> np.ndarray:
    """``B_bar = [C_i; P]`` with ``C_i = (s_now, 0, ..., 0)``."""
    P = np.asarray(demand_horizon, dtype=float)
    C = np.zeros(P.shape[0])
    C[0] = s_now
    return np.concatenate([C, P])


def cost_matrix(nodes: Sequence[BatteryNode], T) -> np.ndarray:
    """``R_bar = diag(0_T, I_T kron diag(r_1, r_1, ..., r_m, r_m))``."""
    weights = np.repeat([nd.r for nd in nodes], 2)
    return np.diag(np.concatenate([np.zeros(T), np.tile(weights, T)]))


def local_box(nodes: Sequence[BatteryNode], i, T) -> Box:
    """SoC bounds of node ``i`` and the control bounds of every node's copy."""
    lo_u = np.ravel([[0.0, nd.u_lower] for nd in nodes])
    hi_u = np.ravel([[nd.u_upper, 0.0] for nd in nodes])
    lower = np.concatenate([np.full(T, nodes[i].s_lower), np.tile(lo_u, T)])
    upper = np.concatenate([np.full(T, nodes[i].s_upper), np.tile(hi_u, T)])
    return Box(lower, upper)


def simulate_soc(s_now, controls, node: BatteryNode, delta) -> np.ndarray:
    """SoC after each of the given ``(u_c, u_d)`` slots."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    return s_now + node.alpha(delta) * np.cumsum(controls @ node.eta)


# ----------------------------------------------------------------------------
# problem assembly


@dataclass
class MpcInstance:
    problem: ProblemSpec
    demand: np.ndarray
    A_bar: list
    B_bar: list
    T: int
    delta: float


def build_mpc_instance(nodes: Sequence[BatteryNode], graph: Graph, s_current, demand,
                       t_now=0.0, T=20, delta=5.0, projection="newton", step=None) -> MpcInstance:
    """Assemble the horizon problem for the current SoC and demand forecast.

    ``demand`` is a :class:`DemandProfile` or an explicit length-``T`` vector.

    Raises
    ------
    InfeasibleDemand
        If some node's constraint set is empty, typically because the
        demand exceeds the network's aggregate power limits.
    """
    m = len(nodes)
    if graph.m != m:
        raise DimensionMismatch(f"graph has {graph.m} agents but {m} nodes were given")
    s_current = np.asarray(s_current, dtype=float)
    if s_current.shape != (m,):
        raise DimensionMismatch("need one SoC value per node")
    for k, (nd, s) in enumerate(zip(nodes, s_current)):
        if not nd.s_lower - 1e-9 <= s <= nd.s_upper + 1e-9:
            raise ValueError(f"SoC of node {k + 1} is outside its bounds")
    if isinstance(demand, DemandProfile):
        P = demand.horizon(t_now, T, delta)
    else:
        P = np.asarray(demand, dtype=float)
        if P.shape != (T,):
            raise DimensionMismatch(f"demand vector must have length {T}")
    N = block_size(m, T)
    R = cost_matrix(nodes, T)
    # A_ij = [0 | I], b_ij = 0: neighbors agree on every control copy
    A_edge = np.hstack([np.zeros((2 * m * T, T)), np.eye(2 * m * T)])
    agreements = [build_edge_agreement(i, j, A_edge, np.zeros(2 * m * T), N)
                  for i, j in graph.edges]
    objectives, sets, A_bars, B_bars = [], [], [], []
    for i in range(m):
        Ab = constraint_matrix(nodes[i], i, m, T, delta)
        Bb = constraint_rhs(s_current[i], P)
        try:
            sets.append(AffineSlice(local_box(nodes, i, T), Ab, Bb, method=projection))
        except EmptySlice as exc:
            raise InfeasibleDemand(f"node {i + 1} cannot meet the demand: {exc}",
                                   node=i, step=step) from exc
        objectives.append(Quadratic(R))
        A_bars.append(Ab)
        B_bars.append(Bb)
    problem = ProblemSpec(graph, agreements, objectives, sets)
    return MpcInstance(problem, P, A_bars, B_bars, T, delta)


def cold_start(i, s_now, P, nodes: Sequence[BatteryNode], T, delta) -> np.ndarray:
    """Initial ``xi_i`` where node ``i`` alone serves the demand.

    Its own control copies are set to the demand, split into the charge or
    discharge channel by sign and clamped to its limits; all other copies
    are zero.  The SoC part is propagated forward and clamped.
    """
    m = len(nodes)
    P = np.asarray(P, dtype=float)
    nd = nodes[i]
    u = np.zeros((T, 2 * m))
    own = np.zeros((T, 2))
    own[:, 0] = np.where(P < 0, np.minimum(-P, nd.u_upper), 0.0)
    own[:, 1] = np.where(P > 0, np.maximum(-P, nd.u_lower), 0.0)
    u[:, 2 * i:2 * i + 2] = own
    s = np.clip(simulate_soc(s_now, own, nd, delta), nd.s_lower, nd.s_upper)
    return np.concatenate([s, u.ravel()])


def warm_start(prev, m, T) -> np.ndarray:
    """Shift every horizon block forward by one slot and repeat the last one."""
    prev = np.asarray(prev, dtype=float)
    single = prev.ndim == 1
    prev = np.atleast_2d(prev)
    x = prev[:, :T]
    u = prev[:, T:].reshape(prev.shape[0], T, 2 * m)
    x_new = np.concatenate([x[:, 1:], x[:, -1:]], axis=1)
    u_new = np.concatenate([u[:, 1:], u[:, -1:]], axis=1)
    out = np.concatenate([x_new, u_new.reshape(prev.shape[0], -1)], axis=1)
    return out[0] if single else out


# ----------------------------------------------------------------------------
# receding-horizon loop


@dataclass
class StepRecord:
    t: float
    soc: np.ndarray
    controls: np.ndarray
    delivered: float
    demand: float
    residual: float
    primal_residual: float


@dataclass
class SimulationLog:
    nodes: Sequence[BatteryNode]
    steps: list = field(default_factory=list)
    final_soc: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def soc(self) -> np.ndarray:
        """SoC at the start of every step plus the final value, shape ``(L + 1, m)``."""
        rows = [s.soc for s in self.steps]
        if self.final_soc is not None:
            rows.append(self.final_soc)
        return np.array(rows)

    @property
    def controls(self) -> np.ndarray:
        """Applied controls, shape ``(L, m, 2)``."""
        return np.array([s.controls for s in self.steps])

    @property
    def delivered(self) -> np.ndarray:
        return np.array([s.delivered for s in self.steps])

    @property
    def demand(self) -> np.ndarray:
        return np.array([s.demand for s in self.steps])

    @property
    def tracking_error(self) -> np.ndarray:
        return np.abs(self.delivered - self.demand)

    def to_csv(self, path):
        """One row per step and node: ``t, node, SoC, u_c, u_d, delivered_power, demand, step_residual``.

        ``SoC`` is the value at the start of the step; nodes are numbered from 1.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "node", "SoC", "u_c", "u_d", "delivered_power", "demand",
                        "step_residual"])
            for st in self.steps:
                for k in range(len(self.nodes)):
                    w.writerow([repr(float(st.t)), k + 1, repr(float(st.soc[k])),
                                repr(float(st.controls[k, 0])), repr(float(st.controls[k, 1])),
                                repr(float(st.delivered)), repr(float(st.demand)),
                                repr(float(st.residual))])


def mpc_loop(nodes: Sequence[BatteryNode], graph: Graph, demand: DemandProfile, steps,
             T=20, delta=5.0, rho1=12.0, rho2=30.0, n_iter=150, warm=False,
             dual_step="unit", x_update="lagrangian", projection="newton", t0=0.0,
             callback=None) -> SimulationLog:
    """Receding-horizon simulation.

    At each step the horizon problem is solved with a fixed budget of
    ``n_iter`` distributed iterations, each node applies the first slot of
    its own control copy under zero-order hold, and the plant (identical to
    the prediction model) advances by ``delta`` seconds.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    m = len(nodes)
    s = np.array([nd.s0 for nd in nodes], dtype=float)
    log = SimulationLog(list(nodes))
    prev_z = None
    start = time.perf_counter()
    for l in range(steps):
        t = t0 + l * delta
        inst = build_mpc_instance(nodes, graph, s, demand, t, T, delta, projection, step=l)
        if warm and prev_z is not None:
            x_init = warm_start(prev_z, m, T)
            init = {"x": x_init, "z": x_init.copy()}
        else:
            x_init = np.array([cold_start(i, s[i], inst.demand, nodes, T, delta)
                               for i in range(m)])
            init = {"x": x_init, "z": x_init.copy()}
        res = run(inst.problem, init, rho=rho1, rho_edge=rho2, max_iter=n_iter, stop=False,
                  dual_step=dual_step, x_update=x_update)
        own = np.array([parse_own_controls(res.z[i], i, m, T)[0] for i in range(m)])
        delivered = float(-own.sum())
        log.steps.append(StepRecord(t, s.copy(), own, delivered, float(inst.demand[0]),
                                    float(res.trace[-1].W1), float(res.trace[-1].primal_residual)))
        s = np.array([simulate_soc(s[i], own[i], nodes[i], delta)[0] for i in range(m)])
        prev_z = res.z
        if callback is not None:
            callback(l, log)
    log.final_soc = s
    log.wall_time = time.perf_counter() - start
    return log
