import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeadmm.battery import (BatteryNode, DemandProfile, block_size, build_mpc_instance,
                              cold_start, constraint_matrix, cost_matrix, dynamics_matrices,
                              mpc_loop, reference_nodes, parse_own_controls, ring_graph,
                              simulate_soc, warm_start)
from edgeadmm.exceptions import DimensionMismatch, InfeasibleDemand


def _node(**kw):
    base = dict(Q_max=125.0, s_lower=30.0, s_upper=80.0, s0=50.0, u_lower=-110.0, u_upper=110.0)
    base.update(kw)
    return BatteryNode(**base)


class TestNode:
    def test_alpha(self):
        assert _node().alpha(5.0) == pytest.approx(1.1111e-5, rel=1e-4)
        assert _node().alpha(5.0) == 5.0 / (3600.0 * 125.0)

    @pytest.mark.parametrize("kw", [dict(s_lower=90.0), dict(s0=10.0), dict(u_lower=1.0),
                                    dict(eta_c=1.2), dict(eta_d=0.9), dict(r=0.0),
                                    dict(Q_max=-1.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            _node(**kw)

    def test_reference_table(self):
        nodes = reference_nodes()
        assert [nd.Q_max for nd in nodes] == [125, 100, 80, 90, 75, 200]
        assert [nd.u_lower for nd in nodes] == [-110, -100, -70, -85, -60, -180]
        assert all(nd.s_lower <= nd.s0 <= nd.s_upper for nd in nodes)

    def test_ring(self):
        assert ring_graph(6).edges[-1] == (5, 0)
        assert ring_graph(2).n_edges == 1 and ring_graph(1).n_edges == 0


@pytest.mark.structural
class TestMatrices:
    def test_E_full_size(self):
        _, _, E = dynamics_matrices(reference_nodes()[0], 0, 6, 20, 5.0)
        assert E.shape == (20, 240)
        for l in range(20):
            row = E[l]
            assert np.count_nonzero(row) == 12
            np.testing.assert_array_equal(row[12 * l:12 * (l + 1)], -1.0)

    def test_B_row_structure(self):
        nd = reference_nodes()[2]
        _, B, _ = dynamics_matrices(nd, 2, 6, 4, 5.0)
        for l in range(4):
            nz = np.flatnonzero(B[l])
            np.testing.assert_array_equal(nz, [12 * l + 4, 12 * l + 5])
            np.testing.assert_allclose(B[l, nz], -nd.alpha(5.0) * nd.eta)

    def test_A_bidiagonal(self):
        A, _, _ = dynamics_matrices(_node(), 0, 1, 3, 5.0)
        np.testing.assert_array_equal(A, [[1, 0, 0], [-1, 1, 0], [0, -1, 1]])
        assert constraint_matrix(_node(), 0, 2, 3, 5.0).shape == (6, 15)

    def test_cost_equivalence(self):
        nodes = reference_nodes()[:3]
        T = 4
        R = cost_matrix(nodes, T)
        rng = np.random.default_rng(1)
        xi = rng.normal(size=block_size(3, T))
        u = xi[T:].reshape(T, 3, 2)
        r = np.array([nd.r for nd in nodes])
        assert xi @ R @ xi == pytest.approx(np.sum(r[None, :, None] * u ** 2), rel=1e-12)


@pytest.mark.structural
class TestLayout:
    def test_parse_single(self):
        np.testing.assert_array_equal(parse_own_controls([50.0, 1.0, -2.0], 0, 1, 1), [[1, -2]])

    def test_parse_second_node(self):
        z = [50.0, 1.0, -2.0, 3.0, -4.0]
        np.testing.assert_array_equal(parse_own_controls(z, 1, 2, 1), [[3, -4]])

    def test_parse_errors(self):
        with pytest.raises(DimensionMismatch):
            parse_own_controls(np.zeros(4), 0, 2, 1)
        with pytest.raises(DimensionMismatch):
            parse_own_controls(np.zeros(5), 2, 2, 1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 5), st.data())
    def test_round_trip(self, m, T, data):
        i = data.draw(st.integers(0, m - 1))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31 - 1)))
        u = rng.normal(size=(T, m, 2))
        z = np.concatenate([rng.normal(size=T), u.ravel()])
        np.testing.assert_array_equal(parse_own_controls(z, i, m, T), u[:, i, :])


@pytest.mark.structural
class TestStarts:
    def test_cold_zero_demand(self):
        nodes = reference_nodes()[:2]
        xi = cold_start(0, 55.0, np.zeros(3), nodes, 3, 5.0)
        np.testing.assert_array_equal(xi[:3], 55.0)
        np.testing.assert_array_equal(xi[3:], 0.0)

    def test_cold_discharge(self):
        nodes = [_node(), _node()]
        xi = cold_start(1, 50.0, np.full(4, 50.0), nodes, 4, 5.0)
        np.testing.assert_array_equal(parse_own_controls(xi, 1, 2, 4), [[0, -50]] * 4)
        np.testing.assert_array_equal(parse_own_controls(xi, 0, 2, 4), 0.0)

    def test_cold_charge_clamped(self):
        xi = cold_start(0, 50.0, np.full(2, -500.0), [_node()], 2, 5.0)
        np.testing.assert_array_equal(parse_own_controls(xi, 0, 1, 2), [[110, 0]] * 2)

    def test_warm_constant(self):
        prev = np.full(block_size(2, 3), 7.0)
        np.testing.assert_array_equal(warm_start(prev, 2, 3), prev)

    def test_warm_shift_and_hold(self):
        # T = 2, m = 1: blocks (a, b) for both the SoC and the control part
        prev = np.array([1.0, 2.0, 10.0, -10.0, 20.0, -20.0])
        np.testing.assert_array_equal(warm_start(prev, 1, 2), [2, 2, 20, -20, 20, -20])

    def test_warm_batch(self):
        prev = np.arange(2 * 6, dtype=float).reshape(2, 6)
        out = warm_start(prev, 1, 2)
        np.testing.assert_array_equal(out[1], warm_start(prev[1], 1, 2))


class TestDemand:
    def test_reference_formula(self):
        P = DemandProfile.reference()
        t = np.array([0.0, 37.0, 1000.0])
        expected = 300 * np.sin(0.005 * np.pi * t) + 250 * np.sin(0.003 * np.pi * t + 20)
        np.testing.assert_allclose(P(t), expected, rtol=1e-14)

    def test_horizon(self):
        P = DemandProfile.sinusoids([1.0], [1.0])
        np.testing.assert_allclose(P.horizon(2.0, 3, 0.5), np.sin([2.0, 2.5, 3.0]))

    def test_tabulated_zero_order_hold(self):
        P = DemandProfile.tabulated([0.0, 10.0, 20.0], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(P([-5.0, 0.0, 9.99, 10.0, 15.0, 25.0]),
                                      [1, 1, 1, 2, 2, 3])

    def test_tabulated_validation(self):
        with pytest.raises(ValueError):
            DemandProfile.tabulated([0.0, 0.0], [1.0, 2.0])
        with pytest.raises(DimensionMismatch):
            DemandProfile.tabulated([0.0, 1.0], [1.0])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            DemandProfile(lambda t: np.full(np.shape(t), np.nan))(0.0)


# ----------------------------------------------------------------------------
# encoding exactness

@st.composite
def instances(draw):
    m = draw(st.integers(1, 3))
    T = draw(st.integers(1, 6))
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    nodes = reference_nodes()[:m]
    soc = np.array([rng.uniform(nd.s_lower + 1, nd.s_upper - 1) for nd in nodes])
    cap = min(sum(nd.u_upper for nd in nodes), -sum(nd.u_lower for nd in nodes))
    P = rng.uniform(-0.8 * cap, 0.8 * cap, size=T)
    method = draw(st.sampled_from(["newton", "dykstra"]))
    inst = build_mpc_instance(nodes, ring_graph(m), soc, P, 0.0, T, 5.0, projection=method)
    return inst, nodes, soc, rng


@pytest.mark.structural
@settings(max_examples=25, deadline=None)
@given(instances())
def test_dynamics_and_demand_encoding(sample):
    inst, nodes, soc, rng = sample
    m, T = len(nodes), inst.T
    for i in range(m):
        z = inst.problem.sets[i].project(rng.normal(scale=50.0, size=block_size(m, T)))
        u = z[T:].reshape(T, m, 2)
        # SoC part equals the forward simulation of the node's own controls
        np.testing.assert_allclose(z[:T], simulate_soc(soc[i], u[:, i, :], nodes[i], 5.0),
                                   atol=1e-9)
        # every copy of the network's controls delivers the demand
        np.testing.assert_allclose(-u.sum(axis=(1, 2)), inst.demand, atol=1e-8)


@pytest.mark.structural
def test_dynamics_full_size():
    nodes = reference_nodes()
    P = DemandProfile.reference().horizon(0.0, 20, 5.0)
    soc = np.array([nd.s0 for nd in nodes])
    inst = build_mpc_instance(nodes, ring_graph(6), soc, P, 0.0, 20, 5.0)
    rng = np.random.default_rng(3)
    z = inst.problem.sets[4].project(rng.normal(scale=100.0, size=block_size(6, 20)))
    u = z[20:].reshape(20, 6, 2)
    np.testing.assert_allclose(z[:20], simulate_soc(soc[4], u[:, 4, :], nodes[4], 5.0), atol=1e-9)
    np.testing.assert_allclose(-u.sum(axis=(1, 2)), P, atol=1e-8)


class TestInstance:
    def test_infeasible_demand(self):
        nodes = reference_nodes()[:2]
        with pytest.raises(InfeasibleDemand):
            build_mpc_instance(nodes, ring_graph(2), [50.0, 70.0], np.full(3, 1e4), 0.0, 3, 5.0)

    def test_soc_outside_bounds(self):
        with pytest.raises(ValueError):
            build_mpc_instance([_node()], ring_graph(1), [95.0], np.zeros(2), 0.0, 2, 5.0)

    def test_shapes(self):
        with pytest.raises(DimensionMismatch):
            build_mpc_instance([_node()], ring_graph(2), [50.0], np.zeros(2), 0.0, 2, 5.0)
        with pytest.raises(DimensionMismatch):
            build_mpc_instance([_node()], ring_graph(1), [50.0], np.zeros(3), 0.0, 2, 5.0)


class TestLoop:
    def test_zero_demand_keeps_soc(self):
        nodes = reference_nodes()[:3]
        log = mpc_loop(nodes, ring_graph(3), DemandProfile.constant(0.0), 3, T=4, n_iter=30)
        np.testing.assert_allclose(log.soc, np.tile([nd.s0 for nd in nodes], (4, 1)), atol=1e-9)
        np.testing.assert_allclose(log.controls, 0.0, atol=1e-9)

    def test_single_node_linear_decline(self):
        nd = _node()
        steps = 5
        log = mpc_loop([nd], ring_graph(1), DemandProfile.constant(50.0), steps, T=4,
                       n_iter=150)
        np.testing.assert_allclose(log.controls[:, 0, :], [[0.0, -50.0]] * steps, atol=1e-6)
        rate = nd.alpha(5.0) * nd.eta_d * -50.0
        np.testing.assert_allclose(log.soc[:, 0], nd.s0 + rate * np.arange(steps + 1),
                                   atol=1e-9)

    def test_warm_start_loop(self):
        nodes = reference_nodes()[:2]
        cold = mpc_loop(nodes, ring_graph(2), DemandProfile.constant(40.0), 3, T=4, n_iter=100)
        warm = mpc_loop(nodes, ring_graph(2), DemandProfile.constant(40.0), 3, T=4, n_iter=100,
                        warm=True)
        np.testing.assert_allclose(warm.delivered, 40.0, atol=0.4)
        np.testing.assert_allclose(cold.delivered, 40.0, atol=0.4)

    def test_csv(self, tmp_path):
        nodes = reference_nodes()[:2]
        log = mpc_loop(nodes, ring_graph(2), DemandProfile.constant(10.0), 2, T=3, n_iter=20)
        log.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "t,node,SoC,u_c,u_d,delivered_power,demand,step_residual"
        assert len(lines) == 1 + 2 * 2
        assert lines[2].split(",")[1] == "2"

    def test_steps_validation(self):
        with pytest.raises(ValueError):
            mpc_loop([_node()], ring_graph(1), DemandProfile.constant(0.0), 0)
