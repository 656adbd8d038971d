import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeadmm.admm import ProblemSpec
from edgeadmm.exceptions import Infeasible
from edgeadmm.graph import Graph, build_edge_agreement, incidence, stack_operators
from edgeadmm.objectives import Quadratic
from edgeadmm.oracle import (CentralizedADMM, CentralizedState, SaddleCertificate,
                             build_compact_form, centralized_admm_step, kkt_check, descent_checks,
                             lyapunov_series, series_to_csv, solve_centralized)
from edgeadmm.randomized import random_instance
from edgeadmm.sets import Box

from conftest import PLANAR_B, PLANAR_F_STAR, PLANAR_X_STAR, two_agent_problem

# analytic saddle of min x1^2 + (x2 - 2)^2 s.t. x1 = x2: x* = 1, the edge
# multiplier balances the gradients [2, -2] and the copy multiplier vanishes
TWO_AGENT_SADDLE = dict(x=np.array([1.0, 1.0]), y=np.array([0.0, 0.0, -1.0, 1.0]), ell=2.0)


def _analytic_cert():
    s = TWO_AGENT_SADDLE
    return SaddleCertificate(s["x"].copy(), s["x"].copy(), s["y"].copy(), s["ell"], rho=5.0)


class TestCompactForm:
    def test_single_edge(self):
        ops = stack_operators(Graph(2, ((0, 1),)), [build_edge_agreement(0, 1, [[1.0]], [0.0])], 1)
        cf = build_compact_form(ops)
        np.testing.assert_allclose(cf.M, [[1, -1], [-1, 1]])
        np.testing.assert_array_equal(cf.E, np.zeros(4))

    def test_planar_tail(self, planar):
        ops = stack_operators(planar.graph, planar.agreements, 2)
        cf = build_compact_form(ops)
        H_bar = np.kron(incidence(planar.graph), np.eye(2))
        np.testing.assert_allclose(cf.E[8:], H_bar.T @ np.ravel(PLANAR_B), atol=1e-14)
        np.testing.assert_array_equal(cf.E[:8], 0)

    def test_zero_edges(self):
        cf = build_compact_form(stack_operators(Graph(3, ()), [], 2))
        np.testing.assert_array_equal(cf.C, np.vstack([np.eye(6), np.zeros((6, 6))]))
        np.testing.assert_array_equal(cf.E, 0)

    def test_residual_vanishes_on_agreement(self, planar):
        cf = build_compact_form(stack_operators(planar.graph, planar.agreements, 2))
        assert np.linalg.norm(cf.residual(PLANAR_X_STAR, PLANAR_X_STAR)) < 1e-12


class TestSolveCentralized:
    def test_two_agent(self, two_agent):
        cert = solve_centralized(two_agent)
        np.testing.assert_allclose(cert.x, [1, 1], atol=1e-9)
        assert cert.ell == pytest.approx(2.0, abs=1e-12)
        assert cert.feasibility < 1e-9 and cert.stationarity < 1e-9

    def test_planar_fixture(self, planar):
        cert = solve_centralized(planar)
        np.testing.assert_allclose(cert.x, PLANAR_X_STAR, atol=1e-8)
        assert cert.ell == pytest.approx(PLANAR_F_STAR, rel=1e-12)
        assert cert.feasibility < 1e-9 and cert.stationarity < 1e-8

    def test_active_bound(self):
        cert = solve_centralized(two_agent_problem(1.5, 3.0))
        np.testing.assert_allclose(cert.x, [1.5, 1.5], atol=1e-9)
        assert cert.stationarity < 1e-8

    def test_infeasible(self):
        g = Graph(2, ((0, 1),))
        spec = ProblemSpec(g, [build_edge_agreement(0, 1, [[1.0]], [0.0])],
                           [Quadratic(np.eye(1))] * 2, [Box([0], [1]), Box([2], [3])])
        with pytest.raises(Infeasible):
            solve_centralized(spec)

    def test_certificate_csv(self, two_agent, tmp_path):
        cert = solve_centralized(two_agent)
        cert.to_csv(tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "index,x,z,y_lambda,y_mu"


class TestKKT:
    def test_analytic_saddle(self, two_agent):
        feas, stat = kkt_check(_analytic_cert(), two_agent)
        assert feas < 1e-9 and stat < 1e-9

    def test_infeasible_point(self, two_agent):
        cert = SaddleCertificate(np.array([0.0, 5.0]), np.array([0.0, 5.0]), np.zeros(4), 9.0)
        feas, _ = kkt_check(cert, two_agent)
        assert feas > 0.1

    def test_interior_stationarity_is_gradient_norm(self, two_agent):
        x = np.array([0.3, -0.4])
        cert = SaddleCertificate(x, x.copy(), np.zeros(4), 0.0)
        _, stat = kkt_check(cert, two_agent)
        grad = np.array([2 * 0.3, 2 * (-0.4 - 2)])
        assert stat == pytest.approx(np.linalg.norm(grad), rel=1e-12)


class TestCentralizedADMM:
    def test_saddle_is_fixed(self, two_agent):
        s = TWO_AGENT_SADDLE
        cf = build_compact_form(stack_operators(two_agent.graph, two_agent.agreements, 1))
        state = CentralizedState(s["x"].copy(), s["x"].copy(), s["y"].copy())
        new = centralized_admm_step(state, two_agent, cf, rho=5.0)
        for a, b in ((new.x, state.x), (new.z, state.z), (new.y, state.y)):
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_two_agent_converges(self, two_agent):
        state, _ = CentralizedADMM(two_agent, 5.0).run(max_iter=200)
        np.testing.assert_allclose(state.z, [1, 1], atol=1e-6)

    def test_lyapunov_zero_at_saddle(self, two_agent):
        s = TWO_AGENT_SADDLE
        admm = CentralizedADMM(two_agent, 5.0)
        _, hist = admm.run(CentralizedState(s["x"].copy(), s["x"].copy(), s["y"].copy()),
                           max_iter=20)
        assert np.max(np.abs(lyapunov_series(hist, _analytic_cert(), 5.0))) < 1e-20

    def test_lyapunov_nonincreasing(self, two_agent):
        _, hist = CentralizedADMM(two_agent, 5.0).run(max_iter=200)
        V = lyapunov_series(hist, _analytic_cert(), 5.0)
        assert np.all(np.diff(V) <= 1e-12)

    def test_descent_two_agent(self, two_agent):
        _, hist = CentralizedADMM(two_agent, 5.0).run(max_iter=200)
        rep = descent_checks(hist, _analytic_cert(), two_agent, rho=5.0)
        assert rep.ok, rep.worst

    def test_descent_planar(self, planar, tmp_path):
        cert = solve_centralized(planar)
        _, hist = CentralizedADMM(planar, 5.0).run(max_iter=300)
        rep = descent_checks(hist, cert, planar)
        assert rep.ok, rep.worst
        series_to_csv(tmp_path / "v.csv", rep.V, rep)
        assert len((tmp_path / "v.csv").read_text().splitlines()) == len(hist) + 1

    def test_descent_detects_wrong_certificate(self, two_agent):
        _, hist = CentralizedADMM(two_agent, 5.0).run(max_iter=50)
        bogus = SaddleCertificate(np.array([3.0, 3.0]), np.array([3.0, 3.0]), np.zeros(4), 10.0,
                                  rho=5.0)
        assert not descent_checks(hist, bogus, two_agent).ok

    def test_rejects_bad_rho(self, two_agent):
        with pytest.raises(ValueError):
            CentralizedADMM(two_agent, 0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_oracle_kkt_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    spec, x0 = random_instance(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
    cert = solve_centralized(spec)
    assert cert.feasibility < 1e-8 and cert.stationarity < 1e-7
    # the known feasible point cannot beat the certified optimum
    assert cert.ell <= spec.objective_value(x0) + 1e-9
