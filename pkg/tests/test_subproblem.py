import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from edgeadmm.objectives import ExpSum, Quadratic, SmoothConvex, check_gradient
from edgeadmm.subproblem import (NeighborTerm, SubproblemData, XUpdateSolver, solve_x_update,
                                 subproblem_gradient, subproblem_value)

pytestmark = pytest.mark.structural

# root of e^x + 5x = 0, computed with brentq on [-1, 0]
EXP_ROOT_RHO5 = -0.16891597349910956


def _data(obj, z, **kw):
    n = obj.dim
    kw.setdefault("lam", np.zeros(n))
    kw.setdefault("mu", np.zeros(n))
    return SubproblemData(obj, np.asarray(z, float), **kw)


class TestExamples:
    def test_origin(self):
        x = solve_x_update(_data(Quadratic(np.eye(2)), np.zeros(2), rho_z=5))
        np.testing.assert_allclose(x, [0, 0], atol=1e-14)

    def test_minimizer_equals_z(self):
        obj = Quadratic.squared_distance([2, 2])
        x = solve_x_update(_data(obj, [2, 2], rho_z=5))
        np.testing.assert_allclose(x, [2, 2], atol=1e-12)

    def test_exponential_root(self):
        assert brentq(lambda t: np.exp(t) + 5 * t, -1, 0, xtol=1e-15) == pytest.approx(
            EXP_ROOT_RHO5, abs=1e-14)
        x = solve_x_update(_data(ExpSum(2), np.zeros(2), rho_z=5))
        np.testing.assert_allclose(x, [EXP_ROOT_RHO5] * 2, atol=1e-9)

    def test_value_matches_gradient(self):
        obj = ExpSum(2)
        nb = NeighborTerm(np.eye(2), np.array([0.0, 3.0]), np.array([1.0, -1.0]),
                          np.array([0.2, 0.1]))
        data = _data(obj, [0.5, 0.5], lam=np.array([0.3, -0.2]), mu=np.array([0.1, 0.4]),
                     neighbors=[nb], rho_z=5, rho_e=2)
        x = np.array([0.1, -0.3])
        h = 1e-6
        fd = [(subproblem_value(data, x + h * e) - subproblem_value(data, x - h * e)) / (2 * h)
              for e in np.eye(2)]
        np.testing.assert_allclose(subproblem_gradient(data, x), fd, atol=1e-6)


class TestValidation:
    def test_positive_penalties(self):
        with pytest.raises(ValueError):
            _data(Quadratic(np.eye(1)), [0.0], rho_z=0)

    def test_default_rho_e(self):
        assert _data(Quadratic(np.eye(1)), [0.0], rho_z=3).rho_e == 3

    def test_indefinite_quadratic_rejected(self):
        with pytest.raises(ValueError):
            Quadratic(-10 * np.eye(2))

    def test_gradient_only_steep(self):
        steep = SmoothConvex(1, lambda x: np.exp(30 * x[0]), lambda x: 30 * np.exp(30 * x))
        data = _data(steep, [1.0], rho_z=1.0)
        x = solve_x_update(data)
        assert abs(subproblem_gradient(data, x)[0]) < 1e-8


class TestObjectives:
    def test_quadratic_gradient(self):
        q = Quadratic([[2, 1], [1, 3]], [1, -1], 0.5)
        assert check_gradient(q, np.array([0.3, -0.7]))
        assert q.value([0, 0]) == 0.5

    def test_expsum_gradient(self):
        assert check_gradient(ExpSum(3), np.array([0.1, -1.0, 2.0]))


# ----------------------------------------------------------------------------
# properties

@st.composite
def subproblems(draw, kind="any"):
    n = draw(st.integers(1, 3))
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    if kind == "any":
        kind = draw(st.sampled_from(["quadratic", "exp"]))
    if kind == "exp":
        obj = ExpSum(n)
    else:
        B = rng.normal(size=(n, n))
        obj = Quadratic(B @ B.T / n + 0.1 * np.eye(n), rng.normal(size=n))
    nbs = []
    for _ in range(draw(st.integers(0, 3))):
        A = rng.normal(size=(draw(st.integers(1, n)), n))
        P = A.T @ np.linalg.solve(A @ A.T, A) if np.linalg.cond(A @ A.T) < 1e8 else np.eye(n)
        nbs.append(NeighborTerm(P, P @ rng.normal(size=n), rng.normal(size=n),
                                rng.normal(size=n)))
    rho = float(draw(st.sampled_from([0.5, 1.0, 5.0, 12.0])))
    data = SubproblemData(obj, rng.normal(size=n), rng.normal(size=n), rng.normal(size=n),
                          nbs, rho_z=rho, rho_e=float(draw(st.sampled_from([1.0, 5.0, 30.0]))))
    return data, rng


@settings(max_examples=60, deadline=None)
@given(subproblems())
def test_first_order_optimality(sample):
    data, _ = sample
    x = solve_x_update(data)
    assert np.max(np.abs(subproblem_gradient(data, x))) < 1e-8


@settings(max_examples=40, deadline=None)
@given(subproblems())
def test_minimizer_beats_perturbations(sample):
    # strong convexity: every perturbation raises the value by at least rho_z/2 |d|^2
    data, rng = sample
    x = solve_x_update(data)
    f0 = subproblem_value(data, x)
    for _ in range(5):
        d = rng.normal(scale=0.5, size=x.size)
        assert subproblem_value(data, x + d) >= f0 + 0.5 * data.rho_z * (d @ d) - 1e-8


@settings(max_examples=40, deadline=None)
@given(subproblems(kind="quadratic"))
def test_quadratic_paths_agree(sample):
    data, _ = sample
    closed = solve_x_update(data)
    generic = SubproblemData(data.objective.as_smooth(), data.z, data.lam, data.mu,
                             data.neighbors, data.rho_z, data.rho_e)
    np.testing.assert_allclose(solve_x_update(generic), closed, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(subproblems(kind="exp"))
def test_factored_solver_matches(sample):
    data, _ = sample
    solver = XUpdateSolver(data.objective, [nb.P for nb in data.neighbors],
                           data.rho_z, data.rho_e)
    c = subproblem_gradient(data, np.zeros(data.z.size)) - data.objective.gradient(
        np.zeros(data.z.size))
    np.testing.assert_allclose(solver.solve(c, data.z), solve_x_update(data), atol=1e-8)
