import numpy as np
import pytest

from riscomp.conic import (Cone, ConicProgram, DescentResult, INFEASIBLE,
                           MAX_ITERS, OPTIMAL, armijo_descent, solve_conic)
from riscomp.harness.oracle_suite import (check_lp_vertex_oracle,
                                          check_soc_bisection_oracle)


class TestSolveConic:
    def test_min_x_above_three(self):
        program = ConicProgram(
            n_vars=1, c=np.array([1.0]),
            cones=[Cone("nonneg", np.array([[1.0]]), np.array([-3.0]))])
        report = solve_conic(program)
        assert report.status == OPTIMAL
        assert report.x[0] == pytest.approx(3.0, abs=1e-6)

    def test_norm_projection(self):
        # min t s.t. t >= ||u||, u1 = 1 -> objective 1, u = (1, 0)
        F = np.zeros((3, 3))
        F[0, 0] = 1.0
        F[1, 1] = 1.0
        F[2, 2] = 1.0
        program = ConicProgram(
            n_vars=3, c=np.array([1.0, 0.0, 0.0]),
            cones=[Cone("soc", F, np.zeros(3))],
            A=np.array([[0.0, 1.0, 0.0]]), b=np.array([1.0]))
        report = solve_conic(program)
        assert report.status == OPTIMAL
        assert report.objective == pytest.approx(1.0, abs=1e-6)
        assert report.x[1] == pytest.approx(1.0, abs=1e-6)
        assert report.x[2] == pytest.approx(0.0, abs=1e-6)

    def test_infeasible_detected(self):
        rows = np.array([[1.0], [-1.0]])
        consts = np.array([-2.0, 1.0])     # x >= 2 and x <= 1
        program = ConicProgram(n_vars=1, c=np.array([0.0]),
                               cones=[Cone("nonneg", rows, consts)])
        report = solve_conic(program)
        assert report.status == INFEASIBLE

    def test_optimal_iterate_is_feasible(self):
        rng = np.random.default_rng(0)
        d = 4
        rows = np.vstack([np.eye(d), -np.eye(d), rng.standard_normal((3, d))])
        consts = np.concatenate([np.ones(d), np.ones(d), np.ones(3) * 2])
        program = ConicProgram(n_vars=d, c=rng.standard_normal(d),
                               cones=[Cone("nonneg", rows, consts)])
        report = solve_conic(program, tol_feas=1e-7)
        assert report.status == OPTIMAL
        assert report.max_violation <= 1e-7

    def test_lp_vertex_enumeration_oracle(self):
        result = check_lp_vertex_oracle(count=50, seed=5)
        assert result.passed, result.detail

    def test_soc_bisection_oracle(self):
        result = check_soc_bisection_oracle(count=50, seed=7)
        assert result.passed, result.detail

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(1)
        d = 5
        rows = np.vstack([np.eye(d), -np.eye(d)])
        consts = np.concatenate([np.zeros(d), np.ones(d)])
        c = rng.standard_normal(d)
        program = ConicProgram(n_vars=d, c=c,
                               cones=[Cone("nonneg", rows, consts)])
        x1 = solve_conic(program).x
        x2 = solve_conic(program).x
        assert np.array_equal(x1, x2)


class TestArmijo:
    def test_quadratic(self):
        def f(x):
            return float((x[0] - 2) ** 2), np.array([2 * (x[0] - 2)])

        result = armijo_descent(f, np.array([0.0]))
        assert result.x[0] == pytest.approx(2.0, abs=1e-5)

    def test_constant_returns_start(self):
        def f(x):
            return 5.0, np.zeros_like(x)

        result = armijo_descent(f, np.array([1.0, 2.0]))
        assert result.converged
        assert result.iterations == 0
        assert np.array_equal(result.x, [1.0, 2.0])

    def test_rosenbrock(self):
        def rosen(x):
            val = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
            grad = np.array([
                -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                200 * (x[1] - x[0] ** 2)])
            return val, grad

        result = armijo_descent(rosen, np.array([-1.2, 1.0]),
                                max_iters=60000, grad_tol=1e-9)
        assert result.objective <= 1e-6
        assert np.allclose(result.x, [1.0, 1.0], atol=1e-2)

    def test_monotone_objective(self):
        values = []

        def f(x):
            v = float(np.sum(x ** 4) + np.sum(x ** 2))
            values.append(v)
            return v, 4 * x ** 3 + 2 * x

        armijo_descent(f, np.array([2.0, -3.0]), max_iters=50)
        accepted = [values[0]]
        for v in values[1:]:
            if v <= accepted[-1]:
                accepted.append(v)
        # accepted sequence is what the iterate follows; it never increases
        assert all(b <= a + 1e-12 for a, b in zip(accepted, accepted[1:]))

    def test_nonfinite_start_raises(self):
        def f(x):
            return np.inf, np.zeros_like(x)

        with pytest.raises(ValueError):
            armijo_descent(f, np.array([0.0]))

    def test_nonfinite_trials_rejected(self):
        # objective finite only on x > 0.5; descent must stay in domain
        def f(x):
            if x[0] <= 0.5:
                return np.inf, np.array([0.0])
            return float(x[0] ** 2), np.array([2 * x[0]])

        result = armijo_descent(f, np.array([2.0]), max_iters=100)
        assert result.x[0] > 0.5
        assert np.isfinite(result.objective)
