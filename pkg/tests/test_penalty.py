import numpy as np
import pytest

from exactpen.corpus import list_examples, load_example, no_rint_control
from exactpen.model import (AdmissibleControlSet, ConstraintSpec, Problem, TimeGrid, affine_constraint,
                            make_dynamics, quadratic_cost)
from exactpen.penalty import (PenaltyConfig, endpoint_penalty, penalized_objective, smoothed_gradient,
                              smoothed_objective, smoothing_term_count, state_penalty_lp, state_penalty_sup,
                              terminal_penalty)
from exactpen.simulate import rollout

from helpers import random_linear_problem, scalar_problem


def fd_gradient(problem, config, U, eps, step=1e-6):
    out = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        Up, Um = U.copy(), U.copy()
        Up[idx] += step
        Um[idx] -= step
        fp = smoothed_objective(problem, config, Up, with_gradient=False, eps=eps)[0]
        fm = smoothed_objective(problem, config, Um, with_gradient=False, eps=eps)[0]
        out[idx] = (fp - fm) / (2 * step)
    return out


class TestPenaltyConfig:
    @pytest.mark.parametrize("kw", [{"terminal_mode": "l1"}, {"state_mode": "mean"}, {"lam": -1.0},
                                    {"eps": 0.0}, {"state_mode": "lp", "p": 1.0},
                                    {"state_mode": "lp", "p": np.inf}])
    def test_rejects_bad_settings(self, kw):
        with pytest.raises(ValueError):
            PenaltyConfig(**kw)

    def test_for_problem_picks_modes(self):
        cfg = PenaltyConfig.for_problem(load_example("state-ineq-exact").problem, 3.0, state_mode="lp")
        assert (cfg.terminal_mode, cfg.endpoint_mode, cfg.state_mode, cfg.lam) == \
            ("none", "sum_hinge_plus_abs", "lp", 3.0)
        cfg = PenaltyConfig.for_problem(scalar_problem(target=1.0))
        assert (cfg.terminal_mode, cfg.endpoint_mode, cfg.state_mode) == ("euclidean", "none", "none")
        assert not PenaltyConfig.for_problem(scalar_problem()).any_active


class TestTerminalPenalty:
    def test_feasible(self):
        assert terminal_penalty(np.array([[0.0, 0.0], [1.0, 2.0]]), [1.0, 2.0]) == 0.0

    def test_no_rint_endpoint_value(self):
        assert terminal_penalty(np.array([[0.0, 0.0], [0.0, 0.25]]), [0.0, 0.0]) == 0.25

    def test_three_four_five(self):
        assert terminal_penalty(np.array([[3.0, 4.0]]), [0.0, 0.0]) == 5.0


class TestEndpointPenalty:
    def test_satisfied(self):
        cons = ConstraintSpec("variable", endpoint_inequalities=(affine_constraint([1.0, 0.0], c=-1.0),),
                              endpoint_equalities=(affine_constraint([0.0, 1.0]),))
        assert endpoint_penalty(np.array([[0.5, 0.0]]), cons) == 0.0

    def test_active_hinge(self):
        cons = ConstraintSpec("variable", endpoint_inequalities=(affine_constraint([1.0, 0.0], c=-1.0),),
                              endpoint_equalities=(affine_constraint([0.0, 1.0]),))
        assert endpoint_penalty(np.array([[2.0, 0.0]]), cons) == 1.0

    def test_inactive_hinge_plus_equality(self):
        cons = ConstraintSpec("variable", endpoint_inequalities=(affine_constraint([-1.0, 0.0]),),
                              endpoint_equalities=(affine_constraint([0.0, 1.0]),))
        assert endpoint_penalty(np.array([[2.0, -3.0]]), cons) == 3.0


class TestStatePenalties:
    def test_sup_feasible(self, grid):
        cons = ConstraintSpec(state_inequalities=(affine_constraint([0.0, 1.0]),))
        X = np.column_stack([grid.nodes, -grid.nodes])
        assert state_penalty_sup(X, cons, grid) == 0.0

    def test_sup_counterexample_trajectory(self, grid):
        n = 10
        cons = ConstraintSpec(state_inequalities=(affine_constraint([0.0, 1.0]),))
        X = np.column_stack([grid.nodes, np.minimum(n * grid.nodes, 1.0 / n)])
        assert state_penalty_sup(X, cons, grid) == pytest.approx(0.1, abs=1e-15)

    def test_sup_max_of_maxes(self, grid):
        cons = ConstraintSpec(state_inequalities=(affine_constraint([1.0, 0.0], c=-1.0),
                                                  affine_constraint([0.0, 1.0])))
        X = np.zeros((101, 2))
        X[40] = [1.5, 0.2]
        assert state_penalty_sup(X, cons, grid) == pytest.approx(0.5)

    def test_lp_feasible(self, grid):
        cons = ConstraintSpec(state_inequalities=(affine_constraint([0.0, 1.0]),))
        assert state_penalty_lp(np.zeros((101, 2)), cons, grid, 2.0) == 0.0

    def test_lp_linear_violation(self):
        # int_0^1 t^2 dt = 1/3; trapezoid error h^2/6 is below 1e-6 at h = 1e-3
        g = TimeGrid(1.0, 1001)
        cons = ConstraintSpec(state_inequalities=(affine_constraint([0.0, 1.0]),))
        X = np.column_stack([g.nodes, g.nodes])
        assert state_penalty_lp(X, cons, g, 2.0) == pytest.approx(1 / np.sqrt(3), abs=1e-6)

    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_lp_equality_identically_satisfied(self, grid, p):
        cons = ConstraintSpec(state_equality=affine_constraint([1.0, 1.0]))
        X = np.tile([0.3, -0.3], (101, 1))
        assert state_penalty_lp(X, cons, grid, p) == 0.0


class TestPenalizedObjective:
    def test_feasible_point_has_total_equal_cost(self):
        entry = load_example("lq-scalar")
        b = penalized_objective(entry.problem, entry.penalty.with_lambda(7.0), entry.feasible_reference)
        assert b.phi == pytest.approx(0.0, abs=1e-14)
        assert b.total == pytest.approx(b.cost, abs=1e-13)

    def test_no_rint_closed_form(self):
        entry = load_example("no-rint-endpoint")
        u = no_rint_control(entry.problem.grid, 1 / 64)
        b = penalized_objective(entry.problem, entry.penalty.with_lambda(4.0), u)
        assert b.total == pytest.approx(-np.sqrt(1 / 64) + 4.0 / 64, abs=1e-6)

    def test_degenerate_zero_control(self):
        entry = load_example("degenerate-linearization")
        b = penalized_objective(entry.problem, entry.penalty.with_lambda(1.0), np.zeros((100, 1)))
        assert b.total == 0.0

    def test_breakdown_dict(self):
        entry = load_example("lq-scalar")
        b = penalized_objective(entry.problem, entry.penalty.with_lambda(2.0), np.full((100, 1), 0.5))
        d = b.as_dict()
        assert d["Phi"] == pytest.approx(0.25 + 2 * 0.5)
        assert d["lambda"] == 2.0 and set(d) == {"I", "phi_T", "phi_E", "phi_S", "lambda", "Phi"}


class TestSmoothedGradient:
    def test_degenerate_origin_is_stationary(self):
        entry = load_example("degenerate-linearization")
        g = smoothed_gradient(entry.problem, entry.penalty.with_lambda(1.0), np.zeros((100, 1)))
        assert np.max(np.abs(g)) <= 1e-10

    def test_scalar_hand_gradient(self):
        p = scalar_problem(N=11)
        cfg = PenaltyConfig(lam=0.0)
        U = np.linspace(-1, 1, 10)[:, None]
        g = smoothed_gradient(p, cfg, U)
        np.testing.assert_allclose(g, 2 * p.grid.step * U, atol=1e-10)

    @pytest.mark.parametrize("mode", ["sup", "lp"])
    @pytest.mark.parametrize("seed", range(4))
    def test_random_linear_problem(self, mode, seed):
        rng = np.random.default_rng(seed)
        p = random_linear_problem(rng)
        cfg = PenaltyConfig.for_problem(p, 2.0, state_mode=mode, p=2.5)
        U = rng.normal(size=(10, 1))
        _, g, _ = smoothed_objective(p, cfg, U, eps=1e-3)
        fd = fd_gradient(p, cfg, U, 1e-3)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    @pytest.mark.parametrize("name", ["degenerate-linearization", "state-ineq-exact", "state-eq-exact"])
    def test_corpus_problems_on_coarse_grid(self, name):
        entry = load_example(name, 11)
        rng = np.random.default_rng(1)
        U = rng.uniform(-0.8, 0.8, (10, entry.problem.control_dim))
        cfg = entry.penalty.with_lambda(3.0)
        _, g, _ = smoothed_objective(entry.problem, cfg, U, eps=1e-3)
        fd = fd_gradient(entry.problem, cfg, U, 1e-3)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_endpoint_penalty_gradient(self):
        g = TimeGrid(1.0, 9)
        cons = ConstraintSpec("variable", endpoint_inequalities=(affine_constraint([1.0, 0.0], c=-0.1),),
                              endpoint_equalities=(affine_constraint([0.0, 1.0], c=-0.2),))
        p = Problem(g, [0.0, 0.0], make_dynamics("double_integrator"), quadratic_cost(2, 1, R=[[1.0]]),
                    AdmissibleControlSet(), cons)
        cfg = PenaltyConfig.for_problem(p, 1.5)
        U = np.random.default_rng(3).normal(size=(8, 1))
        _, grad, _ = smoothed_objective(p, cfg, U, eps=1e-3)
        fd = fd_gradient(p, cfg, U, 1e-3)
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)


class TestSmoothingConsistency:
    @pytest.mark.parametrize("name", list_examples())
    @pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4])
    def test_gap_bounded_by_term_count(self, name, eps):
        entry = load_example(name)
        prob = entry.problem
        rng = np.random.default_rng(11)
        points = [prob.controls.project(rng.uniform(-1, 1, (prob.grid.interval_count, prob.control_dim)),
                                        prob.grid) for _ in range(3)]
        points += [w.control for w in entry.witnesses]
        for lam in (0.5, 4.0):
            cfg = entry.penalty.with_lambda(lam)
            count = smoothing_term_count(prob, cfg)
            for U in points:
                smooth, _, exact = smoothed_objective(prob, cfg, U, with_gradient=False, eps=eps)
                assert abs(smooth - exact.total) <= lam * eps * count + 1e-12

    def test_eps_zero_gives_exact_value(self):
        entry = load_example("state-eq-exact")
        U = np.random.default_rng(2).uniform(-1, 1, (100, 2))
        cfg = entry.penalty.with_lambda(2.0)
        val, _, exact = smoothed_objective(entry.problem, cfg, U, eps=0.0)
        assert val == pytest.approx(exact.total, abs=1e-14)


class TestTerminalLipschitz:
    def test_reverse_triangle(self):
        p = load_example("no-rint-endpoint").problem
        rng = np.random.default_rng(5)
        for _ in range(50):
            Ua = p.controls.project(rng.uniform(-1, 1, (100, 2)), p.grid)
            Ub = p.controls.project(rng.uniform(-1, 1, (100, 2)), p.grid)
            Xa, Xb = rollout(p, Ua).states, rollout(p, Ub).states
            lhs = abs(terminal_penalty(Xa, p.constraints.target) - terminal_penalty(Xb, p.constraints.target))
            assert lhs <= np.linalg.norm(Xa[-1] - Xb[-1]) + 1e-15
