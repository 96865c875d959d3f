import csv

import numpy as np
import pytest

from exactpen.corpus import load_example
from exactpen.errors import SearchSpaceTooLarge
from exactpen.model import AdmissibleControlSet, make_cost
from exactpen.penalty import PenaltyConfig, penalized_objective
from exactpen.simulate import control_norm
from exactpen.solver import (SolveOptions, brute_force_oracle, lambda_sweep, minimize_penalized,
                             parse_lambda_grid, project_onto_set, write_sweep_csv)

from helpers import double_integrator_problem, scalar_problem


class TestOptions:
    def test_schedule(self):
        np.testing.assert_allclose(SolveOptions().schedule(), [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8])
        assert SolveOptions(eps0=1e-3, eps_floor=1e-3).schedule() == [1e-3]

    @pytest.mark.parametrize("kw", [{"tol_feas": 0.0}, {"eps_factor": 1.0}, {"backtrack": 0.0},
                                    {"max_iterations": 0}, {"c1": -1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolveOptions(**kw)


class TestProjection:
    def test_box(self, grid):
        box = AdmissibleControlSet.box([-1.0], [1.0])
        assert np.all(project_onto_set(box, np.full((100, 1), 1.7), grid) == 1.0)

    def test_ball(self, grid):
        ball = AdmissibleControlSet.l2_ball(1.0)
        v = np.full((100, 1), 2.0)
        np.testing.assert_allclose(project_onto_set(ball, v, grid), v / 2)


class TestMinimize:
    def test_degenerate_example_random_init(self):
        entry = load_example("degenerate-linearization")
        u0 = np.random.default_rng(0).uniform(-1, 1, (100, 1))
        rep = minimize_penalized(entry.problem, entry.penalty.with_lambda(2.0), u0, entry.options)
        assert control_norm(rep.control, entry.problem.grid, 2.0) <= 1e-3
        assert rep.breakdown.total <= 1e-6

    def test_scalar_half_control(self):
        p = scalar_problem(target=1.0)
        rep = minimize_penalized(p, PenaltyConfig.for_problem(p, 1.0), p.zero_control())
        np.testing.assert_allclose(rep.control, 0.5, atol=1e-3)
        assert rep.breakdown.total == pytest.approx(0.75, abs=1e-3)

    def test_zero_objective_converges_immediately(self):
        p = scalar_problem(cost=make_cost("zero", None, 1, 1))
        u0 = np.linspace(-1, 1, 100)[:, None]
        rep = minimize_penalized(p, PenaltyConfig.for_problem(p), u0)
        assert rep.converged and rep.iterations == 0
        assert rep.breakdown.total == 0.0
        np.testing.assert_array_equal(rep.control, u0)

    def test_breakdown_matches_returned_control(self):
        entry = load_example("state-eq-exact", 21)
        cfg = entry.penalty.with_lambda(0.5)
        u0 = np.random.default_rng(1).uniform(-1, 1, (20, 2))
        rep = minimize_penalized(entry.problem, cfg, u0)
        again = penalized_objective(entry.problem, cfg, rep.control)
        assert again.total == rep.breakdown.total

    def test_converged_implies_small_projected_gradient(self):
        p = scalar_problem(target=1.0, controls=AdmissibleControlSet.box([-0.4], [0.4]))
        opts = SolveOptions(max_iterations=500)
        rep = minimize_penalized(p, PenaltyConfig.for_problem(p, 3.0), p.zero_control(), opts)
        # the box is active everywhere at the optimum, so the projected gradient vanishes
        assert rep.converged and rep.pg_norm <= opts.objective_tolerance
        np.testing.assert_allclose(rep.control, 0.4)

    def test_deterministic(self):
        entry = load_example("state-ineq-exact", 31)
        cfg = entry.penalty.with_lambda(1.0)
        u0 = np.random.default_rng(2).uniform(-1, 1, (30, 1))
        a = minimize_penalized(entry.problem, cfg, u0)
        b = minimize_penalized(entry.problem, cfg, u0)
        np.testing.assert_array_equal(a.control, b.control)


class TestLineSearch:
    @pytest.mark.parametrize("name,lam", [("degenerate-linearization", 0.75), ("state-ineq-exact", 2.0),
                                          ("no-rint-endpoint", 10.0), ("state-ineq-counterexample", 2.0)])
    def test_monotone_and_admissible(self, name, lam):
        entry = load_example(name)
        prob = entry.problem
        cfg = entry.penalty.with_lambda(lam)
        u0 = np.random.default_rng(3).uniform(-1, 1, (prob.grid.interval_count, prob.control_dim))
        trace = []
        minimize_penalized(prob, cfg, u0, SolveOptions(max_iterations=40),
                           callback=lambda eps, U, J: trace.append((eps, U.copy(), J)))
        assert trace
        by_stage = {}
        for eps, U, J in trace:
            assert prob.controls.contains(U, prob.grid, tol=1e-10)
            by_stage.setdefault(eps, []).append(J)
        for eps, values in by_stage.items():
            assert all(b <= a for a, b in zip(values, values[1:])), eps


class TestSweep:
    def test_lq_scalar_residual_law(self):
        p = scalar_problem(target=1.0)
        rep = lambda_sweep(p, PenaltyConfig.for_problem(p), [0.5, 1.0, 2.0, 4.0])
        res = [r.residuals.terminal_residual for r in rep.records]
        np.testing.assert_allclose(res[:2], [0.75, 0.5], atol=1e-3)
        assert max(res[2:]) <= 1e-6
        assert rep.verdict == "exact" and rep.estimated_lambda_star == 2.0

    def test_unconstrained_problem_is_trivially_exact(self):
        p = double_integrator_problem(N=21)
        rep = lambda_sweep(p, PenaltyConfig.for_problem(p), [0.1, 1.0])
        assert rep.verdict == "exact" and rep.estimated_lambda_star == 0.1

    def test_exact_verdict_invariant(self):
        entry = load_example("lq-scalar", 21)
        rep = lambda_sweep(entry.problem, entry.penalty, [0.5, 1.0, 1.5, 2.0, 3.0])
        i = rep.lambda_grid.index(rep.estimated_lambda_star)
        assert all(r.residual <= rep.tol_feas for r in rep.records[i:])
        assert rep.records[i - 1].residual > rep.tol_feas

    def test_inconclusive_when_nothing_feasible_is_known(self):
        # the sweep stops below lam* and no feasible point was seen
        p = scalar_problem(target=1.0, N=21)
        rep = lambda_sweep(p, PenaltyConfig.for_problem(p), [0.25, 0.5])
        assert rep.verdict == "inconclusive"

    def test_rejects_bad_grid(self):
        p = scalar_problem(target=1.0, N=11)
        for grid in ([], [1.0, 0.5], [0.0, 1.0]):
            with pytest.raises(ValueError):
                lambda_sweep(p, PenaltyConfig.for_problem(p), grid)

    def test_csv(self, tmp_path):
        p = scalar_problem(target=1.0, N=21)
        rep = lambda_sweep(p, PenaltyConfig.for_problem(p), [1.0, 3.0])
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, rep)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["lambda", "Phi", "I", "terminal_res", "state_res", "control_res", "converged"]
        assert [float(r[0]) for r in rows[1:]] == [1.0, 3.0]
        assert float(rows[1][3]) == rep.records[0].residuals.terminal_residual


class TestLambdaGrid:
    @pytest.mark.parametrize("text,want", [("1,2,5", [1.0, 2.0, 5.0]), ("0.1:100:10", [0.1, 1.0, 10.0, 100.0]),
                                           ("1:8:2", [1.0, 2.0, 4.0, 8.0]), ("2:2:3", [2.0])])
    def test_parse(self, text, want):
        np.testing.assert_allclose(parse_lambda_grid(text), want)

    @pytest.mark.parametrize("text", ["", "1:2", "1:0.5:2", "1:5:1", "0:1:2", "a,b"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            parse_lambda_grid(text)


class TestOracle:
    def test_candidate_count(self):
        p = scalar_problem(N=5)
        assert brute_force_oracle(p, [-1.0, 0.0, 1.0]).candidates == 81

    def test_scalar_feasible_optimum(self):
        p = scalar_problem(N=5, target=1.0)
        res = brute_force_oracle(p, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(res.feasible_control, np.ones((4, 1)))
        assert res.feasible_cost == pytest.approx(1.0, abs=1e-12)

    def test_unreachable_target(self):
        p = scalar_problem(N=5, target=2.0)
        assert brute_force_oracle(p, [0.0, 0.5, 1.0]).infeasible

    def test_too_large(self):
        with pytest.raises(SearchSpaceTooLarge):
            brute_force_oracle(scalar_problem(N=101), [0.0, 1.0])

    def test_regrid(self):
        res = brute_force_oracle(scalar_problem(N=101, target=1.0), [0.0, 0.5, 1.0], grid_n=5)
        assert res.candidates == 81 and res.feasible_cost == pytest.approx(1.0)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
    def test_solver_dominates_oracle(self, lam):
        p = scalar_problem(N=5, target=1.0)
        cfg = PenaltyConfig.for_problem(p, lam)
        orc = brute_force_oracle(p, [0.0, 0.25, 0.5, 0.75, 1.0], cfg)
        rep = minimize_penalized(p, cfg, p.zero_control())
        assert rep.breakdown.total <= orc.penalized_value + 1e-6

    def test_exact_verdict_matches_oracle_optimum(self):
        p = scalar_problem(N=5, target=1.0)
        rep = lambda_sweep(p, PenaltyConfig.for_problem(p), [0.5, 1.0, 2.0, 4.0])
        orc = brute_force_oracle(p, [0.0, 0.5, 1.0])
        assert rep.verdict == "exact"
        rec = rep.records[rep.lambda_grid.index(rep.estimated_lambda_star)]
        assert rec.residual <= rep.tol_feas
        assert abs(rec.breakdown.cost - orc.feasible_cost) <= 2 * rep.tol_feas
