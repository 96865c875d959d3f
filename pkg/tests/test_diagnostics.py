import csv
import json

import numpy as np
import pytest

from exactpen.corpus import load_example
from exactpen.diagnostics import (ExactnessDiagnostics, controllability_gramian, descent_rate_estimate,
                                  lambda_star_bound, lipschitz_estimate, mfcq_check, point_distance,
                                  probe_directions, relative_interior_probe, slater_margin, write_diagnostics_json,
                                  write_probe_csv)
from exactpen.errors import NonPositiveRate, NotFeasibleReference, UnsupportedDynamics
from exactpen.model import (AdmissibleControlSet, ConstraintSpec, Problem, TimeGrid, affine_constraint,
                            make_cost, make_dynamics, quadratic_cost)
from exactpen.penalty import PenaltyConfig
from exactpen.simulate import LinearizationAlongTrajectory, linearize, rollout

from helpers import scalar_problem


def constant_linearization(A, B, n):
    A, B = np.asarray(A, float), np.asarray(B, float)
    return LinearizationAlongTrajectory(np.broadcast_to(A, (n,) + A.shape).copy(),
                                        np.broadcast_to(B, (n,) + B.shape).copy())


class TestGramian:
    def test_identity(self, grid):
        rep = controllability_gramian(constant_linearization(np.zeros((3, 3)), np.eye(3), 100), grid)
        np.testing.assert_allclose(rep.W, np.eye(3), atol=1e-8)
        assert rep.controllable and rep.numerical_rank == 3

    def test_double_integrator(self, grid):
        rep = controllability_gramian(constant_linearization([[0, 1], [0, 0]], [[0], [1]], 100), grid)
        np.testing.assert_allclose(rep.W, [[1 / 3, 1 / 2], [1 / 2, 1]], atol=1e-6)
        assert rep.controllable

    def test_no_input(self, grid):
        rep = controllability_gramian(constant_linearization(np.eye(2), np.zeros((2, 1)), 100), grid)
        assert np.all(rep.W == 0.0)
        assert not rep.controllable and rep.numerical_rank == 0

    def test_degenerate_example_at_zero(self):
        entry = load_example("degenerate-linearization")
        z = np.zeros((100, 1))
        lin = linearize(entry.problem, rollout(entry.problem, z), z)
        rep = controllability_gramian(lin, entry.problem.grid)
        assert not rep.controllable

    @pytest.mark.parametrize("seed", range(5))
    def test_symmetric_psd(self, grid, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(100, 3, 3))
        B = rng.normal(size=(100, 3, 2))
        rep = controllability_gramian(LinearizationAlongTrajectory(A, B), grid)
        np.testing.assert_allclose(rep.W, rep.W.T, atol=1e-10)
        eig = np.linalg.eigvalsh(rep.W)
        assert rep.min_eigenvalue <= eig.min() + 1e-12
        assert eig.min() >= -1e-10 * eig.max()
        assert rep.controllable == (rep.min_eigenvalue > rep.rank_threshold)

    def test_rank_invariant_under_rotation(self, grid):
        rng = np.random.default_rng(0)
        # a controllable 2-block and an uncontrolled mode
        A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -0.5]])
        B = np.array([[0.0], [1.0], [0.0]])
        base = controllability_gramian(constant_linearization(A, B, 100), grid).numerical_rank
        assert base == 2
        for _ in range(10):
            Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            rep = controllability_gramian(constant_linearization(Q @ A @ Q.T, Q @ B, 100), grid)
            assert rep.numerical_rank == base


class TestSlater:
    def clock_problem(self, *fns):
        g = TimeGrid(1.0, 101)
        return Problem(g, [0.0, -0.5], make_dynamics("clock_integrator"), quadratic_cost(2, 1),
                       AdmissibleControlSet(), ConstraintSpec(state_inequalities=fns))

    def test_strict_margin(self):
        p = self.clock_problem(affine_constraint([0.0, 1.0]))
        assert slater_margin(p, np.zeros((100, 1))) == -0.5

    def test_counterexample_reference(self):
        entry = load_example("state-ineq-counterexample")
        assert abs(slater_margin(entry.problem, entry.feasible_reference)) <= 1e-12

    def test_max_over_constraints(self):
        p = self.clock_problem(affine_constraint([0.0, 1.0], c=0.3), affine_constraint([0.0, 1.0], c=-0.2))
        assert slater_margin(p, np.zeros((100, 1))) == pytest.approx(-0.2)

    def test_no_constraints(self):
        assert slater_margin(self.clock_problem(), np.zeros((100, 1))) == -np.inf

    def test_reference_must_meet_terminal_constraint(self):
        p = scalar_problem(target=1.0)
        with pytest.raises(NotFeasibleReference):
            slater_margin(p, np.zeros((100, 1)))


class TestRelativeInteriorProbe:
    def test_no_rint_endpoint_is_on_boundary(self):
        prob = load_example("no-rint-endpoint").problem
        rep = relative_interior_probe(prob)
        assert rep.verdict == "boundary"
        i = int(np.argmin(np.linalg.norm(rep.directions - [0.0, -1.0], axis=1)))
        assert abs(rep.gaps[i]) <= 1e-6
        for e1 in ([1.0, 0.0], [-1.0, 0.0]):
            j = int(np.argmin(np.linalg.norm(rep.directions - e1, axis=1)))
            assert rep.flat[j]

    def test_midpoint_is_in_relative_interior(self):
        prob = load_example("no-rint-endpoint").problem
        rep = relative_interior_probe(prob, [0.0, 0.5])
        assert rep.verdict == "relative_interior"
        assert np.all(rep.gaps[~rep.flat] >= 0.5 * np.abs(rep.directions[~rep.flat, 1]) - 1e-6)

    def test_singleton_control_set(self):
        g = TimeGrid(1.0, 51)
        p = Problem(g, [1.0, 0.0], make_dynamics("double_integrator"), quadratic_cost(2, 1),
                    AdmissibleControlSet.box([0.0], [0.0]), ConstraintSpec("fixed", target=[1.0, 0.0]))
        rep = relative_interior_probe(p)
        assert rep.verdict == "relative_interior"
        assert np.all(rep.flat) and np.max(np.abs(rep.gaps)) <= 1e-12

    def test_outside(self):
        p = scalar_problem(target=2.0, controls=AdmissibleControlSet.box([-1.0], [1.0]))
        assert relative_interior_probe(p).verdict == "outside"

    def test_interior(self):
        p = scalar_problem(target=0.5, controls=AdmissibleControlSet.box([-1.0], [1.0]))
        rep = relative_interior_probe(p)
        assert rep.verdict == "interior"
        np.testing.assert_allclose(rep.gaps, [0.5, 1.5])

    def test_larger_set_never_decreases_gaps(self):
        g = TimeGrid(1.0, 51)

        def prob(b):
            return Problem(g, [0.0, 0.0], make_dynamics("double_integrator"), quadratic_cost(2, 1),
                           AdmissibleControlSet.box([-b], [b]), ConstraintSpec("fixed", target=[0.1, 0.2]))

        small, big = relative_interior_probe(prob(1.0)), relative_interior_probe(prob(2.0))
        assert np.all(big.gaps >= small.gaps - 1e-12)

    def test_nonlinear_dynamics_rejected(self):
        with pytest.raises(UnsupportedDynamics):
            relative_interior_probe(load_example("degenerate-linearization").problem)

    @pytest.mark.parametrize("d,count", [(1, None), (2, None), (3, None), (5, None), (3, 10)])
    def test_directions_are_unit(self, d, count):
        D = probe_directions(d, count)
        np.testing.assert_allclose(np.linalg.norm(D, axis=1), 1.0)
        assert len(D) == {1: 2}.get(d, count or (64 if d <= 3 else 512))


class TestMfcq:
    def test_single_active_inequality(self):
        rep = mfcq_check([affine_constraint([1.0, 0.0])], [], [0.0, 0.0])
        assert rep.holds
        np.testing.assert_allclose(rep.direction, [-1.0, 0.0], atol=1e-3)
        assert rep.margin == pytest.approx(-1.0, abs=1e-3)

    def test_dependent_equalities(self):
        rep = mfcq_check([], [affine_constraint([1.0, 0.0]), affine_constraint([2.0, 0.0])], [0.0, 0.0])
        assert not rep.holds

    def test_opposing_inequalities(self):
        rep = mfcq_check([affine_constraint([1.0, 0.0]), affine_constraint([-1.0, 0.0])], [], [0.0, 0.0])
        assert not rep.holds

    def test_inactive_constraints_ignored(self):
        rep = mfcq_check([affine_constraint([1.0, 0.0], c=-1.0)], [], [0.0, 0.0])
        assert rep.holds

    def test_state_ineq_exact_endpoint(self):
        entry = load_example("state-ineq-exact")
        cons = entry.problem.constraints
        rep = mfcq_check(cons.endpoint_inequalities, cons.endpoint_equalities, [1.0, 0.0], t=1.0)
        assert rep.holds
        # the certificate decreases the active x^2 <= 0 while staying on x^1 = T
        assert rep.direction[1] < 0 and abs(rep.direction[0]) <= 1e-12


class TestDistances:
    def test_control_metric(self, grid):
        p = scalar_problem()
        X = np.zeros((101, 1))
        assert point_distance(p, X, np.ones((100, 1)), X, np.zeros((100, 1)), "control") == pytest.approx(1.0)

    def test_state_metric(self, grid):
        p = scalar_problem()
        Xa = np.ones((101, 1))
        U = np.zeros((100, 1))
        assert point_distance(p, Xa, U, np.zeros((101, 1)), U, "state") == pytest.approx(2.0)

    def test_unknown_metric(self):
        p = scalar_problem()
        with pytest.raises(ValueError):
            point_distance(p, np.zeros((101, 1)), np.zeros((100, 1)), np.zeros((101, 1)), np.zeros((100, 1)),
                           "hausdorff")


class TestDescentRate:
    def slater_problem(self):
        # x' = u, x <= 0.5 along the trajectory; u = 0 is feasible with margin 0.5
        g = TimeGrid(1.0, 101)
        return Problem(g, [0.0], make_dynamics("single_integrator", {"dim": 1}), quadratic_cost(1, 1, R=[[1.0]]),
                       AdmissibleControlSet(), ConstraintSpec(state_inequalities=(affine_constraint([1.0], c=-0.5),)))

    def test_convex_slater_bound(self):
        p = self.slater_problem()
        cfg = PenaltyConfig.for_problem(p, 1.0, state_mode="sup")
        rng = np.random.default_rng(0)
        pts = [np.full((100, 1), c) + 0.2 * rng.normal(size=(100, 1)) for c in rng.uniform(0.7, 1.5, 10)]
        ref = np.zeros((100, 1))
        a, rates = descent_rate_estimate(p, cfg, pts, ref, metric="state", return_rates=True)
        Xr = rollout(p, ref).states
        C = max(point_distance(p, rollout(p, u).states, u, Xr, ref, "state") for u in pts)
        assert np.all(rates < 0)
        assert a >= 0.5 / C - 1e-6

    def test_state_ineq_exact_rate(self):
        entry = load_example("state-ineq-exact")
        pts = entry.descent_points(entry.problem, 5)
        a = descent_rate_estimate(entry.problem, entry.penalty, pts, entry.descent_reference, metric="state")
        assert 0.9 <= a <= 1.1

    def test_infeasible_reference(self):
        p = self.slater_problem()
        cfg = PenaltyConfig.for_problem(p, 1.0)
        with pytest.raises(NotFeasibleReference):
            descent_rate_estimate(p, cfg, [np.ones((100, 1))], np.ones((100, 1)))

    def test_needs_infeasible_points(self):
        p = self.slater_problem()
        cfg = PenaltyConfig.for_problem(p, 1.0)
        with pytest.raises(ValueError):
            descent_rate_estimate(p, cfg, [np.zeros((100, 1))], np.zeros((100, 1)))


class TestLipschitz:
    def test_zero_cost(self):
        p = scalar_problem(cost=make_cost("zero", None, 1, 1))
        rng = np.random.default_rng(0)
        assert lipschitz_estimate(p, [rng.uniform(-1, 1, (100, 1)) for _ in range(8)]) == 0.0

    def test_constant_cost(self):
        p = scalar_problem(cost=quadratic_cost(1, 1, c=1.0))
        rng = np.random.default_rng(0)
        assert lipschitz_estimate(p, [rng.uniform(-1, 1, (100, 1)) for _ in range(8)]) == pytest.approx(0.0, abs=1e-13)

    def test_squared_control(self):
        p = scalar_problem()
        samples = [np.full((100, 1), c) for c in np.linspace(-1, 1, 64)]
        L = lipschitz_estimate(p, samples, metric="control", seed=0)
        assert 1.5 <= L <= 2.0

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            lipschitz_estimate(scalar_problem(), [np.zeros((100, 1))])


class TestBound:
    def test_values(self):
        assert lambda_star_bound(2.0, 1.0) == 2.0
        assert lambda_star_bound(0.0, 1.0) == 0.0

    @pytest.mark.parametrize("a", [0.0, -1.0, np.nan])
    def test_nonpositive_rate(self, a):
        with pytest.raises(NonPositiveRate):
            lambda_star_bound(1.0, a)


class TestExport:
    def test_json(self, tmp_path):
        diag = ExactnessDiagnostics(slater_margin=-np.inf, descent_rate=1.0, lipschitz_estimate=2.0,
                                    lambda_star_bound=2.0, notes=["x"])
        path = tmp_path / "d.json"
        write_diagnostics_json(path, diag)
        data = json.loads(path.read_text())
        assert data["slater_margin"] == "-inf"
        assert data["lambda_star_bound"] == 2.0 and data["notes"] == ["x"]
        assert data["gramian"] is None

    def test_probe_csv(self, tmp_path):
        rep = relative_interior_probe(scalar_problem(target=0.5, controls=AdmissibleControlSet.box([-1.0], [1.0])))
        path = tmp_path / "p.csv"
        write_probe_csv(path, rep)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["d_1", "gap", "flat"]
        assert [float(r[1]) for r in rows[1:]] == pytest.approx([0.5, 1.5])
