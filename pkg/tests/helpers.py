"""Small problem builders shared by the test modules."""

import numpy as np

from exactpen.model import (AdmissibleControlSet, ConstraintSpec, Problem, TimeGrid, affine_constraint,
                            linear_dynamics, make_dynamics, quadratic_cost)


def scalar_problem(N=101, target=None, cost=None, controls=None, horizon=1.0):
    """x' = u on [0, horizon], cost int u^2 unless given."""
    g = TimeGrid(horizon, N)
    cons = ConstraintSpec("fixed", target=[target]) if target is not None else ConstraintSpec()
    return Problem(g, [0.0], make_dynamics("single_integrator", {"dim": 1}),
                   cost or quadratic_cost(1, 1, R=[[1.0]]), controls or AdmissibleControlSet(), cons)


def double_integrator_problem(N=101, horizon=1.0, **kw):
    g = TimeGrid(horizon, N)
    return Problem(g, [0.0, 0.0], make_dynamics("double_integrator"), quadratic_cost(2, 1, R=[[1.0]]), **kw)


def random_linear_problem(rng, N=11, d=2, m=1, state_mode_constraint=True):
    g = TimeGrid(float(rng.uniform(0.5, 2.0)), N)
    A = rng.normal(size=(d, d))
    B = rng.normal(size=(d, m))
    Q = rng.normal(size=(d, d))
    cost = quadratic_cost(d, m, Q=Q @ Q.T, R=np.eye(m), q=rng.normal(size=d), r=rng.normal(size=m))
    cons = ConstraintSpec("fixed", target=rng.normal(size=d),
                          state_inequalities=(affine_constraint(rng.normal(size=d), c=-0.1),)
                          if state_mode_constraint else ())
    return Problem(g, rng.normal(size=d), linear_dynamics(A, B), cost, AdmissibleControlSet(), cons)
