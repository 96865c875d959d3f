"""Exact penalty methods for optimal control problems with endpoint and state constraints."""

from .errors import (ExactPenError, MissingJacobian, MissingSupportOracle, NonFiniteState, NonPositiveRate,
                     NotFeasibleReference, ProblemFormatError, SearchSpaceTooLarge, StallWarning,
                     UnknownExample, UnsupportedDynamics)
from .model import (AdmissibleControlSet, ConstraintFunction, ConstraintSpec, ControlSignal, CostModel,
                    DynamicsModel, Problem, Residuals, TimeGrid, Trajectory, affine_constraint,
                    feasibility_residuals, linear_dynamics, make_constraint, make_cost, make_dynamics,
                    quadratic_constraint, quadratic_cost, validate)
from .penalty import PenaltyBreakdown, PenaltyConfig, penalized_objective, smoothed_gradient, smoothed_objective
from .simulate import linearize, rollout
from .solver import SolveOptions, SolveReport, SweepReport, brute_force_oracle, lambda_sweep, minimize_penalized
from .problem_io import dump_problem, load_problem

__version__ = "0.1.0"
