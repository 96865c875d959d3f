"""Minimisation of the penalised objective and lambda-continuation sweeps.

``minimize_penalized`` runs projected gradient descent on the smoothed
objective with a monotone Armijo line search, trying a Barzilai-Borwein
step first and backtracking from there.  The smoothing parameter is driven
down a geometric schedule, each stage warm-started from the previous one.
The control reported is the best iterate measured by the *unsmoothed*
objective.

``lambda_sweep`` repeats the solve over an increasing grid of penalty
parameters and classifies the outcome as exact, non-exact or inconclusive.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ExactPenError, SearchSpaceTooLarge, StallWarning
from .model import AdmissibleControlSet, ControlSignal, Problem, Residuals, control_values, feasibility_residuals
from .penalty import PenaltyBreakdown, PenaltyConfig, breakdown_from_states, smoothed_objective
from .simulate import rollout_tape

__all__ = [
    "SolveOptions",
    "SolveReport",
    "SweepRecord",
    "SweepReport",
    "OracleResult",
    "project_onto_set",
    "minimize_penalized",
    "lambda_sweep",
    "brute_force_oracle",
    "parse_lambda_grid",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class SolveOptions:
    """Solver settings.

    ``max_iterations`` caps the iterations of each smoothing stage; the
    schedule is ``eps0, eps0*eps_factor, ...`` down to ``eps_floor``.
    """

    max_iterations: int = 200
    tol_feas: float = 1e-6
    objective_tolerance: float = 1e-9
    eps0: float = 1e-2
    eps_factor: float = 0.1
    eps_floor: float = 1e-8
    c1: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 60
    exact_stage: bool = True
    stagnation_window: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("tol_feas", "objective_tolerance", "eps0", "eps_floor", "c1", "initial_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.eps_factor < 1) or not (0 < self.backtrack < 1):
            raise ValueError("eps_factor and backtrack must lie in (0, 1)")

    def schedule(self) -> list[float]:
        out = [self.eps0]
        while out[-1] * self.eps_factor >= self.eps_floor * (1 - 1e-12):
            out.append(out[-1] * self.eps_factor)
        return out


@dataclass
class SolveReport:
    control: np.ndarray
    breakdown: PenaltyBreakdown
    residuals: Residuals
    iterations: int
    converged: bool
    reason: str
    pg_norm: float = float("nan")
    stalled: bool = False

    @property
    def feasible_within(self):
        return self.residuals.max()


def project_onto_set(control_set: AdmissibleControlSet, control, grid) -> np.ndarray:
    """Euclidean projection of the control values onto the admissible set."""
    return control_set.project(control, grid)


def _l2(v: np.ndarray, h: float) -> float:
    return float(np.sqrt(h * np.sum(v * v)))


def minimize_penalized(problem: Problem, config: PenaltyConfig, u_init, options: SolveOptions | None = None,
                       callback: Callable | None = None) -> SolveReport:
    """Minimise ``Phi_lam`` over admissible piecewise-constant controls.

    Parameters
    ----------
    problem : Problem
    config : PenaltyConfig
        ``config.eps`` is ignored; the schedule in ``options`` is used.
    u_init : array_like or ControlSignal
        Starting control; projected onto the admissible set first.
    options : SolveOptions, optional
    callback : callable, optional
        Called as ``callback(eps, U, J)`` after every accepted step, with the
        new iterate and its smoothed objective value.

    Returns
    -------
    SolveReport
        The best iterate by unsmoothed ``Phi``.  ``converged`` is true only
        when the projected-gradient norm at the final smoothing level fell
        below ``options.objective_tolerance``.
    """
    opts = options or SolveOptions()
    grid = problem.grid
    h = grid.step
    U = project_onto_set(problem.controls, u_init, grid)
    best_U = U.copy()
    best = None
    iterations = 0
    reason = "max_iterations"
    pg = float("nan")
    stalled = False
    converged = False

    # the last stage descends on the unsmoothed objective; it only helps
    # where Phi is differentiable near the minimiser, and the best-iterate
    # bookkeeping makes it harmless elsewhere
    stages = opts.schedule() + ([0.0] if opts.exact_stage else [])
    for stage, eps in enumerate(stages):
        J, g, exact = smoothed_objective(problem, config, U, eps=eps)
        if best is None or exact.total < best.total:
            best, best_U = exact, U.copy()
        step = opts.initial_step
        slow = 0
        reason = "max_iterations"
        for _ in range(opts.max_iterations):
            riesz = g / h
            pg = _l2(U - project_onto_set(problem.controls, U - riesz, grid), h)
            if pg <= opts.objective_tolerance:
                reason = "projected_gradient"
                break
            s = step
            accepted = False
            for _ in range(opts.max_backtracks):
                U_new = project_onto_set(problem.controls, U - s * riesz, grid)
                d = U_new - U
                slope = float(np.sum(g * d))
                if not np.any(d):
                    break
                try:
                    J_new, g_new, ex_new = smoothed_objective(problem, config, U_new, eps=eps)
                except ExactPenError:
                    s *= opts.backtrack
                    continue
                if J_new <= J + opts.c1 * slope:
                    accepted = True
                    break
                s *= opts.backtrack
            iterations += 1
            if not accepted:
                reason = "line_search_stall"
                break
            # Barzilai-Borwein trial for the next step, in the L2 metric
            y = (g_new - g) / h
            sy = h * float(np.sum(d * y))
            step = float(np.clip(h * float(np.sum(d * d)) / sy, 1e-12, 1e12)) if sy > 0 else opts.initial_step
            dec = J - J_new
            U, J, g = U_new, J_new, g_new
            if callback is not None:
                callback(eps, U, J)
            if ex_new.total < best.total:
                best, best_U = ex_new, U.copy()
            slow = slow + 1 if dec <= opts.objective_tolerance * max(1.0, abs(J)) else 0
            if slow >= opts.stagnation_window:
                reason = "objective_stagnation"
                break
        last_stage = stage == len(stages) - 1
        if last_stage:
            if reason == "line_search_stall":
                stalled = True
                warnings.warn(StallWarning("line search failed at the smoothing floor"), stacklevel=2)
            converged = reason == "projected_gradient"

    X = rollout_tape(problem, best_U).states
    res = feasibility_residuals(problem, X, best_U)
    return SolveReport(best_U, best, res, iterations, converged, reason, pg, stalled)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRecord:
    lam: float
    breakdown: Optional[PenaltyBreakdown]
    residuals: Optional[Residuals]
    converged: bool
    control: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def residual(self) -> float:
        return self.residuals.max() if self.residuals is not None else float("inf")


@dataclass
class SweepReport:
    lambda_grid: list
    records: list
    verdict: str
    estimated_lambda_star: Optional[float]
    best_feasible_cost: Optional[float] = None
    tol_feas: float = 1e-6


def parse_lambda_grid(text: str) -> list[float]:
    """``"a,b,c"`` or ``"a:b:factor"`` (geometric from a while <= b)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("lambda grid must be a:b:factor")
        a, b, f = (float(x) for x in parts)
        if not (a > 0 and b >= a and f > 1):
            raise ValueError("lambda grid needs 0 < a <= b and factor > 1")
        out = [a]
        while out[-1] * f <= b * (1 + 1e-12):
            out.append(out[-1] * f)
        return out
    vals = [float(x) for x in text.split(",") if x.strip()]
    if not vals:
        raise ValueError("empty lambda grid")
    return vals


def _cold_start(problem: Problem, rng: np.random.Generator) -> np.ndarray:
    n, m = problem.grid.interval_count, problem.control_dim
    U = rng.uniform(-1.0, 1.0, size=(n, m))
    return project_onto_set(problem.controls, U, problem.grid)


def lambda_sweep(problem: Problem, config: PenaltyConfig, lambda_grid: Sequence[float],
                 options: SolveOptions | None = None, initial_controls: Sequence | None = None,
                 feasible_reference=None) -> SweepReport:
    """Solve the penalised problem for each ``lam`` in an increasing grid.

    Every ``lam`` is solved from the previous minimiser (zero control for
    the first), from one seeded random control, from each entry of
    ``initial_controls`` and from ``feasible_reference``; the lowest ``Phi``
    is kept.

    The verdict is ``"exact"`` when the residuals are within ``tol_feas``
    from some grid value on (``estimated_lambda_star`` is the first such
    value), ``"non-exact"`` when the last solve is infeasible by more than
    ``10 tol_feas`` and undercuts the best feasible cost seen by more than
    ``tol_feas``, and ``"inconclusive"`` otherwise.
    """
    opts = options or SolveOptions()
    grid_vals = [float(v) for v in lambda_grid]
    if not grid_vals or any(v <= 0 for v in grid_vals) or any(b <= a for a, b in zip(grid_vals, grid_vals[1:])):
        raise ValueError("lambda grid must be increasing and positive")
    rng = np.random.default_rng(opts.seed)
    extra = [control_values(c) for c in (initial_controls or [])]
    if feasible_reference is not None:
        extra.append(control_values(feasible_reference))
    tol = opts.tol_feas

    best_feasible = None
    if feasible_reference is not None:
        Uref = control_values(feasible_reference)
        X = rollout_tape(problem, Uref).states
        if feasible_reference_ok(problem, X, Uref, tol):
            best_feasible = breakdown_from_states(problem, config, X, Uref).cost

    records = []
    warm = problem.zero_control().values
    for lam in grid_vals:
        cfg = config.with_lambda(lam)
        starts = [warm, _cold_start(problem, rng)] + extra
        best_rep = None
        errors = []
        for U0 in starts:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", StallWarning)
                    rep = minimize_penalized(problem, cfg, U0, opts)
            except ExactPenError as exc:
                errors.append(str(exc))
                continue
            if best_rep is None or rep.breakdown.total < best_rep.breakdown.total:
                best_rep = rep
            if rep.residuals.feasible(tol):
                c = rep.breakdown.cost
                best_feasible = c if best_feasible is None else min(best_feasible, c)
        if best_rep is None:
            records.append(SweepRecord(lam, None, None, False, None, "; ".join(errors)))
            continue
        warm = best_rep.control
        records.append(SweepRecord(lam, best_rep.breakdown, best_rep.residuals,
                                   best_rep.converged, best_rep.control))

    if not config.any_active:
        return SweepReport(grid_vals, records, "exact", grid_vals[0], best_feasible, tol)

    star = None
    for i in range(len(records)):
        if all(r.residual <= tol for r in records[i:]):
            star = grid_vals[i]
            break
    if star is not None:
        return SweepReport(grid_vals, records, "exact", star, best_feasible, tol)
    last = records[-1]
    if (last.breakdown is not None and last.residual > 10 * tol and best_feasible is not None
            and last.breakdown.total < best_feasible - tol):
        verdict = "non-exact"
    else:
        verdict = "inconclusive"
    return SweepReport(grid_vals, records, verdict, None, best_feasible, tol)


def feasible_reference_ok(problem: Problem, X, U, tol) -> bool:
    return feasibility_residuals(problem, X, U).feasible(tol)


def write_sweep_csv(path, report: SweepReport) -> None:
    """Columns ``lambda, Phi, I, terminal_res, state_res, control_res, converged``."""
    nan = float("nan")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "Phi", "I", "terminal_res", "state_res", "control_res", "converged"])
        for r in report.records:
            b, res = r.breakdown, r.residuals
            row = [r.lam,
                   b.total if b else nan, b.cost if b else nan,
                   res.terminal_residual if res else nan,
                   res.state_residual if res else nan,
                   res.control_residual if res else nan]
            w.writerow([repr(float(v)) for v in row] + [str(bool(r.converged)).lower()])


# ---------------------------------------------------------------------------
# brute force
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    """Exhaustive search result; ``feasible_control`` is None when nothing was feasible."""

    candidates: int
    feasible_control: Optional[np.ndarray]
    feasible_cost: Optional[float]
    penalized_control: Optional[np.ndarray] = None
    penalized_value: Optional[float] = None

    @property
    def infeasible(self) -> bool:
        return self.feasible_control is None


ORACLE_LIMIT = 10 ** 7


def brute_force_oracle(problem: Problem, alphabet, config: PenaltyConfig | None = None,
                       tol_feas: float = 1e-6, grid_n: int | None = None,
                       batch: int = 4096) -> OracleResult:
    """Enumerate every control whose values are drawn from ``alphabet``.

    Parameters
    ----------
    alphabet : sequence
        Finite set of control vectors (scalars allowed when ``m = 1``).
    config : PenaltyConfig, optional
        When given, the minimal ``Phi`` over all candidates is also reported.
    grid_n : int, optional
        Solve on a regridded copy with this node count.

    Raises
    ------
    SearchSpaceTooLarge
        If ``len(alphabet) ** (N - 1) > 1e7``.
    """
    if grid_n is not None and grid_n != problem.grid.node_count:
        problem = problem.with_grid(grid_n)
    A = np.asarray(alphabet, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    n = problem.grid.interval_count
    total = A.shape[0] ** n
    if total > ORACLE_LIMIT:
        raise SearchSpaceTooLarge(f"{A.shape[0]}^{n} = {total} candidates exceeds {ORACLE_LIMIT}")

    best_U = best_I = None
    pen_U = pen_val = None
    for chunk in _batched(itertools.product(range(A.shape[0]), repeat=n), batch):
        for idx in chunk:
            U = A[list(idx)]
            try:
                X = rollout_tape(problem, U).states
            except ExactPenError:
                continue
            res = feasibility_residuals(problem, X, U)
            if config is not None:
                b = breakdown_from_states(problem, config, X, U)
                if pen_val is None or b.total < pen_val:
                    pen_U, pen_val = U, b.total
                cost = b.cost
            else:
                cost = None
            if res.feasible(tol_feas):
                if cost is None:
                    from .simulate import running_cost
                    cost = running_cost(problem, X, U)
                if best_I is None or cost < best_I:
                    best_U, best_I = U, cost
    return OracleResult(total, best_U, best_I, pen_U, pen_val)


def _batched(it, size):
    while True:
        chunk = list(itertools.islice(it, size))
        if not chunk:
            return
        yield chunk
