"""Worked examples with closed-form expectations.

Each entry bundles a problem, the penalty to apply, a lambda grid, the
expected sweep verdict, witness controls with known objective values, and
diagnostic expectations.  :func:`verify_example` checks all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .diagnostics import (controllability_gramian, descent_rate_estimate, lambda_star_bound, lipschitz_estimate,
                          relative_interior_probe, slater_margin)
from .errors import ExactPenError, UnknownExample
from .model import (AdmissibleControlSet, ConstraintSpec, Problem, TimeGrid, affine_constraint, feasibility_residuals,
                    make_dynamics, quadratic_cost)
from .penalty import PenaltyConfig, penalized_objective
from .simulate import control_norm, linearize, rollout, rollout_tape
from .solver import SolveOptions, brute_force_oracle, lambda_sweep

__all__ = [
    "Witness",
    "CorpusEntry",
    "Check",
    "Verification",
    "list_examples",
    "load_example",
    "verify_example",
    "alternating_control",
    "spike_control",
    "no_rint_control",
]


@dataclass(frozen=True)
class Witness:
    """A control with expected values: ``expected[key] = (value, tolerance)``.

    Keys are ``Phi``, ``I``, ``phi_T``, ``phi_E``, ``phi_S``, ``terminal_residual``,
    ``state_residual`` and ``control_norm`` (discrete ``L^2``).
    """

    name: str
    control: np.ndarray
    lam: float
    expected: dict


@dataclass
class CorpusEntry:
    name: str
    description: str
    problem: Problem
    penalty: PenaltyConfig
    lambda_grid: list
    verdict: str
    lambda_star: Optional[float] = None
    lambda_star_tol: float = 0.0
    witnesses: list = field(default_factory=list)
    sweep_inits: list = field(default_factory=list)
    feasible_reference: Optional[np.ndarray] = None
    options: SolveOptions = field(default_factory=SolveOptions)
    diagnostics: dict = field(default_factory=dict)
    descent_points: Optional[Callable] = None
    descent_reference: object = None
    descent_metric: str = "state"


@dataclass
class Check:
    label: str
    passed: bool
    detail: str


@dataclass
class Verification:
    name: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  [{'ok' if c.passed else 'FAIL'}] {c.label}: {c.detail}" for c in self.checks]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# closed-form controls
# ---------------------------------------------------------------------------


def no_rint_control(grid: TimeGrid, s: float) -> np.ndarray:
    """Constant pair ``((s + sqrt s)/2, (s - sqrt s)/2)``; ``x^2(T) = s T``."""
    r = np.sqrt(s)
    return np.tile([(s + r) / 2.0, (s - r) / 2.0], (grid.interval_count, 1))


def _exact_blocks(grid: TimeGrid, width: float) -> int:
    k = width / grid.step
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ValueError(f"block width {width!r} is not a multiple of the step {grid.step!r}")
    return int(round(k))


def alternating_control(grid: TimeGrid, n: int) -> np.ndarray:
    """``+1`` then ``-1`` on consecutive blocks of length ``T / 2n``."""
    k = _exact_blocks(grid, grid.horizon / (2 * n))
    idx = np.arange(grid.interval_count) // k
    return np.where(idx % 2 == 0, 1.0, -1.0)[:, None]


def spike_control(grid: TimeGrid, n: int) -> np.ndarray:
    """Value ``n`` on ``[0, 1/n^2)``, zero afterwards."""
    k = _exact_blocks(grid, 1.0 / n ** 2)
    u = np.zeros((grid.interval_count, 1))
    u[:k] = n
    return u


# ---------------------------------------------------------------------------
# entries
# ---------------------------------------------------------------------------


def _no_rint(N):
    grid = TimeGrid(1.0, N or 101)
    prob = Problem(grid, [0.0, 0.0], make_dynamics("sum_integrator"),
                   quadratic_cost(2, 2, r=[-1.0, 1.0]),
                   AdmissibleControlSet.pointwise("parabolic_segment"),
                   ConstraintSpec("fixed", target=[0.0, 0.0]))
    lams = [1.0, 10.0, 100.0, 1000.0]
    wit = [Witness("u_s, s = 1/64", no_rint_control(grid, 1 / 64), 4.0,
                   {"Phi": (-0.0625, 1e-6)}),
           Witness("u_s, s = 0.25", no_rint_control(grid, 0.25), 1.0,
                   {"terminal_residual": (0.25, 1e-9), "phi_T": (0.25, 1e-9)})]
    for lam in lams:
        s = min(1.0, 1.0 / (4 * lam * lam))
        wit.append(Witness(f"u_s, s = 1/(4 lam^2), lam = {lam:g}", no_rint_control(grid, s), lam,
                           {"Phi": (-1.0 / (4 * lam), 1e-6)}))
    inits = [no_rint_control(grid, 1.0 / (4 * lam * lam)) for lam in lams]
    return CorpusEntry(
        "no-rint-endpoint",
        "Fixed endpoint on the relative boundary of the reachable set; the "
        "terminal penalty is not exact.",
        prob, PenaltyConfig.for_problem(prob), lams, "non-exact",
        witnesses=wit, sweep_inits=inits, feasible_reference=np.zeros((grid.interval_count, 2)),
        options=SolveOptions(tol_feas=1e-9),
        diagnostics={"probe": [((0.0, 0.0), "boundary", {(0.0, -1.0): (0.0, 1e-6)}),
                               ((0.0, 0.5), "relative_interior", {})]})


def _degenerate(N):
    grid = TimeGrid(1.0, N or 101)
    prob = Problem(grid, [0.0], make_dynamics("x_plus_u_squared", {"a": 1.0, "b": 1.0}),
                   quadratic_cost(1, 1, R=[[-1.0]]), AdmissibleControlSet.box([-1.0], [1.0]),
                   ConstraintSpec("fixed", target=[0.0]))
    n = grid.interval_count
    e = np.e
    wit = [Witness("u = 1", np.ones((n, 1)), 0.5, {"Phi": (-1.0 + 0.5 * (e - 1.0), 1e-6),
                                                    "I": (-1.0, 1e-12), "phi_T": (e - 1.0, 1e-6)}),
           Witness("u = 0", np.zeros((n, 1)), 1.0, {"Phi": (0.0, 1e-15)})]
    return CorpusEntry(
        "degenerate-linearization",
        "x' = x + u^2 with cost -int u^2: linearisation at the optimum is not "
        "controllable, yet the terminal penalty is exact for lam >= 1.",
        prob, PenaltyConfig.for_problem(prob), [0.5, 0.75, 1.0, 1.5, 2.0], "exact",
        lambda_star=1.0, lambda_star_tol=0.5, witnesses=wit,
        feasible_reference=np.zeros((n, 1)),
        options=SolveOptions(objective_tolerance=1e-12),
        diagnostics={"gramian_at_zero": False})


def _state_eq_counter(N):
    grid = TimeGrid(1.0, N or 121)
    prob = Problem(grid, [0.0, 0.0], make_dynamics("clock_integrator"),
                   quadratic_cost(2, 1, R=[[-1.0]]), AdmissibleControlSet.box([-1.0], [1.0]),
                   ConstraintSpec("fixed", target=[grid.horizon, 0.0],
                                  state_equality=affine_constraint([0.0, 1.0])))
    T = grid.horizon
    wit = []
    inits = []
    for n in (5, 10, 20):
        try:
            u = alternating_control(grid, n)
        except ValueError:
            continue
        wit.append(Witness(f"alternating, n = {n}", u, 5.0,
                           {"I": (-T, 1e-9), "phi_S": (T / (2 * n), 1e-9),
                            "terminal_residual": (0.0, 1e-9), "Phi": (-T + 5.0 * T / (2 * n), 1e-9)}))
        inits.append(u)
    return CorpusEntry(
        "state-eq-counterexample",
        "Clock dynamics with x^2 = 0 imposed along the whole trajectory; fast "
        "oscillating controls defeat every uniformly continuous penalty.",
        prob, PenaltyConfig.for_problem(prob, state_mode="sup"), [1.0, 2.0, 5.0], "non-exact",
        witnesses=wit, sweep_inits=inits, feasible_reference=np.zeros((grid.interval_count, 1)))


def _state_ineq_counter(N):
    grid = TimeGrid(1.0, N or 401)
    prob = Problem(grid, [0.0, 0.0], make_dynamics("clock_integrator"),
                   quadratic_cost(2, 1, R=[[-1.0]]), AdmissibleControlSet.l2_ball(1.0, nonnegative=True),
                   ConstraintSpec("free", state_inequalities=(affine_constraint([0.0, 1.0]),)))
    wit = []
    inits = []
    for n in (5, 10, 20):
        try:
            u = spike_control(grid, n)
        except ValueError:
            continue
        wit.append(Witness(f"spike, n = {n}", u, 5.0,
                           {"I": (-1.0, 1e-9), "phi_S": (1.0 / n, 1e-9), "control_norm": (1.0, 1e-12),
                            "Phi": (-1.0 + 5.0 / n, 1e-9)}))
        inits.append(u)
    return CorpusEntry(
        "state-ineq-counterexample",
        "Nonnegative controls in the unit L2 ball with x^2 <= 0; Slater fails "
        "and short spikes make the sup penalty non-exact.",
        prob, PenaltyConfig.for_problem(prob, state_mode="sup"), [1.0, 2.0, 5.0], "non-exact",
        witnesses=wit, sweep_inits=inits, feasible_reference=np.zeros((grid.interval_count, 1)),
        diagnostics={"slater": (0.0, 1e-12)})


def _clip_shift_to(problem, U, target, lo=-1.0, hi=1.0):
    """Add a constant to ``U`` (then clip) so that ``x^2(T)`` hits ``target``."""
    def end(c):
        return rollout_tape(problem, np.clip(U + c, lo, hi)).states[-1, 1]

    a, b = -2.0, 2.0
    for _ in range(80):
        mid = 0.5 * (a + b)
        if end(mid) < target:
            a = mid
        else:
            b = mid
    return np.clip(U + 0.5 * (a + b), lo, hi)


BETA = 0.5


def _ineq_exact_points(problem, count=20, seed=0):
    rng = np.random.default_rng(seed)
    n = problem.grid.interval_count
    cfg = PenaltyConfig.for_problem(problem, 1.0, state_mode="lp")
    out = []
    while len(out) < count:
        U = rng.uniform(-1.0, 1.0, size=(n, 1))
        U = _clip_shift_to(problem, U, -BETA * rng.uniform(0.1, 0.9))
        b = penalized_objective(problem, cfg, U)
        if b.phi_S > 1e-3 and b.phi_E <= 1e-12:
            out.append(U)
    return out


def _ineq_exact_reference(U, X):
    """Zero the control wherever x^2 > 0 (fractionally on crossing intervals)."""
    a, b = X[:-1, 1], X[1:, 1]
    frac = np.where((a <= 0) & (b <= 0), 1.0, 0.0)
    up = (a <= 0) & (b > 0)
    down = (a > 0) & (b <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(up, -a / (b - a), frac)
        frac = np.where(down, b / (b - a), frac)
    return U * frac[:, None]


def _state_ineq_exact(N):
    grid = TimeGrid(1.0, N or 101)
    T = grid.horizon
    cons = ConstraintSpec(
        "variable",
        endpoint_inequalities=(affine_constraint([0.0, 1.0]), affine_constraint([0.0, -1.0], c=-BETA)),
        endpoint_equalities=(affine_constraint([1.0, 0.0], c=-T),),
        state_inequalities=(affine_constraint([0.0, 1.0]),))
    prob = Problem(grid, [0.0, 0.0], make_dynamics("clock_integrator"),
                   quadratic_cost(2, 1, Q=np.diag([0.0, 1.0]), q=[0.0, -1.0], c=0.25),
                   AdmissibleControlSet.box([-1.0], [1.0]), cons)
    n = grid.interval_count
    return CorpusEntry(
        "state-ineq-exact",
        "Clock dynamics, x^2 <= 0 with endpoint set {T} x [-beta, 0]; the L^2 "
        "state penalty is exact with unit descent rate.",
        prob, PenaltyConfig.for_problem(prob, state_mode="lp", p=2.0), [0.25, 0.5, 2.0, 4.0, 8.0], "exact",
        lambda_star=2.0, lambda_star_tol=0.0,
        witnesses=[Witness("u = 0", np.zeros((n, 1)), 2.0,
                           {"Phi": (0.25, 1e-12), "phi_S": (0.0, 0.0), "phi_E": (0.0, 1e-12)})],
        feasible_reference=np.zeros((n, 1)),
        diagnostics={"descent": (0.9, 1.1)},
        descent_points=_ineq_exact_points, descent_reference=_ineq_exact_reference)


def _eq_exact_points(problem, count=20, seed=0):
    rng = np.random.default_rng(seed)
    n = problem.grid.interval_count
    cfg = PenaltyConfig.for_problem(problem, 1.0, state_mode="lp")
    out = []
    while len(out) < count:
        U = rng.uniform(-0.5, 0.5, size=(n, 2))
        g = U.sum(axis=1)
        U = U - 0.5 * g.mean() * np.ones(2)
        b = penalized_objective(problem, cfg, U)
        if b.phi_S > 1e-3 and b.phi_E <= 1e-12:
            out.append(U)
    return out


def _eq_exact_reference(U, X):
    """Remove the component of ``u`` along (1, 1)."""
    return U - 0.5 * U.sum(axis=1, keepdims=True) * np.ones(2)


def _state_eq_exact(N):
    grid = TimeGrid(1.0, N or 101)
    cons = ConstraintSpec("variable", endpoint_equalities=(affine_constraint([1.0, 1.0]),),
                          state_equality=affine_constraint([1.0, 1.0]))
    prob = Problem(grid, [0.0, 0.0], make_dynamics("single_integrator", {"dim": 2}),
                   quadratic_cost(2, 2, Q=np.eye(2), q=[-1.0, -1.0], c=0.5),
                   AdmissibleControlSet.box([-1.0, -1.0], [1.0, 1.0]), cons)
    n = grid.interval_count
    return CorpusEntry(
        "state-eq-exact",
        "x' = u in the plane with x^1 + x^2 = 0 along the trajectory; the L^2 "
        "state penalty is exact with descent rate sqrt 2.",
        prob, PenaltyConfig.for_problem(prob, state_mode="lp", p=2.0), [0.25, 0.5, 2.0, 4.0, 8.0], "exact",
        lambda_star=2.0, lambda_star_tol=0.0,
        witnesses=[Witness("u = 0", np.zeros((n, 2)), 2.0, {"Phi": (0.5, 1e-12), "phi_S": (0.0, 0.0)})],
        feasible_reference=np.zeros((n, 2)),
        diagnostics={"descent": (1.3, 1.5)},
        descent_points=_eq_exact_points, descent_reference=_eq_exact_reference)


def _lq_scalar(N):
    grid = TimeGrid(1.0, N or 101)
    prob = Problem(grid, [0.0], make_dynamics("single_integrator", {"dim": 1}),
                   quadratic_cost(1, 1, R=[[1.0]]), AdmissibleControlSet(),
                   ConstraintSpec("fixed", target=[1.0]))
    n = grid.interval_count
    return CorpusEntry(
        "lq-scalar",
        "x' = u, cost int u^2, x(1) = 1: the terminal penalty is exact from lam = 2, "
        "and below it the penalised minimiser misses the target by 1 - lam/2.",
        prob, PenaltyConfig.for_problem(prob), [0.5, 1.0, 1.5, 2.0, 3.0], "exact",
        lambda_star=2.0, lambda_star_tol=1.0,
        witnesses=[Witness("u = 0.5", np.full((n, 1), 0.5), 1.0, {"Phi": (0.75, 1e-12)}),
                   Witness("u = 1", np.ones((n, 1)), 2.0, {"I": (1.0, 1e-12), "terminal_residual": (0.0, 1e-12)})],
        feasible_reference=np.ones((n, 1)),
        diagnostics={"residual_law": 1e-3, "oracle": (5, [0.0, 0.5, 1.0], 1.0), "bound": True,
                     "gramian": True},
        descent_points=_lq_points, descent_reference=np.ones((n, 1)), descent_metric="control")


def _lq_points(problem: Problem, count: int) -> list:
    # constant controls near the optimum u = 1; ``count`` is ignored
    n = problem.grid.interval_count
    return [np.full((n, 1), c) for c in np.linspace(0.9, 1.1, 9) if abs(c - 1.0) > 1e-12]


_REGISTRY = {
    "no-rint-endpoint": _no_rint,
    "degenerate-linearization": _degenerate,
    "state-eq-counterexample": _state_eq_counter,
    "state-ineq-counterexample": _state_ineq_counter,
    "state-ineq-exact": _state_ineq_exact,
    "state-eq-exact": _state_eq_exact,
    "lq-scalar": _lq_scalar,
}


def list_examples() -> list[str]:
    return list(_REGISTRY)


def load_example(name: str, grid_n: Optional[int] = None) -> CorpusEntry:
    """Build a registry entry, optionally on a grid with ``grid_n`` nodes."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise UnknownExample(f"unknown example {name!r}") from None
    return builder(grid_n)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def _witness_values(entry: CorpusEntry, w: Witness) -> dict:
    prob = entry.problem
    cfg = entry.penalty.with_lambda(w.lam)
    b = penalized_objective(prob, cfg, w.control)
    X = rollout(prob, w.control)
    res = feasibility_residuals(prob, X, w.control)
    return {"Phi": b.total, "I": b.cost, "phi_T": b.phi_T, "phi_E": b.phi_E, "phi_S": b.phi_S,
            "terminal_residual": res.terminal_residual, "state_residual": res.state_residual,
            "control_norm": control_norm(w.control, prob.grid, 2.0)}


def check_witnesses(entry: CorpusEntry) -> list[Check]:
    out = []
    for w in entry.witnesses:
        vals = _witness_values(entry, w)
        for key, (want, tol) in w.expected.items():
            got = vals[key]
            ok = abs(got - want) <= tol
            detail = f"{key} = {got!r}, expected {want!r} +/- {tol:g}"
            if not ok:
                detail += (f" (quadrature/discretisation discrepancy on a grid of "
                           f"{entry.problem.grid.node_count} nodes)")
            out.append(Check(f"witness {w.name} at lam = {w.lam:g}", ok, detail))
    return out


def run_sweep(entry: CorpusEntry, options: Optional[SolveOptions] = None):
    return lambda_sweep(entry.problem, entry.penalty, entry.lambda_grid, options or entry.options,
                        initial_controls=entry.sweep_inits, feasible_reference=entry.feasible_reference)


def check_sweep(entry: CorpusEntry, report) -> list[Check]:
    out = [Check("sweep verdict", report.verdict == entry.verdict,
                 f"{report.verdict}, expected {entry.verdict}")]
    if entry.verdict == "exact" and entry.lambda_star is not None:
        got = report.estimated_lambda_star
        ok = got is not None and abs(got - entry.lambda_star) <= entry.lambda_star_tol + 1e-12
        out.append(Check("estimated lambda*", ok,
                         f"{got!r}, expected {entry.lambda_star!r} +/- {entry.lambda_star_tol:g}"))
    return out


def run_descent(entry: CorpusEntry, count: int = 20):
    pts = entry.descent_points(entry.problem, count)
    return descent_rate_estimate(entry.problem, entry.penalty, pts, entry.descent_reference,
                                 metric=entry.descent_metric, tol_feas=entry.options.tol_feas)


def check_diagnostics(entry: CorpusEntry, report=None) -> list[Check]:
    out = []
    diag = entry.diagnostics
    prob = entry.problem
    for x_T, verdict, gaps in diag.get("probe", []):
        pr = relative_interior_probe(prob, x_T)
        out.append(Check(f"probe verdict at {x_T}", pr.verdict == verdict, f"{pr.verdict}, expected {verdict}"))
        for dirn, (want, tol) in gaps.items():
            i = int(np.argmin(np.linalg.norm(pr.directions - np.asarray(dirn), axis=1)))
            got = float(pr.gaps[i])
            out.append(Check(f"probe gap along {dirn}", abs(got - want) <= tol,
                             f"{got!r}, expected {want!r} +/- {tol:g}"))
    if "gramian_at_zero" in diag:
        z = prob.zero_control()
        lin = linearize(prob, rollout(prob, z), z)
        g = controllability_gramian(lin, prob.grid)
        out.append(Check("Gramian at u = 0", g.controllable == diag["gramian_at_zero"],
                         f"controllable = {g.controllable}, min eigenvalue {g.min_eigenvalue!r}"))
    if "gramian" in diag:
        z = prob.zero_control()
        g = controllability_gramian(linearize(prob, rollout(prob, z), z), prob.grid)
        out.append(Check("Gramian", g.controllable == diag["gramian"], f"controllable = {g.controllable}"))
    if "slater" in diag:
        want, tol = diag["slater"]
        eta = slater_margin(prob, entry.feasible_reference, entry.options.tol_feas)
        out.append(Check("Slater margin", abs(eta - want) <= tol, f"eta = {eta!r}, expected {want!r}"))
    if "descent" in diag:
        lo, hi = diag["descent"]
        a = run_descent(entry)
        out.append(Check("descent rate", lo <= a <= hi, f"a = {a!r}, expected in [{lo:g}, {hi:g}]"))
    if "residual_law" in diag and report is not None:
        tol = diag["residual_law"]
        for rec in report.records:
            want = max(0.0, 1.0 - rec.lam / 2.0)
            got = rec.residuals.terminal_residual if rec.residuals else float("nan")
            tol_here = tol if want > 0 else entry.options.tol_feas
            out.append(Check(f"residual at lam = {rec.lam:g}", abs(got - want) <= tol_here,
                             f"{got!r}, expected {want!r}"))
    if "oracle" in diag:
        n_nodes, alphabet, want = diag["oracle"]
        orc = brute_force_oracle(prob, alphabet, entry.penalty.with_lambda(1.0),
                                 tol_feas=entry.options.tol_feas, grid_n=n_nodes)
        ok = orc.feasible_cost is not None and abs(orc.feasible_cost - want) <= 1e-12
        out.append(Check("brute-force feasible optimum", ok, f"I = {orc.feasible_cost!r}, expected {want!r}"))
        if report is not None and report.estimated_lambda_star is not None:
            rec = next(r for r in report.records if r.lam == report.estimated_lambda_star)
            ok = abs(rec.breakdown.cost - want) <= 1e-3
            out.append(Check("solver feasible I vs oracle", ok, f"{rec.breakdown.cost!r} vs {want!r}"))
    if diag.get("bound") and report is not None:
        L, a, bound = lq_bound(entry)
        star = report.estimated_lambda_star
        grid = entry.lambda_grid
        step = max(b - a_ for a_, b in zip(grid, grid[1:]))
        ok = star is not None and bound >= star - step
        out.append(Check("L/a bound vs sweep", ok, f"L = {L!r}, a = {a!r}, L/a = {bound!r}, sweep lam* = {star!r}"))
    return out


def lq_bound(entry: CorpusEntry):
    """Empirical ``L``, ``a`` and ``L / a`` near the optimum ``u = 1`` of lq-scalar."""
    pts = entry.descent_points(entry.problem, 0)
    L = lipschitz_estimate(entry.problem, pts + [entry.descent_reference], metric=entry.descent_metric)
    a = run_descent(entry)
    return L, a, lambda_star_bound(L, a)


def verify_example(name: str, options: Optional[SolveOptions] = None, grid_n: Optional[int] = None,
                   sweep: bool = True) -> Verification:
    """Check every expectation of a registry entry.

    Raises
    ------
    UnknownExample
    """
    try:
        entry = load_example(name, grid_n)
    except ValueError as exc:
        return Verification(name, [Check("construction", False, str(exc))])
    checks = check_witnesses(entry)
    report = None
    if sweep:
        try:
            report = run_sweep(entry, options)
            checks += check_sweep(entry, report)
        except ExactPenError as exc:
            checks.append(Check("sweep", False, str(exc)))
    try:
        checks += check_diagnostics(entry, report)
    except ExactPenError as exc:
        checks.append(Check("diagnostics", False, str(exc)))
    v = Verification(name, checks)
    v.report = report
    return v
