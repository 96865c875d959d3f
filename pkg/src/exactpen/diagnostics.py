"""Numerical checks of the hypotheses behind exact penalisation.

All functions here are evidence tools on a discretised problem: they can
falsify a hypothesis or support it, never prove it in function space.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MissingSupportOracle, NonFiniteState, NonPositiveRate, NotFeasibleReference, UnsupportedDynamics
from .model import Problem, TimeGrid, control_values, feasibility_residuals
from .penalty import PenaltyConfig, breakdown_from_states
from .simulate import LinearizationAlongTrajectory, control_norm, rollout_tape, running_cost, state_norm

__all__ = [
    "GramianReport",
    "ProbeReport",
    "MfcqReport",
    "ExactnessDiagnostics",
    "controllability_gramian",
    "slater_margin",
    "relative_interior_probe",
    "probe_directions",
    "mfcq_check",
    "descent_rate_estimate",
    "lipschitz_estimate",
    "lambda_star_bound",
    "point_distance",
    "write_diagnostics_json",
    "write_probe_csv",
]


# ---------------------------------------------------------------------------
# controllability
# ---------------------------------------------------------------------------


@dataclass
class GramianReport:
    W: np.ndarray
    min_eigenvalue: float
    numerical_rank: int
    controllable: bool
    rank_threshold: float

    def as_dict(self) -> dict:
        return {"W": self.W.tolist(), "min_eigenvalue": self.min_eigenvalue,
                "numerical_rank": self.numerical_rank, "controllable": self.controllable,
                "rank_threshold": self.rank_threshold}


def controllability_gramian(linearization: LinearizationAlongTrajectory, grid: TimeGrid) -> GramianReport:
    """Integrate ``W' = A W + W A^T + B B^T``, ``W(0) = 0`` with RK4.

    ``A`` and ``B`` are held at their left-node values over each interval.
    The system counts as controllable when the smallest eigenvalue of the
    symmetrised ``W(T)`` exceeds ``d * max_eig * 1e-10``.
    """
    A_seq = np.asarray(linearization.A_seq, dtype=float)
    B_seq = np.asarray(linearization.B_seq, dtype=float)
    d = A_seq.shape[1]
    h = grid.step
    W = np.zeros((d, d))
    for A, B in zip(A_seq, B_seq):
        BB = B @ B.T

        def rhs(M):
            return A @ M + M @ A.T + BB

        k1 = rhs(W)
        k2 = rhs(W + 0.5 * h * k1)
        k3 = rhs(W + 0.5 * h * k2)
        k4 = rhs(W + h * k3)
        W = W + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(W)):
            raise NonFiniteState(0, "non-finite Gramian entry")
    W = 0.5 * (W + W.T)
    eig = np.linalg.eigvalsh(W)
    thresh = d * max(float(eig[-1]), 0.0) * 1e-10
    return GramianReport(W, float(eig[0]), int(np.sum(eig > thresh)), bool(eig[0] > thresh), thresh)


# ---------------------------------------------------------------------------
# Slater
# ---------------------------------------------------------------------------


def slater_margin(problem: Problem, feasible_control, tol_feas: float = 1e-6) -> float:
    """``eta = max_{k, j} g_j(x_k, t_k)`` along the reference trajectory.

    Slater's condition holds with margin ``|eta|`` iff ``eta < 0``.

    Raises
    ------
    NotFeasibleReference
        If the reference violates the terminal constraint by more than ``tol_feas``.
    """
    U = control_values(feasible_control)
    X = rollout_tape(problem, U).states
    res = feasibility_residuals(problem, X, U)
    if res.terminal_residual > tol_feas:
        raise NotFeasibleReference(f"terminal residual {res.terminal_residual!r} exceeds {tol_feas!r}")
    cons = problem.constraints
    ts = problem.grid.nodes
    vals = [np.max(fn.value(X, ts)) for fn in cons.state_inequalities]
    if not vals:
        return float("-inf")
    return float(max(vals))


# ---------------------------------------------------------------------------
# reachable set
# ---------------------------------------------------------------------------


@dataclass
class ProbeReport:
    verdict: str
    directions: np.ndarray
    gaps: np.ndarray
    flat: np.ndarray
    flat_tolerance: float

    def as_dict(self) -> dict:
        return {"verdict": self.verdict, "flat_tolerance": self.flat_tolerance,
                "directions": self.directions.tolist(), "gaps": self.gaps.tolist(),
                "flat": self.flat.tolist()}


def probe_directions(d: int, count: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Unit directions: evenly spaced angles for ``d = 2``, otherwise
    coordinate axes (both signs) plus seeded Gaussian directions."""
    if count is None:
        count = 64 if d <= 3 else 512
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    axes = np.vstack([np.eye(d), -np.eye(d)])
    rest = max(count - axes.shape[0], 0)
    rnd = np.random.default_rng(seed).normal(size=(rest, d))
    rnd /= np.linalg.norm(rnd, axis=1, keepdims=True)
    return np.vstack([axes, rnd])


def _support_values(problem: Problem, D: np.ndarray) -> np.ndarray:
    """Support function of the discrete reachable set in each row direction of ``D``."""
    maps = problem.rk4_affine_maps
    P, Q, r = maps
    n = problem.grid.interval_count
    ctl = problem.controls
    psi = D.copy()
    total = np.zeros(D.shape[0])
    for k in range(n - 1, -1, -1):
        total += psi @ r[k]
        total += ctl.support(psi @ Q[k])
        psi = psi @ P[k]
    return total + psi @ problem.x0


def relative_interior_probe(problem: Problem, x_T=None, direction_count: Optional[int] = None,
                            flat_tolerance: Optional[float] = None, seed: int = 0) -> ProbeReport:
    """Locate ``x_T`` relative to the reachable set of a linear/affine system.

    For each unit direction ``d`` the support value ``sigma(d)`` of the
    discrete reachable set is computed with one backward adjoint sweep, and
    ``gap(d) = sigma(d) - <d, x_T>``.  Directions whose opposite supports
    cancel (``sigma(d) + sigma(-d) <= tol``) are normals of the affine hull.

    Verdicts: ``outside`` if some gap is below ``-tol``; ``boundary`` if a
    non-flat gap is within ``tol``; ``relative_interior`` if flat directions
    exist and every other gap exceeds ``tol``; ``interior`` otherwise.
    """
    if problem.dynamics.kind not in ("linear", "affine"):
        raise UnsupportedDynamics(f"dynamics {problem.dynamics.name!r} is not linear")
    if not problem.controls.is_pointwise:
        raise MissingSupportOracle(f"control set {problem.controls.variant!r} is not pointwise")
    if x_T is None:
        if problem.constraints.target is None:
            raise ValueError("no target point given")
        x_T = problem.constraints.target
    x_T = np.asarray(x_T, dtype=float)
    tol = 1e-8 * (1.0 + float(np.linalg.norm(x_T))) if flat_tolerance is None else float(flat_tolerance)
    D = probe_directions(problem.state_dim, direction_count, seed)
    sig_p = _support_values(problem, D)
    sig_m = _support_values(problem, -D)
    with np.errstate(invalid="ignore"):
        gaps = sig_p - D @ x_T
        width = sig_p + sig_m
    flat = width <= tol
    if np.any(gaps < -tol):
        verdict = "outside"
    elif np.any(~flat & (gaps <= tol)):
        verdict = "boundary"
    elif np.any(flat):
        verdict = "relative_interior"
    else:
        verdict = "interior"
    return ProbeReport(verdict, D, gaps, flat, tol)


# ---------------------------------------------------------------------------
# MFCQ
# ---------------------------------------------------------------------------


@dataclass
class MfcqReport:
    holds: bool
    direction: Optional[np.ndarray]
    margin: float
    reason: str = ""

    def as_dict(self) -> dict:
        return {"holds": self.holds, "margin": self.margin, "reason": self.reason,
                "direction": None if self.direction is None else self.direction.tolist()}


def mfcq_check(inequalities: Sequence, equalities: Sequence, point, active_tolerance: float = 1e-6,
               t: float = 0.0, starts: int = 32, seed: int = 0, iterations: int = 400) -> MfcqReport:
    """Search for a direction certifying MFCQ at ``point``.

    Equality gradients must be linearly independent (SVD rank test).  On
    their null space, ``max_i <grad g_i, h>`` over the active inequalities
    is minimised on the unit ball by projected descent on a log-sum-exp
    smoothing, from ``starts`` seeded initial directions.  MFCQ holds when
    the best exact value is below ``-1e-8``.
    """
    x = np.asarray(point, dtype=float)
    d = x.size
    E = np.array([fn.gradient(x, t) for fn in equalities]).reshape(-1, d)
    if E.shape[0]:
        s = np.linalg.svd(E, compute_uv=False)
        if s.size < E.shape[0] or s[-1] <= max(E.shape) * np.finfo(float).eps * max(s[0], 1.0) * 1e3:
            return MfcqReport(False, None, float("nan"), "equality gradients are linearly dependent")
        _, _, Vt = np.linalg.svd(E)
        N = Vt[E.shape[0]:].T
    else:
        N = np.eye(d)
    G = np.array([fn.gradient(x, t) for fn in inequalities if fn(x, t) >= -active_tolerance]).reshape(-1, d)
    if G.shape[0] == 0:
        if N.shape[1] == 0:
            return MfcqReport(True, np.zeros(d), float("-inf"), "no active inequalities")
        return MfcqReport(True, N[:, 0].copy(), float("-inf"), "no active inequalities")
    if N.shape[1] == 0:
        return MfcqReport(False, None, 0.0, "equality null space is trivial")
    M = G @ N  # active gradients in null-space coordinates
    scale = max(float(np.max(np.linalg.norm(M, axis=1))), 1e-300)
    rng = np.random.default_rng(seed)
    best_val, best_z = np.inf, None
    for _ in range(starts):
        z = rng.normal(size=N.shape[1])
        z /= np.linalg.norm(z)
        for it in range(iterations):
            tau = scale * max(1e-3 * (0.98 ** it), 1e-9)
            v = M @ z
            w = np.exp((v - v.max()) / tau)
            w /= w.sum()
            z = z - (0.1 / scale) * (w @ M)
            nz = np.linalg.norm(z)
            if nz > 1.0:
                z /= nz
        val = float(np.max(M @ z))
        if val < best_val:
            best_val, best_z = val, z
    h = N @ best_z
    return MfcqReport(bool(best_val < -1e-8), h if best_val < -1e-8 else None, best_val)


# ---------------------------------------------------------------------------
# descent rate and Lipschitz estimates
# ---------------------------------------------------------------------------


def point_distance(problem: Problem, Xa, Ua, Xb, Ub, metric: str = "full", p: float = 2.0,
                   q: float = 2.0) -> float:
    """Discrete distance between two trajectory-control pairs.

    ``"control"``: ``||u_a - u_b||_q``.  ``"state"``: ``||x_a - x_b||_p +
    |x_a(T) - x_b(T)|``.  ``"full"``: ``||dx||_p + ||d(x')||_p +
    ||du||_q`` with ``x'`` taken as node difference quotients.
    """
    grid = problem.grid
    du = control_norm(np.asarray(Ua) - np.asarray(Ub), grid, q)
    if metric == "control":
        return du
    dX = np.asarray(Xa) - np.asarray(Xb)
    if metric == "state":
        return state_norm(dX, grid, p) + float(np.linalg.norm(dX[-1]))
    if metric == "full":
        dV = np.diff(dX, axis=0) / grid.step
        return state_norm(dX, grid, p) + control_norm(dV, grid, p) + du
    raise ValueError(f"unknown metric {metric!r}")


def _phi(problem, config, X, U) -> float:
    return breakdown_from_states(problem, config, X, U).phi


def descent_rate_estimate(problem: Problem, config: PenaltyConfig, points: Sequence,
                          reference, alpha: float = 1e-3, metric: str = "full",
                          p: float = 2.0, q: float = 2.0, tol_feas: float = 1e-6,
                          return_rates: bool = False):
    """Empirical uniform rate ``a`` with which ``phi`` can be decreased.

    For each infeasible control ``u`` with feasible reference ``u_hat``
    (a fixed control, or ``reference(u, X)`` for a point-dependent one) the
    direction ``(u_hat - u) / sigma``, ``sigma`` the distance between the two
    points, is realised by rolling out ``u + alpha (u_hat - u) / sigma``.  The
    one-sided slope of ``phi`` is extrapolated from steps ``alpha`` and
    ``alpha / 2``.  Returns ``a = -max(slope)``; a positive value supports
    the descent hypothesis.

    Raises
    ------
    NotFeasibleReference
        If a reference control is not feasible within ``tol_feas``.
    """
    rates = []
    fixed = None if callable(reference) else control_values(reference)
    for u in points:
        U = control_values(u)
        X = rollout_tape(problem, U).states
        phi0 = _phi(problem, config, X, U)
        if phi0 <= tol_feas:
            continue
        Uh = control_values(reference(U, X)) if fixed is None else fixed
        Xh = rollout_tape(problem, Uh).states
        if not feasibility_residuals(problem, Xh, Uh).feasible(tol_feas):
            raise NotFeasibleReference("descent reference is not feasible")
        sigma = point_distance(problem, X, U, Xh, Uh, metric, p, q)
        if sigma <= 0:
            continue
        step = min(alpha, sigma)

        def slope(s):
            Us = U + (s / sigma) * (Uh - U)
            Xs = rollout_tape(problem, Us).states
            return (_phi(problem, config, Xs, Us) - phi0) / s

        rates.append(2.0 * slope(0.5 * step) - slope(step))
    if not rates:
        raise ValueError("no infeasible sample points")
    a = -float(np.max(rates))
    return (a, np.array(rates)) if return_rates else a


def lipschitz_estimate(problem: Problem, samples: Sequence, pair_count: Optional[int] = None,
                       metric: str = "full", p: float = 2.0, q: float = 2.0, seed: int = 0) -> float:
    """Largest sampled ratio ``|I(a) - I(b)| / dist(a, b)``; a lower estimate of the Lipschitz constant."""
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    data = []
    for u in samples:
        U = control_values(u)
        X = rollout_tape(problem, U).states
        data.append((X, U, running_cost(problem, X, U)))
    n = len(data)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if pair_count is not None and pair_count < len(pairs):
        idx = np.random.default_rng(seed).choice(len(pairs), size=pair_count, replace=False)
        pairs = [pairs[i] for i in sorted(idx)]
    best = 0.0
    for i, j in pairs:
        Xa, Ua, Ia = data[i]
        Xb, Ub, Ib = data[j]
        dist = point_distance(problem, Xa, Ua, Xb, Ub, metric, p, q)
        if dist > 0:
            best = max(best, abs(Ia - Ib) / dist)
    return best


def lambda_star_bound(L: float, a: float) -> float:
    """Upper bound ``L / a`` on the local exactness threshold."""
    if not a > 0:
        raise NonPositiveRate(f"descent rate must be positive, got {a!r}")
    return float(L) / float(a)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class ExactnessDiagnostics:
    slater_margin: Optional[float] = None
    gramian: Optional[GramianReport] = None
    relative_interior: Optional[ProbeReport] = None
    mfcq: Optional[MfcqReport] = None
    descent_rate: Optional[float] = None
    lipschitz_estimate: Optional[float] = None
    lambda_star_bound: Optional[float] = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        def conv(v):
            return v.as_dict() if hasattr(v, "as_dict") else v
        return {
            "slater_margin": self.slater_margin,
            "gramian": conv(self.gramian),
            "relative_interior": conv(self.relative_interior),
            "mfcq": conv(self.mfcq),
            "descent_rate": self.descent_rate,
            "lipschitz_estimate": self.lipschitz_estimate,
            "lambda_star_bound": self.lambda_star_bound,
            "notes": list(self.notes),
        }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (np.floating,)):
        return _json_safe(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_diagnostics_json(path, diagnostics: ExactnessDiagnostics) -> None:
    """JSON mirror of the report; non-finite floats are written as strings (``"inf"``, ``"nan"``)."""
    with open(path, "w") as fh:
        json.dump(_json_safe(diagnostics.as_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_probe_csv(path, report: ProbeReport) -> None:
    """Columns ``d_1..d_n, gap, flat``."""
    d = report.directions.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"d_{i + 1}" for i in range(d)] + ["gap", "flat"])
        for dirn, gap, fl in zip(report.directions, report.gaps, report.flat):
            w.writerow([repr(float(v)) for v in dirn] + [repr(float(gap)), str(bool(fl)).lower()])
