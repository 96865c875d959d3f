"""Penalty terms and the penalised objective ``Phi = I + lam * phi``.

``phi`` is a sum of up to three terms: the Euclidean distance of the final
state to a fixed target, the hinge/absolute endpoint penalty for variable
endpoints, and a state-constraint penalty measured either in the sup norm
over grid nodes or in a trapezoid ``L^p`` norm.

The exact penalties are nonsmooth.  For gradient-based minimisation each is
replaced by a smooth upper bound controlled by ``eps``:

* ``|v|``          -> ``sqrt(|v|^2 + eps^2)``
* ``max(a, 0)``    -> ``(a + sqrt(a^2 + eps^2)) / 2``
* ``max`` of ``K`` values -> log-sum-exp at temperature ``eps / log K``

so that ``0 <= Phi_eps - Phi <= lam * eps * smoothing_term_count``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import (ConstraintSpec, Problem, TimeGrid, Trajectory, control_values,
                    endpoint_violation, state_violation_nodes)
from .simulate import adjoint_sweep, rollout_tape, running_cost, running_cost_partials

__all__ = [
    "PenaltyConfig",
    "PenaltyBreakdown",
    "terminal_penalty",
    "endpoint_penalty",
    "state_penalty_sup",
    "state_penalty_lp",
    "penalized_objective",
    "smoothed_objective",
    "smoothed_gradient",
    "smoothing_term_count",
]

TERMINAL_MODES = ("none", "euclidean")
ENDPOINT_MODES = ("none", "sum_hinge_plus_abs")
STATE_MODES = ("none", "sup", "lp")


@dataclass(frozen=True)
class PenaltyConfig:
    """Which constraints are penalised, and how.

    Parameters
    ----------
    terminal_mode : {"none", "euclidean"}
    endpoint_mode : {"none", "sum_hinge_plus_abs"}
    state_mode : {"none", "sup", "lp"}
    p : float
        Exponent of the ``L^p`` state penalty, ``1 < p < inf``.
    lam : float
        Penalty parameter, ``lam >= 0``.
    eps : float
        Smoothing parameter used only by the smoothed objective/gradient.
    """

    terminal_mode: str = "none"
    endpoint_mode: str = "none"
    state_mode: str = "none"
    p: float = 2.0
    lam: float = 1.0
    eps: float = 1e-3

    def __post_init__(self):
        if self.terminal_mode not in TERMINAL_MODES:
            raise ValueError(f"unknown terminal mode {self.terminal_mode!r}")
        if self.endpoint_mode not in ENDPOINT_MODES:
            raise ValueError(f"unknown endpoint mode {self.endpoint_mode!r}")
        if self.state_mode not in STATE_MODES:
            raise ValueError(f"unknown state mode {self.state_mode!r}")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.state_mode == "lp" and not (1.0 < self.p < np.inf):
            raise ValueError("p must lie in (1, inf)")

    @classmethod
    def for_problem(cls, problem: Problem, lam: float = 1.0, state_mode: str = "sup",
                    p: float = 2.0, eps: float = 1e-3) -> "PenaltyConfig":
        """Penalise every constraint the problem declares."""
        cons = problem.constraints
        return cls(
            terminal_mode="euclidean" if cons.terminal == "fixed" else "none",
            endpoint_mode="sum_hinge_plus_abs" if cons.terminal == "variable" else "none",
            state_mode=state_mode if cons.has_state_constraints else "none",
            p=p, lam=lam, eps=eps)

    def with_lambda(self, lam: float) -> "PenaltyConfig":
        return replace(self, lam=float(lam))

    def with_eps(self, eps: float) -> "PenaltyConfig":
        return replace(self, eps=float(eps))

    @property
    def any_active(self) -> bool:
        return (self.terminal_mode != "none" or self.endpoint_mode != "none"
                or self.state_mode != "none")


@dataclass(frozen=True)
class PenaltyBreakdown:
    cost: float
    phi_T: float
    phi_E: float
    phi_S: float
    lam: float
    total: float

    @property
    def phi(self) -> float:
        return self.phi_T + self.phi_E + self.phi_S

    def as_dict(self) -> dict:
        return {"I": self.cost, "phi_T": self.phi_T, "phi_E": self.phi_E,
                "phi_S": self.phi_S, "lambda": self.lam, "Phi": self.total}


def _states(trajectory) -> np.ndarray:
    if isinstance(trajectory, Trajectory):
        return trajectory.states
    return np.atleast_2d(np.asarray(trajectory, dtype=float))


# ---------------------------------------------------------------------------
# exact penalties
# ---------------------------------------------------------------------------


def terminal_penalty(trajectory, x_T) -> float:
    """``|x_N - x_T|``."""
    return float(np.linalg.norm(_states(trajectory)[-1] - np.asarray(x_T, dtype=float)))


def endpoint_penalty(trajectory, constraints: ConstraintSpec, horizon: float = 0.0) -> float:
    """``sum_i max(g_i(x_N), 0) + sum_k |g_k(x_N)|``; functions are evaluated at ``t = horizon``."""
    return float(endpoint_violation(constraints, _states(trajectory)[-1], horizon))


def state_penalty_sup(trajectory, constraints: ConstraintSpec, grid: TimeGrid) -> float:
    """Largest node violation ``max_k max(0, g_j(x_k, t_k), |g(x_k, t_k)|)``."""
    return float(np.max(state_violation_nodes(constraints, _states(trajectory), grid.nodes)))


def state_penalty_lp(trajectory, constraints: ConstraintSpec, grid: TimeGrid, p: float = 2.0) -> float:
    """Trapezoid ``L^p`` norm of the node violation."""
    v = state_violation_nodes(constraints, _states(trajectory), grid.nodes)
    return float(np.sum(grid.trapezoid_weights * v ** p) ** (1.0 / p))


def penalized_objective(problem: Problem, config: PenaltyConfig, control) -> PenaltyBreakdown:
    """Roll out ``control`` and assemble ``I``, the active ``phi`` terms and ``Phi``."""
    X = rollout_tape(problem, control).states
    return breakdown_from_states(problem, config, X, control_values(control))


def breakdown_from_states(problem: Problem, config: PenaltyConfig, X, U) -> PenaltyBreakdown:
    cons = problem.constraints
    grid = problem.grid
    cost = running_cost(problem, X, U)
    phi_T = terminal_penalty(X, cons.target) if config.terminal_mode == "euclidean" else 0.0
    phi_E = (endpoint_penalty(X, cons, grid.horizon)
             if config.endpoint_mode != "none" else 0.0)
    phi_S = 0.0
    if config.state_mode == "sup":
        phi_S = state_penalty_sup(X, cons, grid)
    elif config.state_mode == "lp":
        phi_S = state_penalty_lp(X, cons, grid, config.p)
    total = cost + config.lam * (phi_T + phi_E + phi_S)
    return PenaltyBreakdown(cost, phi_T, phi_E, phi_S, config.lam, total)


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------


# With eps = 0 these return the exact values and a subgradient.


def _soft_abs(v, eps):
    r = np.sqrt(v * v + eps * eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        return r, np.where(r > 0, v / np.where(r > 0, r, 1.0), 0.0)


def _soft_hinge(a, eps):
    r, dr = _soft_abs(a, eps)
    return 0.5 * (a + r), 0.5 * (1.0 + dr)


def _lse(values: np.ndarray, tau: float, axis=None):
    """``tau * log sum exp(values / tau)`` and its softmax weights (argmax for ``tau = 0``)."""
    m = np.max(values, axis=axis, keepdims=True)
    if tau == 0.0:
        w = (values == m).astype(float)
        w /= np.sum(w, axis=axis, keepdims=True)
        val = m if axis is None else np.squeeze(m, axis=axis)
        return (float(val.reshape(())) if axis is None else val), w
    e = np.exp((values - m) / tau)
    s = np.sum(e, axis=axis, keepdims=True)
    val = m + tau * np.log(s)
    w = e / s
    if axis is None:
        return float(val.reshape(())), w
    return np.squeeze(val, axis=axis), w


def _state_values(cons: ConstraintSpec, X, ts):
    G = [fn.value(X, ts) for fn in cons.state_inequalities]
    dG = [fn.grad(X, ts) for fn in cons.state_inequalities]
    if cons.state_equality is not None:
        return G, dG, cons.state_equality.value(X, ts), cons.state_equality.grad(X, ts)
    return G, dG, None, None


def _node_violation_smoothed(cons, X, ts, eps):
    """Smoothed per-node violation ``psi_k`` and its gradient ``(N, d)``."""
    G, dG, geq, dgeq = _state_values(cons, X, ts)
    if len(G) == 1 and geq is None:
        psi, dpsi = _soft_hinge(G[0], eps)
        return psi, dpsi[:, None] * dG[0]
    if not G and geq is not None:
        psi, dpsi = _soft_abs(geq, eps)
        return psi, dpsi[:, None] * dgeq
    cands = [np.zeros(X.shape[0])] + list(G)
    grads = [np.zeros_like(X)] + list(dG)
    if geq is not None:
        a, da = _soft_abs(geq, eps)
        cands.append(a)
        grads.append(da[:, None] * dgeq)
    C = np.stack(cands, axis=1)
    tau = eps / np.log(C.shape[1]) if C.shape[1] > 1 else 0.0
    psi, w = _lse(C, tau, axis=1)
    dpsi = np.einsum("kc,ckd->kd", w, np.stack(grads))
    return psi, dpsi


def smoothing_term_count(problem: Problem, config: PenaltyConfig) -> int:
    """Number of ``eps`` units bounding ``(Phi_eps - Phi) / lam``."""
    cons = problem.constraints
    n = 0
    if config.terminal_mode == "euclidean":
        n += 1
    if config.endpoint_mode != "none":
        n += len(cons.endpoint_inequalities) + len(cons.endpoint_equalities)
    eq = cons.state_equality is not None
    several = len(cons.state_inequalities) + int(eq) > 1
    if config.state_mode == "sup":
        n += 1 + int(eq)
    elif config.state_mode == "lp":
        n += 3 if (several or eq) else 2
    return n


def _smoothed_phi(problem: Problem, config: PenaltyConfig, X, eps: float):
    """Smoothed ``phi`` (without ``lam``) and its gradient in the node states."""
    cons = problem.constraints
    grid = problem.grid
    gX = np.zeros_like(X)
    val = 0.0
    xN = X[-1]
    T = grid.horizon
    if config.terminal_mode == "euclidean":
        r = xN - cons.target
        s = float(np.sqrt(r @ r + eps * eps))
        val += s
        if s > 0:
            gX[-1] += r / s
    if config.endpoint_mode != "none":
        for fn in cons.endpoint_inequalities:
            v, dv = _soft_hinge(fn(xN, T), eps)
            val += v
            gX[-1] += dv * fn.gradient(xN, T)
        for fn in cons.endpoint_equalities:
            v, dv = _soft_abs(fn(xN, T), eps)
            val += v
            gX[-1] += dv * fn.gradient(xN, T)
    if config.state_mode == "sup":
        G, dG, geq, dgeq = _state_values(cons, X, grid.nodes)
        cands = [np.zeros(1)] + list(G)
        grads = list(dG)
        if geq is not None:
            a, da = _soft_abs(geq, eps)
            cands.append(a)
            grads.append(da[:, None] * dgeq)
        flat = np.concatenate(cands)
        tau = eps / np.log(flat.size) if flat.size > 1 else 0.0
        v, w = _lse(flat, tau)
        val += v
        w = w[1:].reshape(len(grads), X.shape[0])
        for j, dg in enumerate(grads):
            gX += w[j][:, None] * dg
    elif config.state_mode == "lp":
        p = config.p
        eps_in = eps / max(1.0, T) ** (1.0 / p)
        psi, dpsi = _node_violation_smoothed(cons, X, grid.nodes, eps_in)
        wts = grid.trapezoid_weights
        inner = float(np.sum(wts * psi ** p) + eps ** p)
        v = inner ** (1.0 / p)
        val += v
        coef = v ** (1.0 - p) * wts * psi ** (p - 1.0) if v > 0 else np.zeros_like(psi)
        gX += coef[:, None] * dpsi
    return val, gX


def smoothed_objective(problem: Problem, config: PenaltyConfig, control, with_gradient: bool = True,
                       eps: float | None = None):
    """Smoothed ``Phi_eps`` and optionally its gradient in the control values.

    ``eps`` overrides ``config.eps``; ``eps = 0`` gives the exact objective
    with a subgradient-style derivative (kinks resolved by choosing zero
    slope for ``|0|`` and an averaged argmax for maxima).

    Returns
    -------
    value : float
    gradient : ndarray of shape ``(N-1, m)`` or None
    breakdown : PenaltyBreakdown
        Exact (unsmoothed) values at the same control, computed from the
        same rollout.
    """
    tape = rollout_tape(problem, control)
    X, U = tape.states, tape.controls
    exact = breakdown_from_states(problem, config, X, U)
    phi_s, gphi = _smoothed_phi(problem, config, X, config.eps if eps is None else eps)
    value = exact.cost + config.lam * phi_s
    if not with_gradient:
        return value, None, exact
    gX, gU = running_cost_partials(problem, X, U)
    gX = gX + config.lam * gphi
    return value, adjoint_sweep(problem, tape, gX, gU), exact


def smoothed_gradient(problem: Problem, config: PenaltyConfig, control) -> np.ndarray:
    """Gradient of the smoothed ``Phi`` with respect to every control value (one adjoint sweep)."""
    return smoothed_objective(problem, config, control)[1]
