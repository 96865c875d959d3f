"""Forward rollout, linearisation, cost quadrature and discrete adjoints.

The rollout is classical RK4 with the interval's constant control.  For
linear and affine dynamics the one-step map is affine in ``(x_k, u_k)`` and
is precomputed once per problem (see :attr:`Problem.rk4_affine_maps`);
otherwise the four stages are evaluated explicitly and kept for the
backward sweep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingJacobian, NonFiniteState
from .model import ControlSignal, Problem, TimeGrid, Trajectory, control_values

__all__ = [
    "LinearizationAlongTrajectory",
    "RolloutTape",
    "rollout",
    "rollout_tape",
    "linearize",
    "running_cost",
    "running_cost_partials",
    "control_norm",
    "state_norm",
    "adjoint_sweep",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class LinearizationAlongTrajectory:
    """Jacobians of ``f`` sampled at the left node of each interval."""

    A_seq: np.ndarray  # (N-1, d, d)
    B_seq: np.ndarray  # (N-1, d, m)


@dataclass
class RolloutTape:
    """States plus whatever the backward sweep needs (stage points for nonlinear f)."""

    states: np.ndarray
    controls: np.ndarray
    stage_states: Optional[np.ndarray] = None  # (N-1, 4, d) points where f was evaluated


def _check_finite(states: np.ndarray) -> None:
    bad = ~np.all(np.isfinite(states), axis=1)
    if np.any(bad):
        raise NonFiniteState(int(np.argmax(bad)))


def rollout_tape(problem: Problem, control) -> RolloutTape:
    U = np.asarray(control_values(control), dtype=float)
    grid = problem.grid
    n = grid.interval_count
    if U.shape != (n, problem.control_dim):
        raise ValueError(
            f"control shape {U.shape} does not match ({n}, {problem.control_dim})")
    d = problem.state_dim
    X = np.empty((n + 1, d))
    X[0] = problem.x0
    maps = problem.rk4_affine_maps
    if maps is not None:
        P, Q, r = maps
        drive = np.einsum("kij,kj->ki", Q, U) + r
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n):
                X[k + 1] = P[k] @ X[k] + drive[k]
        _check_finite(X)
        return RolloutTape(X, U)

    f = problem.dynamics.f
    h = grid.step
    ts = grid.nodes
    S = np.empty((n, 4, d))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            x, u, t = X[k], U[k], ts[k]
            S[k, 0] = x
            k1 = f(x, u, t)
            S[k, 1] = x2 = x + 0.5 * h * k1
            k2 = f(x2, u, t + 0.5 * h)
            S[k, 2] = x3 = x + 0.5 * h * k2
            k3 = f(x3, u, t + 0.5 * h)
            S[k, 3] = x4 = x + h * k3
            k4 = f(x4, u, ts[k + 1])
            X[k + 1] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(X[k + 1])):
                raise NonFiniteState(k + 1)
    return RolloutTape(X, U, S)


def rollout(problem: Problem, control) -> Trajectory:
    """Integrate the dynamics from ``x0`` with RK4 under a piecewise-constant control.

    Raises
    ------
    NonFiniteState
        If a state entry overflows; ``node`` is the first bad grid index.
    """
    return Trajectory(rollout_tape(problem, control).states)


def adjoint_sweep(problem: Problem, tape: RolloutTape, gX: np.ndarray, gU: np.ndarray) -> np.ndarray:
    """Total derivative with respect to the controls.

    Given partial derivatives ``gX`` (``(N, d)``) of a scalar function of the
    node states and ``gU`` (``(N-1, m)``) of its explicit control
    dependence, return ``dF/dU`` for ``F`` composed with the RK4 rollout.
    """
    n = problem.grid.interval_count
    out = np.array(gU, dtype=float, copy=True)
    lam = np.array(gX[-1], dtype=float)
    maps = problem.rk4_affine_maps
    if maps is not None:
        P, Q, _ = maps
        for k in range(n - 1, -1, -1):
            out[k] += Q[k].T @ lam
            lam = P[k].T @ lam + gX[k]
        return out

    P, Q = _rk4_step_jacobians(problem, tape)
    for k in range(n - 1, -1, -1):
        out[k] += Q[k].T @ lam
        lam = P[k].T @ lam + gX[k]
    return out


def _rk4_step_jacobians(problem: Problem, tape: RolloutTape):
    """``dx_{k+1}/dx_k`` and ``dx_{k+1}/du_k`` from the stage Jacobians, all intervals at once."""
    dyn = problem.dynamics
    if not dyn.has_jacobians and dyn.jac_batch is None:
        raise MissingJacobian(f"dynamics {dyn.name!r} has no Jacobian evaluators")
    h = problem.grid.step
    ts = problem.grid.nodes
    S = tape.stage_states
    n, _, d = S.shape
    U = tape.controls
    m = U.shape[1]
    stage_t = np.stack([ts[:-1], ts[:-1] + 0.5 * h, ts[:-1] + 0.5 * h, ts[1:]], axis=1)
    Jx, Ju = dyn.jacobians_at(S.reshape(n * 4, d), np.repeat(U, 4, axis=0), stage_t.reshape(-1))
    Jx = np.asarray(Jx, dtype=float).reshape(n, 4, d, d)
    Ju = np.asarray(Ju, dtype=float).reshape(n, 4, d, m)
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    mm = np.matmul
    # stage derivatives: K_i = Jx_i (dz_i) + Ju_i, z_i the stage point
    Kx = [Jx[:, 0]]
    Ku = [Ju[:, 0]]
    for i, c in ((1, 0.5 * h), (2, 0.5 * h), (3, h)):
        Kx.append(mm(Jx[:, i], eye + c * Kx[-1]))
        Ku.append(Ju[:, i] + c * mm(Jx[:, i], Ku[-1]))
    P = eye + (h / 6.0) * (Kx[0] + 2.0 * Kx[1] + 2.0 * Kx[2] + Kx[3])
    Q = (h / 6.0) * (Ku[0] + 2.0 * Ku[1] + 2.0 * Ku[2] + Ku[3])
    return P, Q


def linearize(problem: Problem, trajectory, control) -> LinearizationAlongTrajectory:
    """Left-node Jacobians ``A_k = df/dx(x_k, u_k, t_k)``, ``B_k = df/du(...)``."""
    dyn = problem.dynamics
    if not dyn.has_jacobians:
        raise MissingJacobian(f"dynamics {dyn.name!r} has no Jacobian evaluators")
    X = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    U = control_values(control)
    ts = problem.grid.nodes
    n = problem.grid.interval_count
    A = np.stack([np.asarray(dyn.jac_x(X[k], U[k], ts[k]), dtype=float) for k in range(n)])
    B = np.stack([np.asarray(dyn.jac_u(X[k], U[k], ts[k]), dtype=float) for k in range(n)])
    return LinearizationAlongTrajectory(A, B)


def _midpoint_data(problem: Problem, X, U):
    g = problem.grid
    Xm = 0.5 * (X[:-1] + X[1:])
    tm = g.nodes[:-1] + 0.5 * g.step
    return Xm, tm


def running_cost(problem: Problem, trajectory, control) -> float:
    """Midpoint-rule ``sum_k h theta(xbar_k, u_k, t_k + h/2)`` plus ``zeta(x_N)``."""
    X = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    U = control_values(control)
    cost = problem.cost
    Xm, tm = _midpoint_data(problem, X, U)
    val = float(problem.grid.step * np.sum(cost.theta(Xm, U, tm)))
    if cost.zeta is not None:
        val += cost.zeta(X[-1])
    return val


def running_cost_partials(problem: Problem, X, U):
    """Partial derivatives of :func:`running_cost` in node states and controls."""
    cost = problem.cost
    h = problem.grid.step
    Xm, tm = _midpoint_data(problem, X, U)
    gm = h * cost.grad_x(Xm, U, tm)
    gX = np.zeros_like(X)
    gX[:-1] += 0.5 * gm
    gX[1:] += 0.5 * gm
    if cost.grad_zeta is not None:
        gX[-1] += cost.grad_zeta(X[-1])
    gU = h * cost.grad_u(Xm, U, tm)
    return gX, gU


def control_norm(control, grid: TimeGrid, q: float = 2.0) -> float:
    """Discrete ``L^q`` norm ``(sum_k h |u_k|^q)^(1/q)``; ``q = inf`` gives ``max_k |u_k|``."""
    mags = np.linalg.norm(control_values(control), axis=1)
    if np.isinf(q):
        return float(np.max(mags, initial=0.0))
    return float((grid.step * np.sum(mags ** q)) ** (1.0 / q))


def state_norm(states, grid: TimeGrid, p: float = 2.0) -> float:
    """Trapezoid ``L^p`` norm of node-sampled states; ``p = inf`` gives the node sup."""
    mags = np.linalg.norm(np.atleast_2d(states), axis=1)
    if np.isinf(p):
        return float(np.max(mags))
    return float(np.sum(grid.trapezoid_weights * mags ** p) ** (1.0 / p))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path, problem: Problem, trajectory, control) -> None:
    """Columns ``t, x_1..x_d, u_1..u_m``; the final row has empty control cells."""
    X = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    U = control_values(control)
    d, m = X.shape[1], U.shape[1]
    ts = problem.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)] + [f"u_{j + 1}" for j in range(m)])
        for k in range(len(ts)):
            ctl = [_fmt(v) for v in U[k]] if k < len(U) else [""] * m
            w.writerow([_fmt(ts[k])] + [_fmt(v) for v in X[k]] + ctl)
