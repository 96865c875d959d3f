"""Problem data for optimal control problems on a uniform time grid.

A problem couples a time grid, an initial state, dynamics with Jacobians,
a running/terminal cost with gradients, a set of admissible controls and a
constraint specification (terminal and pointwise state constraints).
Controls are piecewise constant: ``values[k]`` acts on ``[t_k, t_{k+1})``.

Everything here is immutable after construction.  Numerical work beyond
validation lives in :mod:`exactpen.simulate` and :mod:`exactpen.penalty`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "ControlSignal",
    "Trajectory",
    "DynamicsModel",
    "CostModel",
    "ConstraintFunction",
    "AdmissibleControlSet",
    "ConstraintSpec",
    "Problem",
    "Residuals",
    "make_dynamics",
    "make_cost",
    "make_constraint",
    "linear_dynamics",
    "quadratic_cost",
    "affine_constraint",
    "quadratic_constraint",
    "validate",
    "feasibility_residuals",
    "control_values",
]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# grid and signals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k h`` on ``[0, horizon]`` with ``node_count`` nodes."""

    horizon: float
    node_count: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be a positive finite number")
        if int(self.node_count) != self.node_count or self.node_count < 2:
            raise ValueError("node_count must be an integer >= 2")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "node_count", int(self.node_count))

    @property
    def step(self) -> float:
        return self.horizon / (self.node_count - 1)

    @property
    def interval_count(self) -> int:
        return self.node_count - 1

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.node_count) * self.step
        t[-1] = self.horizon
        t.setflags(write=False)
        return t

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.node_count, self.step)
        w[0] = w[-1] = 0.5 * self.step
        w.setflags(write=False)
        return w


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: ``values`` has shape ``(N-1, m)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("control values must have shape (N-1, m)")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def control_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "ControlSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (grid.interval_count, 1)))


@dataclass(frozen=True)
class Trajectory:
    """States at the grid nodes: ``states`` has shape ``(N, d)``."""

    states: np.ndarray

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def control_values(control) -> np.ndarray:
    """Return a float ``(N-1, m)`` array from a ControlSignal or array-like."""
    if isinstance(control, ControlSignal):
        return control.values
    v = np.asarray(control, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Right-hand side ``f(x, u, t)`` with optional Jacobians.

    ``kind`` is ``"linear"`` (``f = A(t) x + B(t) u``), ``"affine"``
    (linear plus a drift term) or ``"nonlinear"``.  For the first two,
    ``affine_terms(ts)`` returns ``(A, B, c)`` stacked over ``ts``; the
    rollout uses them to form the RK4 step maps once per grid.
    """

    name: str
    state_dim: int
    control_dim: int
    f: Callable
    jac_x: Optional[Callable] = None
    jac_u: Optional[Callable] = None
    kind: str = "nonlinear"
    params: dict = field(default_factory=dict)
    affine: Optional[Callable] = None
    jac_batch: Optional[Callable] = None

    @property
    def has_jacobians(self) -> bool:
        return self.jac_x is not None and self.jac_u is not None

    def jacobians_at(self, X, U, ts):
        """Stacked ``(K, d, d)`` and ``(K, d, m)`` Jacobians at rows of ``X``, ``U``, ``ts``."""
        if self.jac_batch is not None:
            return self.jac_batch(X, U, ts)
        Jx = np.stack([np.asarray(self.jac_x(x, u, t), dtype=float) for x, u, t in zip(X, U, ts)])
        Ju = np.stack([np.asarray(self.jac_u(x, u, t), dtype=float) for x, u, t in zip(X, U, ts)])
        return Jx, Ju

    def affine_terms(self, ts):
        if self.affine is None:
            raise TypeError(f"dynamics {self.name!r} is not affine")
        return self.affine(np.asarray(ts, dtype=float))


def _node_interp(nodes_arr: np.ndarray, horizon: float):
    """Linear interpolation of node-sampled matrices, exact at nodes."""
    count = nodes_arr.shape[0]
    step = horizon / (count - 1)

    def at(ts):
        ts = np.asarray(ts, dtype=float)
        pos = np.clip(ts / step, 0.0, count - 1)
        near = np.round(pos)
        pos = np.where(np.abs(pos - near) < 1e-9, near, pos)  # grid nodes hit stored samples exactly
        idx = np.minimum(np.floor(pos).astype(int), count - 2)
        w = (pos - idx).reshape((-1,) + (1,) * (nodes_arr.ndim - 1))
        return (1.0 - w) * nodes_arr[idx] + w * nodes_arr[idx + 1]

    return at


def linear_dynamics(A, B, grid: TimeGrid | None = None, name="linear", params=None) -> DynamicsModel:
    """``f = A(t) x + B(t) u``.

    ``A`` is ``(d, d)`` (time invariant) or ``(N, d, d)`` sampled at the
    grid nodes, likewise ``B``.  Between nodes the matrices are linearly
    interpolated.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    d = A.shape[-1]
    m = B.shape[-1]

    def sampler(M):
        if M.ndim == 2:
            Mc = _frozen(M)
            return lambda ts: np.broadcast_to(Mc, (np.size(ts),) + Mc.shape)
        if grid is None or M.shape[0] != grid.node_count:
            raise ValueError("node-sampled matrices need a grid with matching node count")
        return _node_interp(_frozen(M), grid.horizon)

    A_at, B_at = sampler(A), sampler(B)

    def f(x, u, t):
        return A_at([t])[0] @ x + B_at([t])[0] @ u

    def jx(x, u, t):
        return np.array(A_at([t])[0])

    def ju(x, u, t):
        return np.array(B_at([t])[0])

    def affine(ts):
        ts = np.atleast_1d(ts)
        return A_at(ts), B_at(ts), np.zeros((ts.size, d))

    spec = {"A": A.tolist(), "B": B.tolist()} if params is None else params
    return DynamicsModel(name, d, m, f, jx, ju, kind="linear", params=spec, affine=affine)


def _double_integrator(params, grid):
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    return linear_dynamics(A, B, name="double_integrator", params=dict(params))


def _single_integrator(params, grid):
    dim = int(params.get("dim", 1))
    return linear_dynamics(np.zeros((dim, dim)), np.eye(dim), name="single_integrator",
                           params={"dim": dim})


def _sum_integrator(params, grid):
    # x1' = 0, x2' = u1 + u2
    A = np.zeros((2, 2))
    B = np.array([[0.0, 0.0], [1.0, 1.0]])
    return linear_dynamics(A, B, name="sum_integrator", params=dict(params))


def _clock_integrator(params, grid):
    # x1' = 1, x2' = u
    A = np.zeros((2, 2))
    B = np.array([[0.0], [1.0]])
    c = np.array([1.0, 0.0])

    def f(x, u, t):
        return np.array([1.0, u[0]])

    def jx(x, u, t):
        return np.zeros((2, 2))

    def ju(x, u, t):
        return B.copy()

    def affine(ts):
        n = np.size(ts)
        return (np.zeros((n, 2, 2)), np.broadcast_to(B, (n, 2, 1)),
                np.broadcast_to(c, (n, 2)))

    return DynamicsModel("clock_integrator", 2, 1, f, jx, ju, kind="affine",
                         params=dict(params), affine=affine)


def _x_plus_u_squared(params, grid):
    # x' = a x + b u^2, scalar
    a = float(params.get("a", 1.0))
    b = float(params.get("b", 1.0))

    def f(x, u, t):
        return np.array([a * x[0] + b * u[0] * u[0]])

    def jx(x, u, t):
        return np.array([[a]])

    def ju(x, u, t):
        return np.array([[2.0 * b * u[0]]])

    def batch(X, U, ts):
        k = X.shape[0]
        return np.full((k, 1, 1), a), (2.0 * b * U).reshape(k, 1, 1)

    return DynamicsModel("x_plus_u_squared", 1, 1, f, jx, ju, params={"a": a, "b": b},
                         jac_batch=batch)


def _x_times_u(params, grid):
    # x' = c x u, scalar
    c = float(params.get("c", 1.0))

    def f(x, u, t):
        return np.array([c * x[0] * u[0]])

    def jx(x, u, t):
        return np.array([[c * u[0]]])

    def ju(x, u, t):
        return np.array([[c * x[0]]])

    def batch(X, U, ts):
        k = X.shape[0]
        return (c * U).reshape(k, 1, 1), (c * X).reshape(k, 1, 1)

    return DynamicsModel("x_times_u", 1, 1, f, jx, ju, params={"c": c}, jac_batch=batch)


DYNAMICS_REGISTRY = {
    "double_integrator": _double_integrator,
    "single_integrator": _single_integrator,
    "sum_integrator": _sum_integrator,
    "clock_integrator": _clock_integrator,
    "x_plus_u_squared": _x_plus_u_squared,
    "x_times_u": _x_times_u,
}


def make_dynamics(name: str, params: dict | None = None, grid: TimeGrid | None = None) -> DynamicsModel:
    """Build a dynamics model from the builtin registry (``"linear"`` takes ``A``, ``B``)."""
    params = dict(params or {})
    if name == "linear":
        return linear_dynamics(params["A"], params["B"], grid)
    try:
        factory = DYNAMICS_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown dynamics {name!r}") from None
    return factory(params, grid)


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CostModel:
    """Running cost ``theta(x, u, t)`` and terminal cost ``zeta(x_T)``.

    All evaluators are vectorised: ``theta(X, U, t)`` takes ``X`` of shape
    ``(K, d)``, ``U`` of shape ``(K, m)`` and ``t`` of shape ``(K,)`` and
    returns ``(K,)``; gradients return ``(K, d)`` and ``(K, m)``.
    ``zeta`` and ``grad_zeta`` act on a single state.
    """

    name: str
    theta: Callable
    grad_x: Callable
    grad_u: Callable
    zeta: Optional[Callable] = None
    grad_zeta: Optional[Callable] = None
    params: dict = field(default_factory=dict)


def quadratic_cost(d: int, m: int, Q=None, R=None, q=None, r=None, c=0.0,
                   Qf=None, qf=None, cf=0.0) -> CostModel:
    """``theta = x'Qx + u'Ru + q'x + r'u + c``, ``zeta = x'Qf x + qf'x + cf``."""
    Q = np.zeros((d, d)) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.zeros((m, m)) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    q = np.zeros(d) if q is None else np.atleast_1d(np.asarray(q, dtype=float))
    r = np.zeros(m) if r is None else np.atleast_1d(np.asarray(r, dtype=float))
    c = float(c)
    Qs, Rs = Q + Q.T, R + R.T

    def theta(X, U, t):
        return (np.einsum("ki,ij,kj->k", X, Q, X) + np.einsum("ki,ij,kj->k", U, R, U)
                + X @ q + U @ r + c)

    def gx(X, U, t):
        return X @ Qs.T + q

    def gu(X, U, t):
        return U @ Rs.T + r

    params = {"Q": Q.tolist(), "R": R.tolist(), "q": q.tolist(), "r": r.tolist(), "c": c}
    zeta = gzeta = None
    if Qf is not None or qf is not None or cf:
        Qf = np.zeros((d, d)) if Qf is None else np.atleast_2d(np.asarray(Qf, dtype=float))
        qf = np.zeros(d) if qf is None else np.atleast_1d(np.asarray(qf, dtype=float))
        cf = float(cf)
        Qfs = Qf + Qf.T

        def zeta(x):
            return float(x @ Qf @ x + qf @ x + cf)

        def gzeta(x):
            return Qfs @ x + qf

        params.update({"Qf": Qf.tolist(), "qf": qf.tolist(), "cf": cf})
    return CostModel("quadratic", theta, gx, gu, zeta, gzeta, params=params)


def make_cost(name: str, params: dict | None, d: int, m: int) -> CostModel:
    params = dict(params or {})
    if name == "zero":
        cost = quadratic_cost(d, m)
        return CostModel("zero", cost.theta, cost.grad_x, cost.grad_u, params={})
    if name == "quadratic":
        return quadratic_cost(d, m, **params)
    raise ValueError(f"unknown cost {name!r}")


# ---------------------------------------------------------------------------
# constraint functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstraintFunction:
    """Scalar ``g(x, t)`` with gradient in ``x``; vectorised over rows of ``X``."""

    name: str
    value: Callable
    grad: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x, t=0.0) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return float(self.value(x, np.full(1, float(t)))[0])

    def gradient(self, x, t=0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.grad(x, np.full(1, float(t)))[0]


def affine_constraint(a, b=0.0, c=0.0) -> ConstraintFunction:
    """``g(x, t) = a'x + b t + c``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b, c = float(b), float(c)

    def value(X, t):
        return X @ a + b * np.asarray(t) + c

    def grad(X, t):
        return np.broadcast_to(a, X.shape).copy()

    return ConstraintFunction("affine", value, grad, {"a": a.tolist(), "b": b, "c": c})


def quadratic_constraint(P, a=None, c=0.0) -> ConstraintFunction:
    """``g(x, t) = x'Px + a'x + c``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    a = np.zeros(P.shape[0]) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
    c = float(c)
    Ps = P + P.T

    def value(X, t):
        return np.einsum("ki,ij,kj->k", X, P, X) + X @ a + c

    def grad(X, t):
        return X @ Ps.T + a

    return ConstraintFunction("quadratic", value, grad, {"P": P.tolist(), "a": a.tolist(), "c": c})


CONSTRAINT_REGISTRY = {"affine": affine_constraint, "quadratic": quadratic_constraint}


def make_constraint(name: str, params: dict | None) -> ConstraintFunction:
    try:
        return CONSTRAINT_REGISTRY[name](**dict(params or {}))
    except KeyError:
        raise ValueError(f"unknown constraint function {name!r}") from None


# ---------------------------------------------------------------------------
# admissible controls
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)


def _project_parabolic_segment(P: np.ndarray) -> np.ndarray:
    """Project rows of ``P`` onto Q = {u1 + u2 <= 1, (u1 - u2)^2 <= u1 + u2}.

    In rotated coordinates s = (u1+u2)/sqrt2, w = (u1-u2)/sqrt2 the set is
    {sqrt2 w^2 <= s <= 1/sqrt2}; the nearest boundary point is either on the
    top segment or a stationary point of the distance to the parabola.
    """
    P = np.atleast_2d(P)
    s0 = (P[:, 0] + P[:, 1]) / _SQRT2
    w0 = (P[:, 0] - P[:, 1]) / _SQRT2
    a, s_max = _SQRT2, 1.0 / _SQRT2
    w_max = np.sqrt(s_max / a)
    inside = (s0 >= a * w0 * w0) & (s0 <= s_max)

    # stationary points of (w - w0)^2 + (a w^2 - s0)^2: w^3 + p w + q = 0
    p = (1.0 - 2.0 * a * s0) / (2.0 * a * a)
    q = -w0 / (2.0 * a * a)
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    roots = np.empty((P.shape[0], 3))
    one = disc >= 0
    sq = np.sqrt(np.where(one, disc, 0.0))
    single = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
    with np.errstate(invalid="ignore", divide="ignore"):
        neg_p = np.where(one, 1.0, -p)
        rad = 2.0 * np.sqrt(neg_p / 3.0)
        arg = np.clip(np.where(one, 0.0, (3.0 * q / (2.0 * p)) * np.sqrt(3.0 / neg_p)), -1.0, 1.0)
        phi = np.arccos(arg)
    for k in range(3):
        roots[:, k] = np.where(one, single, rad * np.cos(phi / 3.0 - 2.0 * np.pi * k / 3.0))
    for _ in range(2):
        der = 3.0 * roots ** 2 + p[:, None]
        val = roots ** 3 + p[:, None] * roots + q[:, None]
        safe = np.abs(der) > 1e-14
        roots = np.where(safe, roots - val / np.where(safe, der, 1.0), roots)
    roots = np.clip(roots, -w_max, w_max)

    cand_w = np.concatenate([roots, np.clip(w0, -w_max, w_max)[:, None]], axis=1)
    cand_s = np.concatenate([a * roots ** 2, np.full((P.shape[0], 1), s_max)], axis=1)
    dist = (cand_w - w0[:, None]) ** 2 + (cand_s - s0[:, None]) ** 2
    best = np.argmin(dist, axis=1)
    rows = np.arange(P.shape[0])
    w, s = cand_w[rows, best], cand_s[rows, best]
    w = np.where(inside, w0, w)
    s = np.where(inside, s0, s)
    return np.column_stack([(s + w) / _SQRT2, (s - w) / _SQRT2])


def _in_parabolic_segment(P: np.ndarray, tol: float) -> np.ndarray:
    tot = P[:, 0] + P[:, 1]
    return (tot <= 1.0 + tol) & ((P[:, 0] - P[:, 1]) ** 2 <= tot + tol)


def _project_ball(radius):
    def proj(P):
        n = np.linalg.norm(P, axis=1, keepdims=True)
        scale = np.where(n > radius, radius / np.where(n > 0, n, 1.0), 1.0)
        return P * scale

    def member(P, tol):
        return np.linalg.norm(P, axis=1) <= radius + tol

    return proj, member


POINTWISE_ORACLES = {
    "parabolic_segment": lambda params: (_project_parabolic_segment, _in_parabolic_segment),
    "ball": lambda params: _project_ball(float(params.get("radius", 1.0))),
}


@dataclass(frozen=True, eq=False)
class AdmissibleControlSet:
    """Closed convex set U of admissible controls.

    Variants: ``unconstrained``; ``pointwise_box`` (``lo <= u(t) <= hi``);
    ``global_l2_ball`` (discrete ``||u||_2 <= radius``, optionally
    intersected with ``u >= 0``); ``pointwise_convex`` (``u(t)`` in a set
    described by a projection oracle and a membership test).
    """

    variant: str = "unconstrained"
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    radius: Optional[float] = None
    nonnegative: bool = False
    oracle: Optional[str] = None
    oracle_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("unconstrained", "pointwise_box", "global_l2_ball", "pointwise_convex"):
            raise ValueError(f"unknown control set variant {self.variant!r}")
        if self.variant == "pointwise_box":
            object.__setattr__(self, "lo", _frozen(np.atleast_1d(self.lo)))
            object.__setattr__(self, "hi", _frozen(np.atleast_1d(self.hi)))
        if self.variant == "pointwise_convex" and self.oracle not in POINTWISE_ORACLES:
            raise ValueError(f"unknown pointwise oracle {self.oracle!r}")

    @classmethod
    def box(cls, lo, hi):
        return cls("pointwise_box", lo=lo, hi=hi)

    @classmethod
    def l2_ball(cls, radius, nonnegative=False):
        return cls("global_l2_ball", radius=float(radius), nonnegative=nonnegative)

    @classmethod
    def pointwise(cls, oracle, **params):
        return cls("pointwise_convex", oracle=oracle, oracle_params=params)

    @property
    def is_pointwise(self) -> bool:
        return self.variant in ("unconstrained", "pointwise_box", "pointwise_convex")

    @cached_property
    def _oracle(self):
        return POINTWISE_ORACLES[self.oracle](self.oracle_params)

    def project(self, values, grid: TimeGrid) -> np.ndarray:
        v = np.array(control_values(values), dtype=float)
        if self.variant == "pointwise_box":
            return np.clip(v, self.lo, self.hi)
        if self.variant == "global_l2_ball":
            if self.nonnegative:
                v = np.maximum(v, 0.0)
            n = np.sqrt(grid.step * np.sum(v * v))
            return v * (self.radius / n) if n > self.radius else v
        if self.variant == "pointwise_convex":
            return self._oracle[0](v)
        return v

    def contains(self, values, grid: TimeGrid, tol: float = 1e-10) -> bool:
        v = control_values(values)
        if self.variant == "pointwise_box":
            return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))
        if self.variant == "global_l2_ball":
            if self.nonnegative and np.any(v < -tol):
                return False
            return bool(np.sqrt(grid.step * np.sum(v * v)) <= self.radius + tol)
        if self.variant == "pointwise_convex":
            return bool(np.all(self._oracle[1](v, tol)))
        return True

    def distance(self, values, grid: TimeGrid) -> float:
        """Largest pointwise Euclidean distance between the control and its projection."""
        v = control_values(values)
        return float(np.max(np.linalg.norm(v - self.project(v, grid), axis=1), initial=0.0))

    def support(self, C: np.ndarray, iterations: int = 200) -> np.ndarray:
        """Pointwise support function ``sup_{v in set} <c, v>`` for each row ``c`` of ``C``."""
        from .errors import MissingSupportOracle

        C = np.atleast_2d(np.asarray(C, dtype=float))
        if self.variant == "unconstrained":
            return np.where(np.all(C == 0.0, axis=1), 0.0, np.inf)
        if self.variant == "pointwise_box":
            return np.sum(np.maximum(C * self.lo, C * self.hi), axis=1)
        if self.variant != "pointwise_convex":
            raise MissingSupportOracle(f"control set {self.variant!r} has no pointwise support function")
        project = self._oracle[0]
        norms = np.linalg.norm(C, axis=1, keepdims=True)
        unit = C / np.where(norms > 0, norms, 1.0)
        v = project(1e3 * unit)
        for _ in range(iterations):
            v = project(v + unit)
        return np.sum(C * v, axis=1)

    def spec(self) -> dict:
        if self.variant == "pointwise_box":
            return {"variant": self.variant, "params": {"lo": self.lo.tolist(), "hi": self.hi.tolist()}}
        if self.variant == "global_l2_ball":
            return {"variant": self.variant,
                    "params": {"radius": self.radius, "nonnegative": self.nonnegative}}
        if self.variant == "pointwise_convex":
            return {"variant": self.variant,
                    "params": {"oracle": self.oracle, **self.oracle_params}}
        return {"variant": "unconstrained"}


# ---------------------------------------------------------------------------
# constraints and problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Terminal constraint (free / fixed / variable endpoint) plus state constraints."""

    terminal: str = "free"
    target: Optional[np.ndarray] = None
    endpoint_inequalities: tuple = ()
    endpoint_equalities: tuple = ()
    state_inequalities: tuple = ()
    state_equality: Optional[ConstraintFunction] = None

    def __post_init__(self):
        if self.terminal not in ("free", "fixed", "variable"):
            raise ValueError(f"unknown terminal kind {self.terminal!r}")
        if self.terminal == "fixed":
            if self.target is None:
                raise ValueError("fixed terminal constraint needs a target")
            object.__setattr__(self, "target", _frozen(np.atleast_1d(self.target)))
        for name in ("endpoint_inequalities", "endpoint_equalities", "state_inequalities"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def has_state_constraints(self) -> bool:
        return bool(self.state_inequalities) or self.state_equality is not None


@dataclass(frozen=True, eq=False)
class Problem:
    grid: TimeGrid
    x0: np.ndarray
    dynamics: DynamicsModel
    cost: CostModel
    controls: AdmissibleControlSet = field(default_factory=AdmissibleControlSet)
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen(np.atleast_1d(self.x0)))

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dim(self) -> int:
        return self.dynamics.control_dim

    def zero_control(self) -> ControlSignal:
        return ControlSignal(np.zeros((self.grid.interval_count, self.control_dim)))

    @cached_property
    def rk4_affine_maps(self):
        """Per-interval RK4 maps ``x_{k+1} = P_k x_k + Q_k u_k + r_k`` for affine dynamics."""
        if self.dynamics.kind not in ("linear", "affine"):
            return None
        g = self.grid
        h = g.step
        t0 = g.nodes[:-1]
        A1, B1, c1 = (np.asarray(a) for a in self.dynamics.affine_terms(t0))
        A2, B2, c2 = (np.asarray(a) for a in self.dynamics.affine_terms(t0 + 0.5 * h))
        A4, B4, c4 = (np.asarray(a) for a in self.dynamics.affine_terms(g.nodes[1:]))
        d = self.state_dim
        eye = np.broadcast_to(np.eye(d), A1.shape)
        mm = np.matmul
        mv = lambda M, v: np.einsum("kij,kj->ki", M, v)
        # each stage k_i = Kx x + Ku u + Kc
        K1 = (A1, B1, c1)
        z2 = tuple(h / 2 * k for k in K1)
        K2 = (mm(A2, eye + z2[0]), B2 + mm(A2, z2[1]), c2 + mv(A2, z2[2]))
        z3 = tuple(h / 2 * k for k in K2)
        K3 = (mm(A2, eye + z3[0]), B2 + mm(A2, z3[1]), c2 + mv(A2, z3[2]))
        z4 = tuple(h * k for k in K3)
        K4 = (mm(A4, eye + z4[0]), B4 + mm(A4, z4[1]), c4 + mv(A4, z4[2]))
        comb = [h / 6 * (a + 2 * b + 2 * c + e) for a, b, c, e in zip(K1, K2, K3, K4)]
        P = eye + comb[0]
        return np.ascontiguousarray(P), np.ascontiguousarray(comb[1]), np.ascontiguousarray(comb[2])

    def with_grid(self, node_count: int) -> "Problem":
        """Same problem on a different uniform grid (linear node-sampled data not supported)."""
        grid = TimeGrid(self.grid.horizon, node_count)
        dyn = self.dynamics
        if dyn.name == "linear" and np.asarray(dyn.params["A"]).ndim == 3:
            raise ValueError("cannot regrid node-sampled linear dynamics")
        return Problem(grid, self.x0, dyn, self.cost, self.controls, self.constraints)


# ---------------------------------------------------------------------------
# validation and feasibility
# ---------------------------------------------------------------------------

_FD_STEP = 1e-6
_FD_RTOL = 1e-4
_FD_PROBES = 10
_FD_SEED = 20240607


def _rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def _central(fun, z, step=_FD_STEP):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = step
        cols.append((np.asarray(fun(z + e)) - np.asarray(fun(z - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def validate(problem: Problem) -> list[str]:
    """Return a list of dimensional/consistency violations (empty if valid).

    Gradient evaluators are compared against central differences (step
    1e-6) at 10 seeded uniform probes; relative error above 1e-4 is reported.
    """
    out: list[str] = []
    d, m = problem.state_dim, problem.control_dim
    g = problem.grid
    if problem.x0.shape != (d,):
        out.append("x0 dimension mismatch")
    cons = problem.constraints
    if cons.terminal == "fixed" and cons.target.shape != (d,):
        out.append("terminal target dimension mismatch")
    ctl = problem.controls
    if ctl.variant == "pointwise_box" and (ctl.lo.shape != (m,) or ctl.hi.shape != (m,)):
        out.append("control bounds dimension mismatch")
    if ctl.variant == "pointwise_box" and np.any(ctl.lo > ctl.hi):
        out.append("control bounds empty")
    if ctl.variant == "global_l2_ball" and not (ctl.radius is not None and ctl.radius >= 0):
        out.append("control ball radius invalid")
    if ctl.variant == "pointwise_convex" and ctl.oracle == "parabolic_segment" and m != 2:
        out.append("control set dimension mismatch")
    ids_i = {id(fn) for fn in cons.endpoint_inequalities}
    if any(id(fn) in ids_i for fn in cons.endpoint_equalities):
        out.append("endpoint inequality and equality index sets overlap")
    if out:
        return out

    rng = np.random.default_rng(_FD_SEED)
    dyn, cost = problem.dynamics, problem.cost
    bad_dyn = bad_cost = bad_state = bad_end = False
    shape_bad = False
    for _ in range(_FD_PROBES):
        x = rng.uniform(-1, 1, d)
        u = rng.uniform(-1, 1, m)
        t = float(rng.uniform(0, g.horizon))
        fx = np.asarray(dyn.f(x, u, t))
        if fx.shape != (d,):
            shape_bad = True
            break
        if dyn.has_jacobians:
            Jx = np.asarray(dyn.jac_x(x, u, t))
            Ju = np.asarray(dyn.jac_u(x, u, t))
            if Jx.shape != (d, d) or Ju.shape != (d, m):
                shape_bad = True
                break
            if (_rel_err(Jx, _central(lambda z: dyn.f(z, u, t), x)) > _FD_RTOL
                    or _rel_err(Ju, _central(lambda z: dyn.f(x, z, t), u)) > _FD_RTOL):
                bad_dyn = True
        X, U, T = x[None], u[None], np.array([t])
        th = lambda z: cost.theta(z[None], U, T)[0]
        tu = lambda z: cost.theta(X, z[None], T)[0]
        if (_rel_err(cost.grad_x(X, U, T)[0], _central(th, x)) > _FD_RTOL
                or _rel_err(cost.grad_u(X, U, T)[0], _central(tu, u)) > _FD_RTOL):
            bad_cost = True
        if cost.zeta is not None and _rel_err(cost.grad_zeta(x), _central(cost.zeta, x)) > _FD_RTOL:
            bad_cost = True
        state_fns = list(cons.state_inequalities) + ([cons.state_equality] if cons.state_equality else [])
        for fn in state_fns:
            if _rel_err(fn.gradient(x, t), _central(lambda z: fn(z, t), x)) > _FD_RTOL:
                bad_state = True
        for fn in list(cons.endpoint_inequalities) + list(cons.endpoint_equalities):
            if _rel_err(fn.gradient(x, g.horizon), _central(lambda z: fn(z, g.horizon), x)) > _FD_RTOL:
                bad_end = True
    if shape_bad:
        out.append("dynamics output dimension mismatch")
    if bad_dyn:
        out.append("dynamics Jacobian inconsistent")
    if bad_cost:
        out.append("cost gradient inconsistent")
    if bad_state:
        out.append("state constraint gradient inconsistent")
    if bad_end:
        out.append("endpoint constraint gradient inconsistent")
    return out


@dataclass(frozen=True)
class Residuals:
    terminal_residual: float
    state_residual: float
    control_residual: float

    def max(self) -> float:
        return max(self.terminal_residual, self.state_residual, self.control_residual)

    def feasible(self, tol: float) -> bool:
        return self.max() <= tol

    def as_dict(self) -> dict:
        return {"terminal_residual": self.terminal_residual,
                "state_residual": self.state_residual,
                "control_residual": self.control_residual}


def endpoint_violation(cons: ConstraintSpec, x_final, horizon: float) -> float:
    """``sum max(g_i, 0) + sum |g_k|`` at the final state."""
    total = 0.0
    for fn in cons.endpoint_inequalities:
        total += max(fn(x_final, horizon), 0.0)
    for fn in cons.endpoint_equalities:
        total += abs(fn(x_final, horizon))
    return total


def state_violation_nodes(cons: ConstraintSpec, states: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Pointwise violation ``max(0, g_j, |g_eq|)`` at every node."""
    viol = np.zeros(states.shape[0])
    for fn in cons.state_inequalities:
        viol = np.maximum(viol, fn.value(states, ts))
    if cons.state_equality is not None:
        viol = np.maximum(viol, np.abs(cons.state_equality.value(states, ts)))
    return viol


def feasibility_residuals(problem: Problem, trajectory, control) -> Residuals:
    """Terminal, state and control residuals; all zero iff the point is feasible."""
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.atleast_2d(trajectory)
    cons = problem.constraints
    xN = states[-1]
    if cons.terminal == "fixed":
        term = float(np.linalg.norm(xN - cons.target))
    elif cons.terminal == "variable":
        term = endpoint_violation(cons, xN, problem.grid.horizon)
    else:
        term = 0.0
    state = 0.0
    if cons.has_state_constraints:
        state = float(np.max(state_violation_nodes(cons, states, problem.grid.nodes)))
    ctl = problem.controls.distance(control, problem.grid)
    return Residuals(term, state, ctl)
