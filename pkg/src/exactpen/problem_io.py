"""Problem files: JSON documents describing a :class:`~exactpen.model.Problem`.

The layout is checked against :data:`PROBLEM_SCHEMA` (unknown keys are
errors), then the builtin registries turn names and parameter objects into
dynamics, costs and constraint functions.  See README.md for examples.
"""

from __future__ import annotations

import json
from typing import Any

import jsonschema
import numpy as np

from .errors import ProblemFormatError
from .model import (AdmissibleControlSet, ConstraintSpec, Problem, TimeGrid, make_constraint, make_cost,
                    make_dynamics, validate)

__all__ = ["PROBLEM_SCHEMA", "problem_from_dict", "problem_to_dict", "load_problem", "dump_problem"]

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}}

_FUNCTION = {
    "type": "object",
    "properties": {
        "name": {"enum": ["affine", "quadratic"]},
        "params": {"type": "object"},
    },
    "required": ["name"],
    "additionalProperties": False,
}

PROBLEM_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "state_dim": {"type": "integer", "minimum": 1},
        "control_dim": {"type": "integer", "minimum": 1},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "grid_nodes": {"type": "integer", "minimum": 2},
        "x0": _NUM_ARRAY,
        "dynamics": {
            "type": "object",
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
                "A": {"type": "array"},
                "B": {"type": "array"},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
        "cost": {
            "type": "object",
            "properties": {
                "name": {"enum": ["zero", "quadratic"]},
                "params": {"type": "object"},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
        "controls": {
            "type": "object",
            "properties": {
                "variant": {"enum": ["unconstrained", "pointwise_box", "global_l2_ball", "pointwise_convex"]},
                "params": {"type": "object"},
            },
            "required": ["variant"],
            "additionalProperties": False,
        },
        "constraints": {
            "type": "object",
            "properties": {
                "terminal": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["free", "fixed", "variable"]},
                        "target": _NUM_ARRAY,
                        "inequalities": {"type": "array", "items": _FUNCTION},
                        "equalities": {"type": "array", "items": _FUNCTION},
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                "state": {
                    "type": "object",
                    "properties": {
                        "inequalities": {"type": "array", "items": _FUNCTION},
                        "equality": {"oneOf": [_FUNCTION, {"type": "null"}]},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "required": ["state_dim", "control_dim", "horizon", "grid_nodes", "x0", "dynamics", "cost"],
    "additionalProperties": False,
}


def _controls_from(spec: dict | None) -> AdmissibleControlSet:
    if not spec:
        return AdmissibleControlSet()
    variant = spec["variant"]
    params = dict(spec.get("params", {}))
    if variant == "unconstrained":
        return AdmissibleControlSet()
    if variant == "pointwise_box":
        return AdmissibleControlSet.box(params["lo"], params["hi"])
    if variant == "global_l2_ball":
        return AdmissibleControlSet.l2_ball(params["radius"], bool(params.get("nonnegative", False)))
    oracle = params.pop("oracle")
    return AdmissibleControlSet.pointwise(oracle, **params)


def _functions(items) -> tuple:
    return tuple(make_constraint(it["name"], it.get("params")) for it in items or ())


def _constraints_from(spec: dict | None) -> ConstraintSpec:
    spec = spec or {}
    term = spec.get("terminal", {"kind": "free"})
    state = spec.get("state", {})
    eq = state.get("equality")
    return ConstraintSpec(
        terminal=term["kind"],
        target=term.get("target"),
        endpoint_inequalities=_functions(term.get("inequalities")),
        endpoint_equalities=_functions(term.get("equalities")),
        state_inequalities=_functions(state.get("inequalities")),
        state_equality=None if eq is None else make_constraint(eq["name"], eq.get("params")),
    )


def problem_from_dict(doc: Any, check: bool = True) -> Problem:
    """Build a problem from a parsed document.

    Raises
    ------
    ProblemFormatError
        On schema violations, unknown registry names, bad parameters,
        dimension mismatches or (``check=True``) failed :func:`validate`.
    """
    try:
        jsonschema.validate(doc, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ProblemFormatError(f"{where}: {exc.message}") from None
    try:
        grid = TimeGrid(float(doc["horizon"]), int(doc["grid_nodes"]))
        dspec = doc["dynamics"]
        params = dict(dspec.get("params", {}))
        for key in ("A", "B"):
            if key in dspec:
                params[key] = dspec[key]
        dyn = make_dynamics(dspec["name"], params, grid)
        d, m = int(doc["state_dim"]), int(doc["control_dim"])
        if (dyn.state_dim, dyn.control_dim) != (d, m):
            raise ProblemFormatError(
                f"dynamics {dyn.name!r} has dimensions ({dyn.state_dim}, {dyn.control_dim}), "
                f"file declares ({d}, {m})")
        cost = make_cost(doc["cost"]["name"], doc["cost"].get("params"), d, m)
        problem = Problem(grid, np.asarray(doc["x0"], dtype=float), dyn, cost,
                          _controls_from(doc.get("controls")), _constraints_from(doc.get("constraints")))
    except ProblemFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFormatError(f"invalid problem: {exc}") from None
    if check:
        issues = validate(problem)
        if issues:
            raise ProblemFormatError("; ".join(issues))
    return problem


def _function_spec(fn) -> dict:
    return {"name": fn.name, "params": fn.params}


def problem_to_dict(problem: Problem) -> dict:
    """Inverse of :func:`problem_from_dict` for problems built from the registries."""
    dyn = problem.dynamics
    if dyn.name == "linear":
        dspec = {"name": "linear", "A": dyn.params["A"], "B": dyn.params["B"]}
    else:
        dspec = {"name": dyn.name, "params": dict(dyn.params)}
    cons = problem.constraints
    terminal: dict = {"kind": cons.terminal}
    if cons.target is not None:
        terminal["target"] = np.asarray(cons.target).tolist()
    if cons.endpoint_inequalities:
        terminal["inequalities"] = [_function_spec(f) for f in cons.endpoint_inequalities]
    if cons.endpoint_equalities:
        terminal["equalities"] = [_function_spec(f) for f in cons.endpoint_equalities]
    state: dict = {}
    if cons.state_inequalities:
        state["inequalities"] = [_function_spec(f) for f in cons.state_inequalities]
    if cons.state_equality is not None:
        state["equality"] = _function_spec(cons.state_equality)
    out = {
        "state_dim": problem.state_dim,
        "control_dim": problem.control_dim,
        "horizon": problem.grid.horizon,
        "grid_nodes": problem.grid.node_count,
        "x0": problem.x0.tolist(),
        "dynamics": dspec,
        "cost": {"name": problem.cost.name, "params": dict(problem.cost.params)},
        "controls": problem.controls.spec(),
        "constraints": {"terminal": terminal, "state": state},
    }
    return json.loads(json.dumps(out))


def load_problem(path, check: bool = True) -> Problem:
    """Read a problem file; IO and JSON syntax errors become :class:`ProblemFormatError`."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ProblemFormatError(f"cannot read problem file {str(path)!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"cannot read problem file {str(path)!r}: {exc}") from None
    return problem_from_dict(doc, check=check)


def dump_problem(problem: Problem, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=2, sort_keys=True)
        fh.write("\n")
