"""Command-line front end.

``exactpen solve|sweep|diagnose TARGET`` where TARGET is a problem file or a
corpus example name; ``exactpen reproduce [NAME]``; ``exactpen list-examples``.
Exit status: 0 success, 1 failed corpus expectations, 2 usage or IO errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .corpus import CorpusEntry, list_examples, load_example, run_descent, verify_example
from .diagnostics import (ExactnessDiagnostics, controllability_gramian, descent_rate_estimate, lambda_star_bound,
                          lipschitz_estimate, mfcq_check, relative_interior_probe, slater_margin,
                          write_diagnostics_json, write_probe_csv)
from .errors import ExactPenError, ProblemFormatError
from .model import Problem, feasibility_residuals
from .penalty import PenaltyConfig
from .problem_io import load_problem
from .simulate import linearize, rollout, write_trajectory_csv
from .solver import SolveOptions, lambda_sweep, minimize_penalized, parse_lambda_grid, write_sweep_csv

__all__ = ["CliConfig", "build_parser", "run", "main"]

DEFAULT_LAMBDA_GRID = "0.1:1000:10"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    command: str
    target: Optional[str] = None
    lam: Optional[float] = None
    lambda_grid: Optional[str] = None
    grid_n: Optional[int] = None
    terminal_mode: Optional[str] = None
    endpoint_mode: Optional[str] = None
    state_mode: Optional[str] = None
    p: Optional[float] = None
    tol_feas: Optional[float] = None
    eps0: Optional[float] = None
    max_iterations: Optional[int] = None
    seed: Optional[int] = None
    out: str = "."

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "CliConfig":
        keys = cls.__dataclass_fields__
        return cls(**{k: getattr(ns, k) for k in keys if hasattr(ns, k)})


def _add_common(sp: argparse.ArgumentParser, target: bool = True) -> None:
    if target:
        sp.add_argument("target", help="problem file (JSON) or corpus example name")
    sp.add_argument("--grid-n", dest="grid_n", type=int, help="number of grid nodes")
    sp.add_argument("--terminal-mode", choices=["none", "euclidean"])
    sp.add_argument("--endpoint-mode", choices=["none", "sum_hinge_plus_abs"])
    sp.add_argument("--state-mode", choices=["none", "sup", "lp"])
    sp.add_argument("--p", type=float, help="exponent of the L^p state penalty")
    sp.add_argument("--tol-feas", dest="tol_feas", type=float, help="feasibility tolerance (default 1e-6)")
    sp.add_argument("--eps0", type=float, help="initial smoothing parameter (default 1e-2)")
    sp.add_argument("--max-iterations", dest="max_iterations", type=int, help="iterations per smoothing stage")
    sp.add_argument("--seed", type=int, help="random seed (default 0)")
    sp.add_argument("--out", default=".", help="output directory (default: current directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exactpen", description="Exact penalty methods for optimal control.")
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("solve", help="minimise the penalised objective for one lambda")
    _add_common(sp)
    sp.add_argument("--lambda", dest="lam", type=float, help="penalty parameter (default 1)")
    sp = sub.add_parser("sweep", help="solve over a lambda grid and classify exactness")
    _add_common(sp)
    sp.add_argument("--lambda-grid", dest="lambda_grid", help="'a,b,c' or 'a:b:factor'")
    sp = sub.add_parser("diagnose", help="compute exactness diagnostics")
    _add_common(sp)
    sp.add_argument("--lambda", dest="lam", type=float, help="penalty parameter for the reference solve")
    sp = sub.add_parser("reproduce", help="verify corpus examples (all when NAME is omitted)")
    sp.add_argument("target", nargs="?", help="example name")
    _add_common(sp, target=False)
    sub.add_parser("list-examples", help="print the corpus example names")
    return parser


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------


@dataclass
class _Setup:
    problem: Problem
    penalty: PenaltyConfig
    options: SolveOptions
    entry: Optional[CorpusEntry]


def _setup(cfg: CliConfig) -> _Setup:
    entry = None
    if cfg.target in list_examples():
        entry = load_example(cfg.target, cfg.grid_n)
        problem, penalty, options = entry.problem, entry.penalty, entry.options
    else:
        problem = load_problem(cfg.target)
        if cfg.grid_n is not None:
            problem = problem.with_grid(cfg.grid_n)
        penalty = PenaltyConfig.for_problem(problem, state_mode=cfg.state_mode or "sup")
        options = SolveOptions()
    return _Setup(problem, _penalty(penalty, cfg), _options(options, cfg), entry)


def _penalty(base: PenaltyConfig, cfg: CliConfig) -> PenaltyConfig:
    kw = {k: getattr(cfg, k) for k in ("terminal_mode", "endpoint_mode", "state_mode", "p")
          if getattr(cfg, k) is not None}
    return replace(base, **kw)


def _options(base: SolveOptions, cfg: CliConfig) -> SolveOptions:
    kw = {k: getattr(cfg, k) for k in ("tol_feas", "eps0", "max_iterations", "seed")
          if getattr(cfg, k) is not None}
    if "eps0" in kw:
        kw["eps_floor"] = min(base.eps_floor, kw["eps0"])
    return replace(base, **kw)


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path!r}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path!r} is not writable")
    return path


def _fmt(v) -> str:
    return "nan" if v is None else repr(float(v))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_solve(cfg: CliConfig, out) -> int:
    s = _setup(cfg)
    outdir = _outdir(cfg.out)
    lam = 1.0 if cfg.lam is None else cfg.lam
    rep = minimize_penalized(s.problem, s.penalty.with_lambda(lam), s.problem.zero_control(), s.options)
    path = os.path.join(outdir, "trajectory.csv")
    write_trajectory_csv(path, s.problem, rollout(s.problem, rep.control), rep.control)
    b, r = rep.breakdown, rep.residuals
    print(f"lambda = {_fmt(lam)}", file=out)
    print(f"Phi = {_fmt(b.total)}  I = {_fmt(b.cost)}  phi_T = {_fmt(b.phi_T)}  "
          f"phi_E = {_fmt(b.phi_E)}  phi_S = {_fmt(b.phi_S)}", file=out)
    print(f"residuals: terminal {_fmt(r.terminal_residual)}  state {_fmt(r.state_residual)}  "
          f"control {_fmt(r.control_residual)}", file=out)
    print(f"converged = {str(rep.converged).lower()} ({rep.reason}, {rep.iterations} iterations)", file=out)
    print(f"wrote {path}", file=out)
    return 0


def _print_sweep(report, out) -> None:
    print(f"{'lambda':>12} {'Phi':>24} {'I':>24} {'residual':>24}", file=out)
    for rec in report.records:
        b = rec.breakdown
        print(f"{rec.lam:>12g} {_fmt(b.total if b else None):>24} {_fmt(b.cost if b else None):>24} "
              f"{_fmt(rec.residual):>24}", file=out)
    star = "" if report.estimated_lambda_star is None else f", lambda* ~ {_fmt(report.estimated_lambda_star)}"
    print(f"verdict: {report.verdict}{star}", file=out)


def _cmd_sweep(cfg: CliConfig, out) -> int:
    s = _setup(cfg)
    outdir = _outdir(cfg.out)
    if cfg.lambda_grid is not None:
        try:
            grid = parse_lambda_grid(cfg.lambda_grid)
        except ValueError as exc:
            raise UsageError(f"bad --lambda-grid: {exc}") from None
    elif s.entry is not None:
        grid = list(s.entry.lambda_grid)
    else:
        grid = parse_lambda_grid(DEFAULT_LAMBDA_GRID)
    inits = s.entry.sweep_inits if s.entry else None
    ref = s.entry.feasible_reference if s.entry else None
    report = lambda_sweep(s.problem, s.penalty, grid, s.options, initial_controls=inits, feasible_reference=ref)
    path = os.path.join(outdir, "sweep.csv")
    write_sweep_csv(path, report)
    _print_sweep(report, out)
    print(f"wrote {path}", file=out)
    return 0


def _perturbations(problem: Problem, U: np.ndarray, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [problem.controls.project(U + 0.1 * rng.standard_normal(U.shape), problem.grid) for _ in range(count)]


def _cmd_diagnose(cfg: CliConfig, out) -> int:
    s = _setup(cfg)
    outdir = _outdir(cfg.out)
    prob, opts = s.problem, s.options
    cons = prob.constraints
    diag = ExactnessDiagnostics()
    notes = diag.notes

    lam = 1.0 if cfg.lam is None else cfg.lam
    rep = minimize_penalized(prob, s.penalty.with_lambda(lam), prob.zero_control(), opts)
    ref = None
    if s.entry is not None and s.entry.feasible_reference is not None:
        ref = np.asarray(s.entry.feasible_reference, dtype=float)
    elif rep.residuals.feasible(opts.tol_feas):
        ref = rep.control
    else:
        notes.append(f"minimiser at lambda = {_fmt(lam)} is infeasible; no feasible reference")

    try:
        lin = linearize(prob, rollout(prob, rep.control), rep.control)
        diag.gramian = controllability_gramian(lin, prob.grid)
    except ExactPenError as exc:
        notes.append(f"gramian: {exc}")

    if cons.state_inequalities and ref is not None:
        diag.slater_margin = slater_margin(prob, ref, opts.tol_feas)

    probe = None
    if cons.terminal == "fixed":
        try:
            probe = relative_interior_probe(prob, seed=opts.seed)
            diag.relative_interior = probe
        except ExactPenError as exc:
            notes.append(f"relative interior probe: {exc}")

    if cons.terminal == "variable" and ref is not None:
        xN = rollout(prob, ref).states[-1]
        diag.mfcq = mfcq_check(cons.endpoint_inequalities, cons.endpoint_equalities, xN,
                               t=prob.grid.horizon, seed=opts.seed)

    if ref is not None and s.penalty.any_active:
        entry = s.entry
        if entry is not None and entry.descent_points is not None:
            pts = entry.descent_points(prob, 20)
            metric = entry.descent_metric
            try:
                diag.descent_rate = run_descent(entry)
            except (ExactPenError, ValueError) as exc:
                notes.append(f"descent rate: {exc}")
        else:
            metric = "full"
            cand = _perturbations(prob, ref, 8, opts.seed)
            pts = [u for u in cand if not feasibility_residuals(prob, rollout(prob, u), u).feasible(opts.tol_feas)]
            try:
                diag.descent_rate = descent_rate_estimate(prob, s.penalty, pts, ref, metric=metric,
                                                          p=s.penalty.p, tol_feas=opts.tol_feas)
            except (ExactPenError, ValueError) as exc:
                notes.append(f"descent rate: {exc}")
        if len(pts) >= 1:
            diag.lipschitz_estimate = lipschitz_estimate(prob, [ref] + list(pts), metric=metric, p=s.penalty.p,
                                                         seed=opts.seed)
        if diag.descent_rate is not None and diag.lipschitz_estimate is not None:
            if diag.descent_rate > 0:
                diag.lambda_star_bound = lambda_star_bound(diag.lipschitz_estimate, diag.descent_rate)
            else:
                notes.append("descent rate is not positive; no lambda* bound")

    path = os.path.join(outdir, "diagnostics.json")
    write_diagnostics_json(path, diag)
    for key, val in diag.as_dict().items():
        if key == "notes":
            continue
        if isinstance(val, dict):
            val = val.get("verdict", val.get("controllable", val.get("holds")))
        print(f"{key}: {val}", file=out)
    for n in notes:
        print(f"note: {n}", file=out)
    print(f"wrote {path}", file=out)
    if probe is not None:
        ppath = os.path.join(outdir, "probe.csv")
        write_probe_csv(ppath, probe)
        print(f"wrote {ppath}", file=out)
    return 0


def _cmd_reproduce(cfg: CliConfig, out) -> int:
    names = list_examples()
    if cfg.target is not None:
        if cfg.target not in names:
            raise UsageError(f"unknown example {cfg.target!r}; see list-examples")
        names = [cfg.target]
    outdir = _outdir(cfg.out)
    results = []
    for name in names:
        entry = load_example(name, cfg.grid_n)
        ver = verify_example(name, _options(entry.options, cfg), cfg.grid_n)
        print(ver.summary(), file=out)
        if ver.report is not None:
            sub = outdir if len(names) == 1 else _outdir(os.path.join(outdir, name))
            write_sweep_csv(os.path.join(sub, "sweep.csv"), ver.report)
        results.append((name, ver.passed))
    if len(names) > 1:
        print("", file=out)
        for name, ok in results:
            print(f"{name:<28} {'PASS' if ok else 'FAIL'}", file=out)
    return 0 if all(ok for _, ok in results) else 1


_COMMANDS = {"solve": _cmd_solve, "sweep": _cmd_sweep, "diagnose": _cmd_diagnose, "reproduce": _cmd_reproduce}


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    """Run one command; returns the exit status instead of exiting."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = CliConfig.from_namespace(ns)
    if cfg.command == "list-examples":
        for name in list_examples():
            print(name, file=out)
        return 0
    try:
        return _COMMANDS[cfg.command](cfg, out)
    except ProblemFormatError as exc:
        msg = str(exc)
        if not msg.startswith("cannot read problem file"):
            msg = f"invalid problem file: {msg}"
        print(f"exactpen: {msg}", file=err)
    except (UsageError, ExactPenError, ValueError, OSError) as exc:
        print(f"exactpen: {exc}", file=err)
    return 2


def main() -> None:
    sys.exit(run())
