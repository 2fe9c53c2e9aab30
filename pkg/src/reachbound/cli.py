"""Command-line front end.

Exit codes: 0 success, 1 usage, validation or I/O error, 2 infeasible (no
certified ellipsoid or bound exists on the grid).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from . import __version__
from .analysis import AllInfeasible, grid_search
from .fileio import (
    ProblemError,
    VerificationError,
    analysis_record,
    ellipse_boundary,
    load_problem,
    load_result,
    parse_grid,
    result_bounds,
    result_ellipsoid,
    synthesis_record,
    write_polyline_csv,
    write_result,
)
from .model import ModelError
from .montecarlo import containment, danger_violations, sample, validate, write_cloud_csv
from .platoon import settling_step, simulate, write_trace_csv
from .synthesis import SynthesisError, equal_bound_synthesis, synthesize

log = logging.getLogger("reachbound")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2


def _fmt(v) -> str:
    return "[" + ", ".join(f"{x:.6g}" for x in np.atleast_1d(v)) + "]"


def _problem(args):
    problem = load_problem(args.input)
    if getattr(args, "grid", None):
        problem.grid = parse_grid(args.grid)
    return problem


def cmd_analyze(args) -> int:
    problem = _problem(args)
    res = grid_search(problem.system, problem.bounds, problem.grid, threads=args.threads)
    write_result(args.output, analysis_record(problem, res))
    print(f"analysis: a*={res.a_star:g} volume={res.volume:.6g}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    problem = _problem(args)
    if problem.danger is None:
        raise ProblemError("danger", "synthesis needs a danger block")
    if args.equal_bounds or problem.equal_bounds:
        res = equal_bound_synthesis(problem.system, problem.bounds, problem.danger,
                                    problem.grid, threads=args.threads)
    else:
        res = synthesize(problem.system, problem.bounds, problem.danger, problem.grid,
                         selection=problem.selection, threads=args.threads)
    write_result(args.output, synthesis_record(problem, res))
    print(f"synthesis: gamma_hat={_fmt(res.gamma_hat)} a*={res.a_star:g} active={res.active}")
    return EXIT_OK


def cmd_sample(args) -> int:
    problem = _problem(args)
    cfg = problem.sampling
    over = {k: getattr(args, k) for k in ("seed", "n_traj", "horizon", "policy")
            if getattr(args, k) is not None}
    cfg = dataclasses.replace(cfg, **over)
    bounds, e = problem.bounds, None
    if args.result:
        rec = load_result(args.result)
        bounds, e = result_bounds(rec), result_ellipsoid(rec)
        if e.n != problem.system.n:
            raise ModelError(f"result ellipsoid has dimension {e.n}, the system has {problem.system.n}")
        if bounds.m != problem.system.m:
            raise ModelError(f"result bounds have {bounds.m} entries, the system has {problem.system.m} inputs")
    cloud = sample(problem.system, bounds, cfg)
    write_cloud_csv(cloud, args.output)
    danger = problem.danger
    if cloud.thinned:
        stats = validate(problem.system, bounds, cfg, e, danger)
        frac, level = stats.fraction_inside, stats.max_level
        viol = stats.violations
    else:
        frac, level = containment(cloud, e) if e is not None else (float("nan"), float("nan"))
        viol = danger_violations(cloud, danger) if danger is not None else 0
    print(f"sample: states={cloud.total} containment={frac:.6g} max_level={level:.6g} "
          f"violations={viol}")
    return EXIT_OK


def cmd_platoon(args) -> int:
    problem = _problem(args)
    setup = problem.platoon
    if setup is None:
        raise ProblemError("platoon", "missing")
    bounds = problem.bounds
    if args.result:
        bounds = result_bounds(load_result(args.result))
    attack = setup.attack
    if args.no_attack:
        attack = None
    trace = simulate(setup.params, bounds, attack, setup.duration)
    write_trace_csv(trace, args.output)
    if trace.crashed:
        i, j = trace.crash_pair
        print(f"platoon: crash between vehicles {i} and {j} at t={trace.crash_time:g} s")
    else:
        k = settling_step(trace)
        settled = "not settled" if k is None else f"settled at t={trace.t[k]:g} s"
        print(f"platoon: no crash over {trace.t[-1]:g} s; final gaps={_fmt(trace.gaps[-1])} m; {settled}")
    return EXIT_OK


def cmd_ellipse(args) -> int:
    rec = load_result(args.input)
    e = result_ellipsoid(rec)
    plane = tuple(int(p) for p in args.plane.split(","))
    if len(plane) != 2:
        raise ProblemError("plane", "expected two comma-separated indices")
    pts = ellipse_boundary(e, plane, args.samples)
    write_polyline_csv(pts, plane, args.output)
    print(f"ellipse: {len(pts)} points in plane {plane}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with validation errors; 2 means infeasible
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="reachbound", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, grid=True):
        p.add_argument("--input", "-i", required=True, help="problem file (JSON)")
        p.add_argument("--output", "-o", required=True)
        p.add_argument("--verbose", "-v", action="store_true")
        if grid:
            p.add_argument("--grid", help="grid for a as start:step:stop")
            p.add_argument("--threads", type=int, default=1)
        return p

    p = common(sub.add_parser("analyze", help="minimum-volume reachable-set ellipsoid"))
    p.set_defaults(func=cmd_analyze)

    p = common(sub.add_parser("synthesize", help="safe actuator bounds"))
    p.add_argument("--equal-bounds", action="store_true", help="one common bound for every input")
    p.set_defaults(func=cmd_synthesize)

    p = common(sub.add_parser("sample", help="Monte-Carlo cloud and containment check"), grid=False)
    p.add_argument("--result", help="result file whose ellipsoid and bounds are checked")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-traj", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--policy", choices=("uniform", "bangbang", "mixed"))
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("platoon", help="closed-loop platoon simulation"), grid=False)
    p.add_argument("--result", help="synthesis result whose bounds are put in force")
    p.add_argument("--no-attack", action="store_true")
    p.set_defaults(func=cmd_platoon)

    p = common(sub.add_parser("ellipse", help="projected ellipse outline from a result file"),
               grid=False)
    p.add_argument("--plane", default="1,2", help="1-based coordinate pair, e.g. 1,2")
    p.add_argument("--samples", type=int, default=256)
    p.set_defaults(func=cmd_ellipse)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except AllInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SynthesisError as exc:
        print(f"synthesis failed verification: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ModelError, ValueError, VerificationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
