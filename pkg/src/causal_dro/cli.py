"""Command-line front end.

Exit codes: 0 on success, 1 when a resource cap is exceeded, 2 on invalid input.
Numbers are printed with 12 significant digits; CSV files always carry a header.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .avar import GbmSpec, run_avar_experiment, strike_sweep
from .control import ControlProblem, LQSpec, lq_grid_check, lq_solve, solve_robust_control
from .dro import (Ball, CandidateGrids, PathFunctional, Penalty, SolveOptions, curve_csv, radius_curve,
                  solve_penalized)
from .instances import random_tree_for_cli
from .linesearch import UnboundedDualError
from .measures import TreeValidationError, dump_tree, load_tree, to_path_measure
from .oracles import (CouplingConstraintSet, control_primal_check, lp_transport, primal_dro_ball,
                      primal_stopping_selection)
from .simplex import CapExceededError
from .stopping import CandidateFamily, StagePayoffs, bicausal_cost_table, relaxation_demo, robust_stopping_dual
from .transport import CostSpec, ot_bicausal, ot_classic

EXIT_OK, EXIT_CAP, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


def fmt(x: float) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    return p.read_text()


def _tree(path: str):
    return load_tree(_read(path))


def _json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON: {e}") from None


def _cost(spec: str, horizon: int) -> CostSpec:
    if spec == "sqdist":
        return CostSpec.sqeuclidean(horizon)
    if spec == "dist":
        return CostSpec.euclidean(horizon)
    if spec.startswith("table:"):
        rows = _json(spec[len("table:"):])
        try:
            return CostSpec.from_table({(tuple(map(tuple, r["x"])), tuple(map(tuple, r["y"]))): r["cost"]
                                        for r in rows})
        except (KeyError, TypeError) as e:
            raise InputError(f"cost table rows need x, y and cost fields ({e})") from None
    raise InputError(f"unknown cost {spec!r}; use sqdist, dist or table:PATH")


def _grid(spec: str, mu, L: Penalty) -> CandidateGrids:
    if spec == "default":
        return CandidateGrids.default_for(mu, L)
    if spec == "support":
        return CandidateGrids.support(mu)
    if spec.startswith("around:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise InputError("grid spec around:RADIUS:POINTS")
        return CandidateGrids.around(mu, float(parts[1]), int(parts[2]))
    if spec.startswith("file:"):
        return CandidateGrids.from_values(_json(spec[len("file:"):]))
    raise InputError(f"unknown grid spec {spec!r}")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ------------------------------------------------------------------


def cmd_ot(a) -> int:
    mu, nu = _tree(a.mu), _tree(a.nu)
    if mu.horizon != nu.horizon:
        raise InputError("trees have different horizons")
    c = _cost(a.cost, mu.horizon)
    if a.mode == "classic":
        value, pi = ot_classic(to_path_measure(mu), to_path_measure(nu), c, cap=a.cap)
    elif a.mode == "bicausal":
        value, pi = ot_bicausal(mu, nu, c, cap=a.cap)
    else:
        value, pi = lp_transport(CouplingConstraintSet("causal", to_path_measure(mu), to_path_measure(nu)), c)
    print(fmt(value))
    if a.coupling_out:
        Path(a.coupling_out).write_text(pi.to_csv())
    return EXIT_OK


def cmd_dro(a) -> int:
    mu = _tree(a.mu)
    f = PathFunctional.parse(a.payoff, mu.horizon)
    c = _cost(a.cost, mu.horizon)
    L = Penalty.parse(a.penalty)
    grids = _grid(a.grid, mu, L)
    opts = SolveOptions(tol_lambda=a.tol, lambda_cap=a.lambda_cap)
    if a.deltas:
        deltas = [float(d) for d in a.deltas.split(",")]
        _write(curve_csv(radius_curve(mu, f, c, deltas, grids, a.mode, opts)), a.out)
        return EXIT_OK
    rep = solve_penalized(mu, f, c, L, grids, a.mode, opts)
    if a.oracle:
        if not isinstance(L, Ball):
            raise InputError("--oracle needs a ball penalty")
        rep.attach_oracle(primal_dro_ball(mu, f, c, L.delta, a.mode, grids))
    _write(rep.to_json() + "\n", a.out)
    return EXIT_OK


def cmd_avar(a) -> int:
    try:
        lo, hi, step = (float(x) for x in a.strikes.split(":"))
        strikes = strike_sweep(lo, hi, step)
    except ValueError as e:
        raise InputError(f"bad strike range {a.strikes!r}: {e}") from None
    if not 0 < a.alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    if a.radius < 0:
        raise InputError("radius must be nonnegative")
    spec = GbmSpec(sigma=a.sigma, atoms=a.atoms)
    ex = run_avar_experiment(spec, a.alpha, a.radius ** 2, strikes, points=a.points)
    _write(ex.to_csv(), a.out)
    return EXIT_OK


def cmd_lq(a) -> int:
    spec = LQSpec(a.A, a.B, a.N, a.x1, a.vw, a.delta)
    res = lq_solve(spec, cap=a.lambda_cap)
    obj = res.to_obj()
    if a.grid_check:
        obj["grid_check"] = {k: (float(fmt(v)) if isinstance(v, float) and math.isfinite(v) else v)
                             for k, v in lq_grid_check(spec, h=a.grid_step).items()}
    _write(json.dumps(obj, sort_keys=True) + "\n", a.out)
    return EXIT_OK


def cmd_control(a) -> int:
    problem = ControlProblem.from_obj(_json(a.problem))
    L = Penalty.parse(a.penalty)
    rep, policy = solve_robust_control(problem, L, opts=SolveOptions(tol_lambda=a.tol))
    if a.oracle:
        if not isinstance(L, Ball):
            raise InputError("--oracle needs a ball penalty")
        rep.attach_oracle(control_primal_check(problem, policy, L.delta))
    _write(rep.to_json() + "\n", a.out)
    if a.policy_out:
        Path(a.policy_out).write_text(policy.to_json() + "\n")
    return EXIT_OK


def cmd_stopping(a) -> int:
    if a.demo:
        demo = relaxation_demo()
        _write(json.dumps({k: (float(fmt(v)) if isinstance(v, float) else v) for k, v in demo.items()},
                          sort_keys=True) + "\n", a.out)
        return EXIT_OK
    if not a.mu:
        raise InputError("--mu is required unless --demo is given")
    mu = _tree(a.mu)
    name, _, arg = a.payoff.partition(":")
    if name != "squared_minus_one":
        raise InputError(f"unknown stopping payoff {a.payoff!r}")
    f = StagePayoffs.squared_minus_one(float(arg) if arg else None)
    L = Penalty.parse(a.penalty)
    c = _cost(a.cost, mu.horizon)
    extra = []
    if a.candidates:
        docs = _json(a.candidates)
        if not isinstance(docs, list):
            raise InputError("candidate file must hold a JSON list of tree documents")
        extra = CandidateFamily.from_obj(docs).trees
    cands = CandidateFamily.generate(mu, L.scale, extra, cap=a.cap)
    table = bicausal_cost_table(mu, cands, c)
    rep = robust_stopping_dual(mu, f, cands, c, L, SolveOptions(tol_lambda=a.tol), table)
    if a.oracle:
        if not isinstance(L, Ball):
            raise InputError("--oracle needs a ball penalty")
        rep.attach_oracle(primal_stopping_selection(mu, f, cands, c, L.delta, table))
    _write(rep.to_json() + "\n", a.out)
    return EXIT_OK


def cmd_gen_random(a) -> int:
    if a.horizon < 1 or a.branch < 1 or a.dims < 1:
        raise InputError("horizon, branch and dims must be positive")
    _write(dump_tree(random_tree_for_cli(a.seed, a.horizon, a.branch, a.dims)) + "\n", a.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-dro", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ot", help="transport cost between two trees")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    s.add_argument("--cost", default="sqdist")
    s.add_argument("--mode", choices=["classic", "bicausal", "causal-lp"], default="bicausal")
    s.add_argument("--coupling-out")
    s.add_argument("--cap", type=int, default=2000)
    s.set_defaults(func=cmd_ot)

    s = sub.add_parser("dro", help="penalised robust value of a path payoff")
    s.add_argument("--mu", required=True)
    s.add_argument("--payoff", required=True)
    s.add_argument("--penalty", default="ball:0.1")
    s.add_argument("--cost", default="sqdist")
    s.add_argument("--grid", default="default")
    s.add_argument("--mode", choices=["causal", "classical"], default="causal")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--deltas")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--lambda-cap", type=float, default=1e8)
    s.add_argument("--out")
    s.set_defaults(func=cmd_dro)

    s = sub.add_parser("avar", help="robust AVaR of the two-step option under GBM")
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--sigma", type=float, default=0.2)
    s.add_argument("--atoms", type=int, default=16)
    s.add_argument("--radius", type=float, default=0.3)
    s.add_argument("--strikes", default="0.5:1.5:0.05")
    s.add_argument("--points", type=int, default=33)
    s.add_argument("--out")
    s.set_defaults(func=cmd_avar)

    s = sub.add_parser("lq", help="robust scalar linear-quadratic control")
    s.add_argument("--A", type=float, default=1.0)
    s.add_argument("--B", type=float, default=1.0)
    s.add_argument("--N", type=int, default=3)
    s.add_argument("--x1", type=float, default=1.0)
    s.add_argument("--vw", type=float, default=1.0)
    s.add_argument("--delta", type=float, default=0.09)
    s.add_argument("--lambda-cap", type=float, default=1e6)
    s.add_argument("--grid-check", action="store_true")
    s.add_argument("--grid-step", type=float, default=0.25)
    s.add_argument("--out")
    s.set_defaults(func=cmd_lq)

    s = sub.add_parser("control", help="robust control of a finite problem from JSON")
    s.add_argument("--problem", required=True)
    s.add_argument("--penalty", default="ball:0.1")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--policy-out")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out")
    s.set_defaults(func=cmd_control)

    s = sub.add_parser("stopping", help="robust optimal stopping over a candidate family")
    s.add_argument("--demo", action="store_true")
    s.add_argument("--mu")
    s.add_argument("--payoff", default="squared_minus_one:1")
    s.add_argument("--penalty", default="ball:0.1")
    s.add_argument("--cost", default="sqdist")
    s.add_argument("--candidates")
    s.add_argument("--cap", type=int, default=200)
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stopping)

    s = sub.add_parser("gen-random", help="seeded random scenario tree as JSON")
    s.add_argument("N", type=int, metavar="N", help="horizon")
    s.add_argument("B", type=int, metavar="B", help="maximum branching")
    s.add_argument("dims", type=int, help="value dimension")
    s.add_argument("seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_random, horizon=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    if a.command == "gen-random":
        a.horizon, a.branch = a.N, a.B
    try:
        return a.func(a)
    except CapExceededError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CAP
    except (TreeValidationError, InputError, ValueError, KeyError, UnboundedDualError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
