"""``epsfair`` command line: solve, scenarios, sweep, epsmax.

Exit codes: 0 optimal / success, 1 usage or data error, 2 infeasible,
3 unknown solver outcome, 4 scenario sampling exhausted (partial file kept).

Every option can also come from an environment variable named
``EPSFAIR_<OPTION>`` (upper case, dashes as underscores, e.g.
``EPSFAIR_TOL_FEAS``); an explicit flag wins over the environment.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import asdict

from . import __version__
from .experiments import (
    DEFAULT_EPS_GRID,
    DEFAULT_P_SET,
    INFEASIBLE,
    OPTIMAL,
    BaseInfeasibleError,
    UnknownStatusError,
    counts_nondecreasing,
    eps_max,
    eps_sweep,
    export_csv,
    format_csv,
    infeasibility_table,
    monotonicity_audit,
    pnorm_sweep,
)
from .fairness import w_of_eps
from .grid import (
    SUPPORTED_P,
    CaseParseError,
    SamplingExhausted,
    apply_damage,
    format_scenarios,
    generate_scenarios,
    read_scenarios,
    resolve_case,
    solve_mls,
    write_scenarios,
)
from .solver import SolverSettings, Status

ENV_PREFIX = "EPSFAIR_"

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_UNKNOWN, EXIT_EXHAUSTED = 0, 1, 2, 3, 4

DEFAULT_GENERATE = "5,200,0"


class UsageError(ValueError):
    pass


def _env(dest: str, fallback=None):
    return os.environ.get(ENV_PREFIX + dest.upper(), fallback)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _p_value(text) -> float:
    tok = str(text).strip().lower()
    value = math.inf if tok in ("inf", "infinity") else float(tok)
    if value not in SUPPORTED_P:
        raise UsageError(f"p = {text} is not supported; choose from 1, 2, 4, 8, inf")
    return value


def _eps_value(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise UsageError(f"eps must lie in [0, 1], got {value:g}")
    return value


def _generate_spec(text: str) -> tuple[int, int, int]:
    parts = str(text).split(",")
    if len(parts) != 3:
        raise UsageError(f"--generate expects k,count,seed, got {text!r}")
    try:
        k, count, seed = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--generate expects integers k,count,seed, got {text!r}") from None
    if count < 0:
        raise UsageError("count must be nonnegative")
    return k, count, seed


def _common(parser: argparse.ArgumentParser, solver: bool = True) -> None:
    parser.add_argument("--case", default=_env("case"),
                        help="MATPOWER case file, or 'case14' for the bundled pglib 14-bus case (default)")
    if solver:
        parser.add_argument("--tol-feas", type=float, default=_env("tol_feas", 1e-8),
                            help="solver feasibility and certificate tolerance (default 1e-8)")
        parser.add_argument("--tol-gap", type=float, default=_env("tol_gap", 1e-8),
                            help="solver relative duality-gap tolerance (default 1e-8)")
    parser.add_argument("--verbose", action="store_true",
                        default=str(_env("verbose", "")).lower() in ("1", "true", "yes"))


def _scenario_source(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--scenarios", default=None, help="scenario file (one comma-separated line set per line)")
    group.add_argument("--generate", default=None, metavar="K,COUNT,SEED",
                       help=f"draw scenarios instead of reading a file (default {DEFAULT_GENERATE})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epsfair", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one MLS instance")
    _common(p)
    p.add_argument("--damage", default=_env("damage"), help="comma-separated ids of removed lines")
    p.add_argument("--scenarios", default=_env("scenarios"), help="take the damage from this scenario file")
    p.add_argument("--scenario-id", type=int, default=_env("scenario_id"), help="row of --scenarios (0-based)")
    which = p.add_mutually_exclusive_group()
    which.add_argument("--eps", type=float, default=None, help="fairness level in [0, 1]")
    which.add_argument("--p", default=None, help="p-norm objective, one of 1, 2, 4, 8, inf")

    p = sub.add_parser("scenarios", help="draw random damage scenarios")
    _common(p)
    p.add_argument("--generate", default=_env("generate", DEFAULT_GENERATE), metavar="K,COUNT,SEED")
    p.add_argument("--out", default=_env("out"), help="output file (default: stdout)")

    p = sub.add_parser("sweep", help="eps or p sweep over scenarios, CSV report")
    _common(p)
    _scenario_source(p)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--eps-grid", default=None, help="comma-separated eps values (must include 0)")
    grid.add_argument("--eps", type=float, default=None, help="single eps (0 is added as baseline)")
    grid.add_argument("--p-set", default=None, help="comma-separated p values (must include 1)")
    p.add_argument("--out", default=_env("out"), help="CSV output path (default: stdout)")
    p.add_argument("--jobs", type=int, default=_env("jobs"), help="worker processes (default: CPU count)")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column (makes the CSV run-dependent)")

    p = sub.add_parser("epsmax", help="largest feasible eps per scenario by bisection")
    _common(p)
    _scenario_source(p)
    p.add_argument("--tol", type=float, default=_env("tol", 1e-3), help="bisection tolerance on eps (default 1e-3)")
    return parser


# -- helpers ---------------------------------------------------------------

def _settings(args) -> SolverSettings:
    return SolverSettings(feastol=float(args.tol_feas), gaptol=float(args.tol_gap),
                          certtol=float(args.tol_feas), verbose=bool(args.verbose))


def _load_scenarios(args, case, settings, config):
    scen_file = args.scenarios if args.scenarios is not None else (None if args.generate else _env("scenarios"))
    generate = args.generate if args.generate is not None else (None if args.scenarios else _env("generate"))
    if scen_file and generate:
        raise UsageError("give either a scenario file or --generate, not both")
    if scen_file:
        data = read_scenarios(scen_file)
        config.update(scenarios=scen_file, seed=_s(data.seed), k=_s(data.k), count=str(len(data.scenarios)))
        return data.scenarios, data.seed
    k, count, seed = _generate_spec(generate or DEFAULT_GENERATE)
    config.update(scenarios=f"generate:{k},{count},{seed}", seed=str(seed), k=str(k), count=str(count))
    return generate_scenarios(case, k, count, seed, settings=settings), seed


def _s(value) -> str:
    return "" if value is None else str(value)


def _case_config(args, case) -> dict:
    return {"case": args.case or "case14", "case_name": case.name,
            "case_fingerprint": case.fingerprint(), "loads": str(len(case.loads))}


def _settings_config(settings: SolverSettings) -> dict:
    return {f"solver.{k}": _s(v) for k, v in asdict(settings).items() if k != "verbose"}


def _print_config(config: dict, out=None) -> None:
    out = out or sys.stdout
    for key, value in config.items():
        print(f"# {key}={value}", file=out)


def _fmt_param(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:g}"


def _fmt_q(q) -> str:
    return "-" if q is None else " / ".join(f"{v:.4g}" for v in q)


# -- subcommands -------------------------------------------------------------

def cmd_solve(args) -> int:
    case = resolve_case(args.case)
    settings = _settings(args)
    removed: tuple[int, ...] = ()
    if args.damage and args.scenarios:
        raise UsageError("give either --damage or --scenarios, not both")
    if args.damage:
        removed = tuple(int(t) for t in str(args.damage).split(",") if t.strip())
    elif args.scenarios:
        data = read_scenarios(args.scenarios)
        sid = 0 if args.scenario_id is None else int(args.scenario_id)
        if not 0 <= sid < len(data.scenarios):
            raise UsageError(f"scenario id {sid} out of range (file has {len(data.scenarios)})")
        removed = data.scenarios[sid].removed
    eps = _eps_value(args.eps) if args.eps is not None else None
    p = _p_value(args.p) if args.p is not None else None
    config = {"command": "solve", **_case_config(args, case), "damage": ",".join(map(str, removed)),
              "model": "eps" if eps is not None else "p" if p is not None else "base",
              "eps": _s(eps), "p": "" if p is None else _fmt_param(p), **_settings_config(settings)}
    _print_config(config)
    damaged = apply_damage(case, removed)
    sol = solve_mls(damaged, eps=eps, p=p, settings=settings)
    print(f"status: {sol.status.value}")
    print(f"iterations: {sol.iterations}")
    if sol.status is Status.OPTIMAL:
        print(f"total shed: {sol.total_shed:.9g}")
        print(f"jain index: {sol.jain:.9g}" if sol.jain is not None else "jain index: -")
        if eps is not None and damaged.loads:
            print(f"w(eps): {w_of_eps(eps, len(damaged.loads)):.9g}")
        print(f"balance residual: {sol.balance_residual:.3g}")
        for load, d in zip(damaged.loads, sol.shed):
            print(f"  load {load.id:>3} bus {load.bus:>4}  dmax {load.dmax:.6g}  shed {d:.9g}")
        return EXIT_OK
    if sol.status is Status.PRIMAL_INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_UNKNOWN


def cmd_scenarios(args) -> int:
    case = resolve_case(args.case)
    k, count, seed = _generate_spec(args.generate)
    config = {"command": "scenarios", **_case_config(args, case), "k": str(k), "count": str(count),
              "seed": str(seed)}
    _print_config(config, sys.stderr if not args.out else None)
    try:
        scenarios = generate_scenarios(case, k, count, seed)
        code = EXIT_OK
    except SamplingExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        scenarios, code = exc.scenarios, EXIT_EXHAUSTED
    if args.out:
        write_scenarios(args.out, scenarios, seed, k)
        print(f"wrote {len(scenarios)} scenarios to {args.out}")
    else:
        sys.stdout.write(format_scenarios(scenarios, seed, k))
    return code


def cmd_sweep(args) -> int:
    case = resolve_case(args.case)
    settings = _settings(args)
    jobs = int(args.jobs) if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    eps_grid, p_set = args.eps_grid, args.p_set
    if eps_grid is None and p_set is None and args.eps is None:
        eps_grid, p_set = _env("eps_grid"), _env("p_set")
        if eps_grid and p_set:
            raise UsageError("EPSFAIR_EPS_GRID and EPSFAIR_P_SET are both set")
    if p_set:
        kind = "p"
        grid = tuple(_p_value(tok) for tok in str(p_set).split(",") if tok.strip())
        if 1.0 not in grid:
            raise UsageError("--p-set must include the baseline p = 1")
    else:
        kind = "eps"
        if args.eps is not None:
            grid = tuple(sorted({0.0, _eps_value(args.eps)}))
        else:
            grid = _float_list(eps_grid) if eps_grid else DEFAULT_EPS_GRID
            for e in grid:
                _eps_value(e)
            if 0.0 not in grid:
                raise UsageError("--eps-grid must include the baseline eps = 0")
    if not grid:
        raise UsageError("empty parameter grid")

    config = {"command": "sweep", **_case_config(args, case)}
    scenarios, seed = _load_scenarios(args, case, settings, config)
    config.update({"kind": kind, "grid": ",".join(_fmt_param(g) for g in grid),
                   "timing": str(bool(args.timing)), **_settings_config(settings)})
    _print_config({**config, "jobs": str(jobs), "out": _s(args.out)})

    run = eps_sweep if kind == "eps" else pnorm_sweep
    report = run(case, scenarios, grid, settings=settings, jobs=jobs, timing=args.timing, seed=seed,
                 config=config)
    if args.out:
        export_csv(report, args.out)
        print(f"wrote {len(report.rows)} rows to {args.out}")
    _print_summary(report)
    if not args.out:
        sys.stdout.write(format_csv(report))
    return EXIT_OK


def _print_summary(report) -> None:
    print(f"{'param':>6} {'optimal':>8} {'infeas':>7} {'unknown':>8}   JI q1/med/q3            eta_r% q1/med/q3")
    for row in report.summary():
        print(f"{_fmt_param(row['param']):>6} {row['optimal']:>8} {row['infeasible']:>7} {row['unknown']:>8}   "
              f"{_fmt_q(row['jain_quartiles']):<23} {_fmt_q(row['eta_quartiles'])}")
    audit = monotonicity_audit(report)
    if report.kind == "eps":
        table = infeasibility_table(report)
        print(f"infeasible counts nondecreasing in eps: {'yes' if counts_nondecreasing(table) else 'NO'}")
        print(f"z monotonicity violations: {len(audit.z_violations)}")
        print(f"feasible-after-infeasible orderings: {len(audit.order_violations)}")
        print(f"JI below w(eps): {len(audit.bound_violations)}")
    print(f"scenarios with JI decreasing in {report.kind}: {len(audit.jain_nonmonotone_scenarios)} "
          f"of {audit.scenarios - len(audit.skipped_unknown)}")
    if audit.skipped_unknown:
        print(f"scenarios skipped for unknown statuses: {len(audit.skipped_unknown)}")


def cmd_epsmax(args) -> int:
    case = resolve_case(args.case)
    settings = _settings(args)
    tol = float(args.tol)
    if not 0 < tol < 1:
        raise UsageError("--tol must lie in (0, 1)")
    config = {"command": "epsmax", **_case_config(args, case)}
    scenarios, _ = _load_scenarios(args, case, settings, config)
    config.update({"tol": _s(tol), **_settings_config(settings)})
    _print_config(config)
    print("scenario_id,eps_max,solves,status")
    code = EXIT_OK
    for scen in scenarios:
        try:
            res = eps_max(case, scen, tol, settings=settings)
            print(f"{scen.id},{res.eps_max:.9g},{res.solves},{OPTIMAL}")
        except BaseInfeasibleError:
            print(f"{scen.id},,,base-{INFEASIBLE}")
        except UnknownStatusError as exc:
            print(f"{scen.id},,,unknown ({exc})")
            code = EXIT_UNKNOWN
    return code


COMMANDS = {"solve": cmd_solve, "scenarios": cmd_scenarios, "sweep": cmd_sweep, "epsmax": cmd_epsmax}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, CaseParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SamplingExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED


if __name__ == "__main__":
    sys.exit(main())
