"""Scenario sweeps over the fairness level or the p-norm, and their audits.

A sweep solves one MLS variant per (scenario, parameter) cell and records
a :class:`SweepRow`.  Cells are independent, so they may run in a process
pool; rows are always assembled in (scenario, parameter) order.

Solver outcomes are collapsed to three report statuses: ``optimal``,
``infeasible`` (certified Farkas vector) and ``unknown`` (iteration limit or
numerical failure).  ``unknown`` is never counted as infeasible.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fairness import w_of_eps
from .grid import (
    SUPPORTED_P,
    DamageScenario,
    NetworkCase,
    apply_damage,
    solve_mls,
)
from .solver import SolverSettings, Status

OPTIMAL, INFEASIBLE, UNKNOWN = "optimal", "infeasible", "unknown"

DEFAULT_EPS_GRID = tuple(i / 10 for i in range(11))
DEFAULT_P_SET = SUPPORTED_P

CSV_COLUMNS = ("scenario_id", "kind", "param", "status", "z", "jain", "eta_r_pct", "wall_ms")

# relative slack for "z nondecreasing": z1 >= z0 - Z_TOL * (1 + |z0|)
Z_TOL = 1e-6
JI_TOL = 1e-6


def report_status(status: Status) -> str:
    if status is Status.OPTIMAL:
        return OPTIMAL
    if status is Status.PRIMAL_INFEASIBLE:
        return INFEASIBLE
    return UNKNOWN


@dataclass(frozen=True)
class SweepRow:
    scenario_id: int
    kind: str            # "eps" or "p"
    param: float
    status: str
    z: float | None      # total shed sum(d*)
    jain: float | None
    eta_r_pct: float | None
    wall_ms: float | None = None


@dataclass
class SweepReport:
    kind: str
    rows: list[SweepRow]
    case_fingerprint: str
    grid: tuple[float, ...]
    seed: int | None = None
    loads: int | None = None   # fairness population size n
    config: dict[str, str] = field(default_factory=dict)

    def rows_for(self, scenario_id: int) -> list[SweepRow]:
        return [r for r in self.rows if r.scenario_id == scenario_id]

    def scenario_ids(self) -> list[int]:
        return sorted({r.scenario_id for r in self.rows})

    def summary(self) -> list[dict]:
        """Per-parameter counts plus JI and efficiency-loss quartiles."""
        out = []
        for param in self.grid:
            rows = [r for r in self.rows if r.param == param]
            ji = [r.jain for r in rows if r.status == OPTIMAL and r.jain is not None]
            eta = [r.eta_r_pct for r in rows if r.eta_r_pct is not None]
            out.append({
                "param": param,
                "optimal": sum(r.status == OPTIMAL for r in rows),
                "infeasible": sum(r.status == INFEASIBLE for r in rows),
                "unknown": sum(r.status == UNKNOWN for r in rows),
                "jain_quartiles": _quartiles(ji),
                "eta_quartiles": _quartiles(eta),
            })
        return out


def _quartiles(values) -> tuple[float, float, float] | None:
    if not values:
        return None
    q = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])


# -- sweeps ----------------------------------------------------------------

def _solve_cell(case: NetworkCase, removed: tuple[int, ...], kind: str, param: float,
                settings: SolverSettings | None, timing: bool):
    start = time.perf_counter()
    damaged = apply_damage(case, removed)
    if kind == "eps":
        sol = solve_mls(damaged, eps=param, settings=settings)
    else:
        sol = solve_mls(damaged, p=param, settings=settings)
    wall = (time.perf_counter() - start) * 1e3 if timing else None
    status = report_status(sol.status)
    if status != OPTIMAL:
        return status, None, None, wall
    return status, sol.total_shed, sol.jain, wall


_WORKER_CASE: NetworkCase | None = None


def _init_worker(case):
    global _WORKER_CASE
    _WORKER_CASE = case


def _pool_cell(args):
    return _solve_cell(_WORKER_CASE, *args)


def _run_cells(case, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [_solve_cell(case, *t) for t in tasks]
    chunk = max(1, len(tasks) // (8 * jobs))
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(case,)) as pool:
        return list(pool.map(_pool_cell, tasks, chunksize=chunk))


def efficiency_loss(z: float | None, z_base: float | None) -> float | None:
    """``(z - z_base) / z * 100``; undefined unless both exist and ``z_base > 0``."""
    if z is None or z_base is None or not z_base > 0 or not z > 0:
        return None
    return (z - z_base) / z * 100.0


def _sweep(case, scenarios, kind, grid, baseline, settings, jobs, timing, seed, config):
    grid = tuple(float(g) for g in grid)
    if len(set(grid)) != len(grid):
        raise ValueError("sweep grid has duplicate values")
    if baseline not in grid:
        raise ValueError(f"sweep grid must contain the baseline {kind}={baseline:g}")
    scenarios = list(scenarios)
    tasks = [(s.removed, kind, g, settings, timing) for s in scenarios for g in grid]
    results = _run_cells(case, tasks, jobs)
    rows = []
    pos = 0
    for scen in scenarios:
        cells = results[pos:pos + len(grid)]
        pos += len(grid)
        base = cells[grid.index(baseline)]
        z_base = base[1] if base[0] == OPTIMAL else None
        for g, (status, z, jain, wall) in zip(grid, cells):
            eta = efficiency_loss(z, z_base) if status == OPTIMAL else None
            rows.append(SweepRow(scen.id, kind, g, status, z, jain, eta, wall))
    return SweepReport(kind, rows, case.fingerprint(), grid, seed, len(case.loads), dict(config or {}))


def eps_sweep(case: NetworkCase, scenarios: Sequence[DamageScenario],
              eps_grid: Iterable[float] = DEFAULT_EPS_GRID, *, settings: SolverSettings | None = None,
              jobs: int = 1, timing: bool = False, seed: int | None = None,
              config: dict | None = None) -> SweepReport:
    """Solve the fair MLS for every (scenario, eps); eta_r relative to eps = 0."""
    grid = tuple(float(e) for e in eps_grid)
    for e in grid:
        if not 0.0 <= e <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {e!r}")
    return _sweep(case, scenarios, "eps", grid, 0.0, settings, jobs, timing, seed, config)


def pnorm_sweep(case: NetworkCase, scenarios: Sequence[DamageScenario],
                p_set: Iterable[float] = DEFAULT_P_SET, *, settings: SolverSettings | None = None,
                jobs: int = 1, timing: bool = False, seed: int | None = None,
                config: dict | None = None) -> SweepReport:
    """Solve the p-norm MLS for every (scenario, p); eta_r relative to p = 1."""
    grid = tuple(float(p) for p in p_set)
    for p in grid:
        if p not in SUPPORTED_P:
            raise ValueError(f"p = {p:g} is not supported; choose from 1, 2, 4, 8, inf")
    return _sweep(case, scenarios, "p", grid, 1.0, settings, jobs, timing, seed, config)


# -- eps_max -----------------------------------------------------------------

class UnknownStatusError(RuntimeError):
    """A solve inside a monotonicity-based search was neither optimal nor certified infeasible."""


class BaseInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class EpsMaxResult:
    eps_max: float
    solves: int
    lo: float
    hi: float


def _feasible_at(case, eps, settings) -> bool:
    status = report_status(solve_mls(case, eps=eps, settings=settings).status)
    if status == UNKNOWN:
        raise UnknownStatusError(f"solver returned no certified status at eps={eps!r}")
    return status == OPTIMAL


def eps_max(case: NetworkCase, scenario: DamageScenario | Iterable[int] | None = None,
            tol_eps: float = 1e-3, *, settings: SolverSettings | None = None) -> EpsMaxResult:
    """Largest feasible fairness level, by bisection on [0, 1].

    Keeps ``lo`` feasible and ``hi`` infeasible, so it needs at most
    ``ceil(log2(1/tol_eps)) + 2`` solves.  Relies on feasibility being
    down-closed in eps.
    """
    if not 0 < tol_eps < 1:
        raise ValueError("tol_eps must lie in (0, 1)")
    damaged = apply_damage(case, scenario) if scenario is not None else case
    solves = 1
    if not _feasible_at(damaged, 0.0, settings):
        raise BaseInfeasibleError("the problem is infeasible at eps = 0")
    solves += 1
    if _feasible_at(damaged, 1.0, settings):
        return EpsMaxResult(1.0, solves, 1.0, 1.0)
    lo, hi = 0.0, 1.0
    while hi - lo > tol_eps:
        mid = 0.5 * (lo + hi)
        solves += 1
        if _feasible_at(damaged, mid, settings):
            lo = mid
        else:
            hi = mid
    return EpsMaxResult(lo, solves, lo, hi)


def eps_max_scan(case: NetworkCase, scenario: DamageScenario | Iterable[int] | None = None,
                 step: float = 1e-3, *, nested: bool = True,
                 settings: SolverSettings | None = None) -> EpsMaxResult:
    """Grid-scan reference for :func:`eps_max`: the last feasible multiple of ``step``.

    ``nested=False`` solves every grid point.  ``nested=True`` scans the full
    0.1 grid, then only the decade (and sub-decade) bracketing the first
    infeasible point, refining down to ``step``; it also raises if the coarse
    scan finds a feasible point after an infeasible one.
    """
    damaged = apply_damage(case, scenario) if scenario is not None else case
    count = int(round(1.0 / step))
    if not math.isclose(count * step, 1.0):
        raise ValueError("step must divide 1")
    solves = 0

    def feasible(k: int) -> bool:
        nonlocal solves
        solves += 1
        return _feasible_at(damaged, k / count, settings)

    if not feasible(0):
        raise BaseInfeasibleError("the problem is infeasible at eps = 0")
    if not nested:
        flags = [True] + [feasible(k) for k in range(1, count + 1)]
        last = max(k for k, f in enumerate(flags) if f)
        if not all(flags[:last + 1]):
            raise RuntimeError("scan found a feasible point after an infeasible one")
        return EpsMaxResult(last / count, solves, last / count, min(1.0, (last + 1) / count))

    # coarse-to-fine: the bracket is [lo, lo + width) in grid units, lo feasible
    lo, width = 0, count + 1
    levels = []
    w = count
    while w > 1:
        w = max(1, w // 10)
        levels.append(w)
    for level, sub in enumerate(levels):
        ks = list(range(lo + sub, min(lo + width, count + 1), sub))
        flags = [feasible(k) for k in ks]
        if level == 0 and any(flags[i] and not all(flags[:i]) for i in range(len(flags))):
            raise RuntimeError("coarse scan found a feasible point after an infeasible one")
        first_bad = next((i for i, f in enumerate(flags) if not f), None)
        if first_bad is None:
            if ks and ks[-1] == count:
                return EpsMaxResult(1.0, solves, 1.0, 1.0)
            lo = ks[-1] if ks else lo
        else:
            lo = ks[first_bad - 1] if first_bad > 0 else lo
        width = sub
    return EpsMaxResult(lo / count, solves, lo / count, (lo + 1) / count)


def eps_for_efficiency(case: NetworkCase, scenario: DamageScenario | Iterable[int] | None = None,
                       max_loss_pct: float = 5.0, tol_eps: float = 1e-3, *,
                       settings: SolverSettings | None = None) -> EpsMaxResult:
    """Largest eps whose efficiency loss stays within ``max_loss_pct``.

    The second reading of "bisect on eps to hit a trade-off": since the
    total shed is nondecreasing in eps, so is the loss, and an infeasible eps
    counts as over budget.
    """
    if max_loss_pct < 0:
        raise ValueError("max_loss_pct must be nonnegative")
    damaged = apply_damage(case, scenario) if scenario is not None else case

    def total(eps):
        sol = solve_mls(damaged, eps=eps, settings=settings)
        status = report_status(sol.status)
        if status == UNKNOWN:
            raise UnknownStatusError(f"solver returned no certified status at eps={eps!r}")
        return sol.total_shed if status == OPTIMAL else None

    z0 = total(0.0)
    if z0 is None:
        raise BaseInfeasibleError("the problem is infeasible at eps = 0")
    solves = 1

    def within(eps):
        nonlocal solves
        solves += 1
        z = total(eps)
        if z is None:
            return False
        loss = efficiency_loss(z, z0)
        return loss is None or loss <= max_loss_pct

    if within(1.0):
        return EpsMaxResult(1.0, solves, 1.0, 1.0)
    lo, hi = 0.0, 1.0
    while hi - lo > tol_eps:
        mid = 0.5 * (lo + hi)
        if within(mid):
            lo = mid
        else:
            hi = mid
    return EpsMaxResult(lo, solves, lo, hi)


# -- audits ----------------------------------------------------------------

@dataclass
class AuditSummary:
    kind: str
    scenarios: int
    skipped_unknown: list[int]
    z_violations: list[tuple]           # (scenario, param_a, param_b, z_a, z_b)
    order_violations: list[tuple]       # (scenario, infeasible_param, later_feasible_param)
    jain_violations: list[tuple]        # (scenario, param_a, param_b, ji_a, ji_b)
    bound_violations: list[tuple]       # (scenario, eps, ji, w(eps))
    eta_violations: list[tuple]         # (scenario, param, eta) with eta < 0 or decreasing

    @property
    def jain_nonmonotone_scenarios(self) -> list[int]:
        return sorted({v[0] for v in self.jain_violations})

    def ok(self) -> bool:
        """The theorem-backed checks: z monotone, feasibility down-closed, JI bound, eta."""
        return not (self.z_violations or self.order_violations or self.bound_violations
                    or self.eta_violations)


def _z_slack(z: float) -> float:
    return Z_TOL * (1.0 + abs(z))


def monotonicity_audit(report: SweepReport) -> AuditSummary:
    """Check the sweep against the monotonicity facts it should satisfy.

    Scenarios with any ``unknown`` row are skipped and listed.  For eps
    sweeps: z nondecreasing over the eps grid, no feasible eps above an
    infeasible one, ``JI >= w(eps)`` and eta_r nonnegative and nondecreasing
    (with the z slack carried over).  Achieved-JI decreases are listed for
    both kinds, but only informational.
    """
    z_v, order_v, ji_v, bound_v, eta_v, skipped = [], [], [], [], [], []
    ids = report.scenario_ids()
    for sid in ids:
        rows = sorted(report.rows_for(sid), key=lambda r: r.param)
        if any(r.status == UNKNOWN for r in rows):
            skipped.append(sid)
            continue
        opt = [r for r in rows if r.status == OPTIMAL]
        for a, b in zip(opt, opt[1:]):
            if a.jain is not None and b.jain is not None and b.jain < a.jain - JI_TOL:
                ji_v.append((sid, a.param, b.param, a.jain, b.jain))
        if report.kind != "eps":
            continue
        seen_infeasible = None
        for r in rows:
            if r.status == INFEASIBLE and seen_infeasible is None:
                seen_infeasible = r.param
            elif r.status == OPTIMAL and seen_infeasible is not None:
                order_v.append((sid, seen_infeasible, r.param))
        for a, b in zip(opt, opt[1:]):
            if b.z < a.z - _z_slack(a.z):
                z_v.append((sid, a.param, b.param, a.z, b.z))
        n = report.loads
        for r in opt:
            if r.jain is not None and n and r.jain < w_of_eps(r.param, n) - JI_TOL:
                bound_v.append((sid, r.param, r.jain, w_of_eps(r.param, n)))
        base = next((r for r in opt if r.param == 0.0), None)
        prev = None
        for r in opt:
            if r.eta_r_pct is None or base is None:
                continue
            # eta = 100 (1 - z0/z); the z slack maps to this much eta slack
            slack = 100.0 * _z_slack(base.z) / r.z
            if r.eta_r_pct < -slack or (prev is not None and r.eta_r_pct < prev - slack):
                eta_v.append((sid, r.param, r.eta_r_pct))
            prev = r.eta_r_pct if prev is None else max(prev, r.eta_r_pct)
    return AuditSummary(report.kind, len(ids), skipped, z_v, order_v, ji_v, bound_v, eta_v)


@dataclass(frozen=True)
class InfeasibilityRow:
    param: float
    infeasible: int
    unknown: int
    optimal: int


def infeasibility_table(report: SweepReport) -> list[InfeasibilityRow]:
    if report.kind != "eps":
        raise ValueError("infeasibility_table needs an eps sweep")
    out = []
    for param in sorted(report.grid):
        rows = [r for r in report.rows if r.param == param]
        out.append(InfeasibilityRow(
            param,
            sum(r.status == INFEASIBLE for r in rows),
            sum(r.status == UNKNOWN for r in rows),
            sum(r.status == OPTIMAL for r in rows),
        ))
    return out


def counts_nondecreasing(table: Sequence[InfeasibilityRow]) -> bool:
    return all(b.infeasible >= a.infeasible for a, b in zip(table, table[1:]))


# -- CSV -------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".9g")


def _parse_float(text: str) -> float | None:
    return None if text == "" else float(text)


def format_csv(report: SweepReport) -> str:
    """Comment header (``# key=value`` config lines), column header, one line per row."""
    buf = io.StringIO()
    buf.write("# epsfair sweep report\n")
    meta = {"kind": report.kind, "case_fingerprint": report.case_fingerprint,
            "grid": ",".join(_fmt(g) for g in report.grid),
            "seed": "" if report.seed is None else str(report.seed),
            "loads": "" if report.loads is None else str(report.loads)}
    # report fields win over same-named config entries so re-import is lossless
    extra = {k: v for k, v in report.config.items() if k not in meta}
    for key, value in {**meta, **extra}.items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        writer.writerow([r.scenario_id, r.kind, _fmt(r.param), r.status, _fmt(r.z), _fmt(r.jain),
                         _fmt(r.eta_r_pct), _fmt(r.wall_ms)])
    return buf.getvalue()


def export_csv(report: SweepReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(format_csv(report))
    return path


def parse_csv(text: str) -> SweepReport:
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, sep, value = line[2:].partition("=")
            if sep:
                meta[key] = value
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header!r}; expected {','.join(CSV_COLUMNS)}")
    rows = []
    for rec in reader:
        if len(rec) != len(CSV_COLUMNS):
            raise ValueError(f"CSV row has {len(rec)} fields, expected {len(CSV_COLUMNS)}")
        rows.append(SweepRow(int(rec[0]), rec[1], float(rec[2]), rec[3], _parse_float(rec[4]),
                             _parse_float(rec[5]), _parse_float(rec[6]), _parse_float(rec[7])))
    kind = meta.pop("kind", rows[0].kind if rows else "eps")
    fingerprint = meta.pop("case_fingerprint", "")
    grid_text = meta.pop("grid", "")
    grid = tuple(float(g) for g in grid_text.split(",")) if grid_text else ()
    seed_text = meta.pop("seed", "")
    loads_text = meta.pop("loads", "")
    return SweepReport(kind, rows, fingerprint, grid, int(seed_text) if seed_text else None,
                       int(loads_text) if loads_text else None, meta)


def read_csv(path: str | Path) -> SweepReport:
    return parse_csv(Path(path).read_text())
