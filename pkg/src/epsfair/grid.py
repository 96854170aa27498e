"""DC power-network model and minimum-load-shedding (MLS) programs.

All quantities are per-unit on the case's base MVA.  A line carries a single
flow variable ``p_l = b_l * (theta_from - theta_to)`` bounded by its thermal
limit; each bus balances generation, served demand and net outflow.  The
shed ``d_i in [0, d_i^max]`` of every positive-demand bus is the utility
vector that the fairness constraints act on.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .conic import ConicProgram, LinearExpr, Variable
from .fairness import build_fairness_constraint, jain_index
from .solver import SolverSettings, Status, solve_program

#: base MLS shed (per-unit) above which a damage scenario counts as shedding load
SHED_THRESHOLD = 1e-4

#: exponents for which the p-norm MLS has an SOC representation here
SUPPORTED_P = (1.0, 2.0, 4.0, 8.0, math.inf)

BUNDLED_CASE = "pglib_opf_case14_ieee"


class CaseParseError(ValueError):
    """Malformed MATPOWER case text; the message names the offending line."""


@dataclass(frozen=True)
class Bus:
    id: int
    demand: float  # per-unit active demand; negative values are fixed injections


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    rate: float  # per-unit thermal limit, inf when unlimited


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    dmax: float


@dataclass(frozen=True)
class NetworkCase:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus ids")
        known = set(ids)
        for line in self.lines:
            if line.from_bus not in known or line.to_bus not in known:
                raise ValueError(f"line {line.id} connects unknown bus")
            if line.rate < 0:
                raise ValueError(f"line {line.id} has a negative thermal limit")
        for gen in self.generators:
            if gen.bus not in known:
                raise ValueError(f"generator {gen.id} sits at unknown bus {gen.bus}")
            if gen.pmin > gen.pmax:
                raise ValueError(f"generator {gen.id} has pmin > pmax")
        for load in self.loads:
            if load.bus not in known or load.dmax <= 0:
                raise ValueError(f"load {load.id} is invalid")

    @property
    def line_ids(self) -> tuple[int, ...]:
        return tuple(line.id for line in self.lines)

    def fixed_injection(self, bus_id: int) -> float:
        """Injection from a nonpositive demand (not part of the shed vector)."""
        for bus in self.buses:
            if bus.id == bus_id:
                return -bus.demand if bus.demand < 0 else 0.0
        raise KeyError(bus_id)

    def fingerprint(self) -> str:
        """Short hash of the network data, stable across runs."""
        h = hashlib.sha256()
        h.update(repr((self.base_mva, self.buses, self.lines, self.generators, self.loads)).encode())
        return h.hexdigest()[:16]

    def components(self) -> list[list[int]]:
        """Connected components (sorted bus-id lists), ordered by smallest id."""
        parent = {b.id: b.id for b in self.buses}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for line in self.lines:
            ra, rb = find(line.from_bus), find(line.to_bus)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for bus in sorted(parent):
            groups.setdefault(find(bus), []).append(bus)
        return sorted(groups.values(), key=lambda g: g[0])


# -- MATPOWER ingestion ----------------------------------------------------

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")

# minimum column counts and the columns read from each matrix (0-based)
_MIN_COLS = {"bus": 3, "gen": 10, "branch": 11}


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == "'":
            quoted = not quoted
        elif ch == "%" and not quoted:
            return line[:i]
    return line


def _parse_matrix(lines: list[str], start: int, head: str, name: str):
    rows: list[tuple[int, list[float]]] = []
    i = start
    content = head
    while True:
        done = "]" in content
        if done:
            content = content[: content.index("]")]
        for piece in content.split(";"):
            tokens = piece.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append((i + 1, [float(t) for t in tokens]))
            except ValueError:
                raise CaseParseError(f"line {i + 1}: non-numeric entry in mpc.{name}: {piece.strip()!r}") from None
        if done:
            return rows, i
        i += 1
        if i >= len(lines):
            raise CaseParseError(f"line {start + 1}: mpc.{name} matrix is not closed with ']'")
        content = _strip_comment(lines[i])


def parse_matpower_case(text: str, name: str = "case") -> NetworkCase:
    """Parse the numeric subset of a MATPOWER case file into a per-unit case.

    Reads ``baseMVA`` and the ``bus``, ``gen`` and ``branch`` matrices; other
    fields are skipped.  Out-of-service branches and generators are dropped;
    line and generator ids are their 1-based row numbers in the file, so ids
    stay stable when rows are switched off.  Susceptance is ``1/x``; a zero
    ``rateA`` means unlimited.
    """
    lines = text.splitlines()
    scalars: dict[str, tuple[int, str]] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _ASSIGN.match(raw)
        if m:
            key, rest = m.group(1), m.group(2).strip()
            if rest.startswith("["):
                matrices[key], i = _parse_matrix(lines, i, rest[1:], key)
            elif rest.startswith("{"):
                while "}" not in _strip_comment(lines[i]):
                    i += 1
                    if i >= len(lines):
                        raise CaseParseError(f"mpc.{key} cell array is not closed")
            else:
                scalars[key] = (i + 1, rest.rstrip(";").strip())
        i += 1

    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    lineno, raw_base = scalars["baseMVA"]
    try:
        base = float(raw_base)
    except ValueError:
        raise CaseParseError(f"line {lineno}: baseMVA is not a number: {raw_base!r}") from None
    if not base > 0:
        raise CaseParseError(f"line {lineno}: baseMVA must be positive")
    for key in ("bus", "gen", "branch"):
        if key not in matrices:
            raise CaseParseError(f"missing mpc.{key} matrix")
        rows = matrices[key]
        if not rows and key != "gen":
            raise CaseParseError(f"mpc.{key} matrix is empty")
        width = len(rows[0][1]) if rows else 0
        for lineno, row in rows:
            if len(row) != width:
                raise CaseParseError(
                    f"line {lineno}: mpc.{key} row has {len(row)} columns, expected {width}"
                )
            if len(row) < _MIN_COLS[key]:
                raise CaseParseError(
                    f"line {lineno}: mpc.{key} row has {len(row)} columns, need at least {_MIN_COLS[key]}"
                )

    buses, loads = [], []
    seen = set()
    for lineno, row in matrices["bus"]:
        bid = int(row[0])
        if bid != row[0] or bid in seen:
            raise CaseParseError(f"line {lineno}: invalid or duplicate bus id {row[0]!r}")
        seen.add(bid)
        demand = row[2] / base
        buses.append(Bus(bid, demand))
        if demand > 0:
            loads.append(Load(bid, bid, demand))

    gens = []
    for k, (lineno, row) in enumerate(matrices["gen"], start=1):
        bus = int(row[0])
        if bus not in seen:
            raise CaseParseError(f"line {lineno}: generator at unknown bus {bus}")
        if row[7] <= 0:
            continue
        pmax, pmin = row[8] / base, row[9] / base
        if pmin > pmax:
            raise CaseParseError(f"line {lineno}: generator Pmin {row[9]} exceeds Pmax {row[8]}")
        gens.append(Generator(k, bus, pmin, pmax))

    branches = []
    for k, (lineno, row) in enumerate(matrices["branch"], start=1):
        fbus, tbus = int(row[0]), int(row[1])
        if fbus not in seen or tbus not in seen:
            raise CaseParseError(f"line {lineno}: branch {k} connects unknown bus")
        if row[10] <= 0:
            continue
        x = row[3]
        if not x > 0:
            raise CaseParseError(f"line {lineno}: branch {k} has nonpositive reactance {x}")
        rate = row[5]
        if rate < 0:
            raise CaseParseError(f"line {lineno}: branch {k} has negative rateA")
        branches.append(Line(k, fbus, tbus, 1.0 / x, math.inf if rate == 0 else rate / base))

    return NetworkCase(name, base, tuple(buses), tuple(branches), tuple(gens), tuple(loads))


def load_case(path: str | Path) -> NetworkCase:
    path = Path(path)
    return parse_matpower_case(path.read_text(), name=path.stem)


def bundled_case(name: str = BUNDLED_CASE) -> NetworkCase:
    """One of the case files shipped in ``epsfair/data``."""
    text = resources.files("epsfair").joinpath("data", f"{name}.m").read_text()
    return parse_matpower_case(text, name=name)


def resolve_case(spec: str | Path | None) -> NetworkCase:
    """A path to a ``.m`` file, or the name of a bundled case (default 14-bus)."""
    if spec is None:
        return bundled_case()
    path = Path(spec)
    if path.exists():
        return load_case(path)
    if str(spec) == BUNDLED_CASE or str(spec) in ("case14", "pglib14"):
        return bundled_case()
    raise FileNotFoundError(f"no case file {spec}")


# -- damage scenarios ------------------------------------------------------

@dataclass(frozen=True)
class DamageScenario:
    id: int
    removed: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "removed", tuple(sorted(int(i) for i in self.removed)))
        if len(set(self.removed)) != len(self.removed):
            raise ValueError("scenario removes a line twice")


def apply_damage(case: NetworkCase, scenario: DamageScenario | Iterable[int]) -> NetworkCase:
    """Copy of ``case`` without the scenario's lines."""
    removed = set(scenario.removed if isinstance(scenario, DamageScenario) else scenario)
    unknown = removed - set(case.line_ids)
    if unknown:
        raise ValueError(f"scenario removes unknown line ids {sorted(unknown)}")
    if not removed:
        return case
    lines = tuple(line for line in case.lines if line.id not in removed)
    return replace(case, lines=lines)


class SamplingExhausted(RuntimeError):
    """Raised when the draw budget runs out; ``scenarios`` holds what was found."""

    def __init__(self, message: str, scenarios: list[DamageScenario]):
        super().__init__(message)
        self.scenarios = scenarios


def generate_scenarios(case: NetworkCase, k: int = 5, target: int = 200, seed: int = 0, *,
                       threshold: float = SHED_THRESHOLD, max_draws: int | None = None,
                       settings: SolverSettings | None = None) -> list[DamageScenario]:
    """Draw distinct ``k``-line damage scenarios whose base MLS sheds load.

    Subsets are drawn uniformly with a seeded generator and kept when the
    base MLS is optimal with total shed above ``threshold``.  Output depends
    only on ``(case, k, target, seed, threshold)``.
    """
    ids = case.line_ids
    if not 1 <= k < len(ids):
        raise ValueError(f"k must satisfy 1 <= k < {len(ids)} (number of lines), got {k}")
    if target < 0:
        raise ValueError("target must be nonnegative")
    total = math.comb(len(ids), k)
    budget = max_draws if max_draws is not None else 50 * target + 1000
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    found: list[DamageScenario] = []
    draws = 0
    while len(found) < target:
        if draws >= budget or len(seen) >= total:
            raise SamplingExhausted(
                f"found {len(found)} of {target} scenarios after {draws} draws "
                f"({len(seen)} distinct of {total} possible subsets)", found)
        draws += 1
        pick = tuple(sorted(int(ids[j]) for j in rng.choice(len(ids), size=k, replace=False)))
        if pick in seen:
            continue
        seen.add(pick)
        sol = solve_mls(apply_damage(case, pick), settings=settings)
        if sol.status is Status.OPTIMAL and sol.total_shed > threshold:
            found.append(DamageScenario(len(found), pick, seed))
    return found


@dataclass
class ScenarioSet:
    scenarios: list[DamageScenario]
    seed: int | None = None
    k: int | None = None


def format_scenarios(scenarios: Sequence[DamageScenario], seed: int | None, k: int | None) -> str:
    head = f"# epsfair damage scenarios\n# seed={'' if seed is None else seed} k={'' if k is None else k}\n"
    return head + "".join(",".join(str(i) for i in s.removed) + "\n" for s in scenarios)


def write_scenarios(path: str | Path, scenarios: Sequence[DamageScenario], seed: int | None,
                    k: int | None) -> None:
    """One scenario per line as comma-separated line ids, after a two-line header."""
    Path(path).write_text(format_scenarios(scenarios, seed, k))


def parse_scenarios(text: str) -> ScenarioSet:
    seed = k = None
    scenarios = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            for key, value in re.findall(r"(\w+)=(\S*)", stripped):
                if key == "seed" and value:
                    seed = int(value)
                elif key == "k" and value:
                    k = int(value)
            continue
        if not stripped:
            continue
        try:
            ids = tuple(int(tok) for tok in stripped.split(","))
        except ValueError:
            raise ValueError(f"scenario file line {lineno}: expected comma-separated integers") from None
        scenarios.append(DamageScenario(len(scenarios), ids, seed))
    return ScenarioSet(scenarios, seed, k)


def read_scenarios(path: str | Path) -> ScenarioSet:
    return parse_scenarios(Path(path).read_text())


# -- MLS programs ----------------------------------------------------------

@dataclass
class MlsModel:
    """A built MLS program with handles to its physical variables."""

    case: NetworkCase
    program: ConicProgram
    shed: list[Variable]                 # aligned with case.loads
    dispatch: list[Variable]             # aligned with case.generators
    flow: dict[int, Variable]            # by line id
    angle: dict[int, Variable]           # by bus id
    kind: str = "mls"
    param: float | None = None
    extra: dict = field(default_factory=dict)


def build_mls(case: NetworkCase) -> MlsModel:
    """Minimum total load shed over the DC feasible set.

    The angle of the lowest-id bus of every connected component is fixed to
    zero.  A component with no adjustable injection and zero fixed injection
    has linearly dependent balance rows; its reference-bus row is omitted.
    """
    prog = ConicProgram(f"mls:{case.name}")
    components = case.components()
    ref = {comp[0] for comp in components}

    angle = {b.id: prog.add_variable(0.0, 0.0, f"theta[{b.id}]") if b.id in ref
             else prog.add_variable(name=f"theta[{b.id}]") for b in case.buses}
    flow = {}
    for line in case.lines:
        p = prog.add_variable(-line.rate, line.rate, f"p[{line.id}]")
        flow[line.id] = p
        prog.add_eq(p - line.susceptance * (angle[line.from_bus] - angle[line.to_bus]),
                    name=f"ohm[{line.id}]")
    dispatch = [prog.add_variable(g.pmin, g.pmax, f"pg[{g.id}]") for g in case.generators]
    shed = [prog.add_variable(0.0, ld.dmax, f"d[{ld.id}]") for ld in case.loads]

    injection: dict[int, LinearExpr] = {b.id: LinearExpr(constant=case.fixed_injection(b.id)) for b in case.buses}
    adjustable = {b.id: False for b in case.buses}
    for g, var in zip(case.generators, dispatch):
        injection[g.bus] = injection[g.bus] + var
        if g.pmin < g.pmax:
            adjustable[g.bus] = True
    for ld, var in zip(case.loads, shed):
        injection[ld.bus] = injection[ld.bus] - (ld.dmax - var)
        adjustable[ld.bus] = True
    outflow: dict[int, LinearExpr] = {b.id: LinearExpr() for b in case.buses}
    for line in case.lines:
        outflow[line.from_bus] = outflow[line.from_bus] + flow[line.id]
        outflow[line.to_bus] = outflow[line.to_bus] - flow[line.id]

    skip = set()
    for comp in components:
        if not any(adjustable[b] for b in comp):
            if sum(injection[b].constant for b in comp) == 0.0:
                skip.add(comp[0])
    for b in case.buses:
        if b.id not in skip:
            prog.add_eq(injection[b.id] - outflow[b.id], name=f"balance[{b.id}]")

    prog.minimize(LinearExpr.sum(shed))
    return MlsModel(case, prog, shed, dispatch, flow, angle)


def build_fair_mls(case: NetworkCase, eps: float) -> MlsModel:
    """MLS plus ``kappa(eps, |D|) * ||d||_2 <= sum(d)``."""
    model = build_mls(case)
    if model.shed:
        build_fairness_constraint(model.program, model.shed, eps, name="fair")
    model.kind, model.param = "eps", float(eps)
    return model


def build_pnorm_mls(case: NetworkCase, p: float) -> MlsModel:
    """Minimise ``||d||_p`` over the DC feasible set, ``p`` in ``SUPPORTED_P``.

    ``p = 4, 8`` use ``||d||_p <= t  <=>  sum(r) <= t,  d_i**p <= r_i t**(p-1)``
    with the power constraint written as a chain of hyperbolic cones
    ``g_1**2 <= r t,  g_{j+1}**2 <= g_j t,  d**2 <= g_last t``.
    """
    p = float(p)
    if p not in SUPPORTED_P:
        raise ValueError(f"p = {p:g} is not supported; choose from 1, 2, 4, 8, inf")
    model = build_mls(case)
    model.kind, model.param = "p", p
    prog, d = model.program, model.shed
    if p == 1.0 or not d:
        return model
    t = prog.add_variable(0.0, math.inf, "norm.t")
    if math.isinf(p):
        for i, var in enumerate(d):
            prog.add_le(var - t, name=f"maxshed[{i}]")
    elif p == 2.0:
        prog.add_soc(t, d, name="norm2")
    else:
        levels = int(round(math.log2(p)))
        r = prog.add_variables(len(d), 0.0, math.inf, "norm.r")
        prog.add_le(LinearExpr.sum(r) - t, name="norm.sum")
        for i, var in enumerate(d):
            prev = r[i]
            for j in range(1, levels):
                g = prog.add_variable(0.0, math.inf, f"norm.g[{i},{j}]")
                prog.add_rotated_soc(g, prev, t, name=f"norm.tower[{i},{j}]")
                prev = g
            prog.add_rotated_soc(var, prev, t, name=f"norm.tower[{i},{levels}]")
    prog.minimize(t)
    return model


@dataclass
class MlsSolution:
    status: Status
    shed: np.ndarray | None         # per load, per-unit
    total_shed: float | None
    jain: float | None
    dispatch: np.ndarray | None
    angles: dict[int, float] | None
    flows: dict[int, float] | None
    objective: float | None
    iterations: int
    balance_residual: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def solve_model(model: MlsModel, settings: SolverSettings | None = None) -> MlsSolution:
    res = solve_program(model.program, settings)
    if res.status is not Status.OPTIMAL:
        return MlsSolution(res.status, None, None, None, None, None, None, None, res.raw.iterations)
    shed = np.array([res.value(v) for v in model.shed])
    # numerical noise may leave sheds a hair outside [0, dmax]
    dmax = np.array([ld.dmax for ld in model.case.loads])
    shed = np.clip(shed, 0.0, dmax)
    dispatch = np.array([res.value(v) for v in model.dispatch])
    angles = {b: res.value(v) for b, v in model.angle.items()}
    flows = {l: res.value(v) for l, v in model.flow.items()}
    resid = _balance_residual(model.case, shed, dispatch, flows)
    return MlsSolution(res.status, shed, float(shed.sum()), jain_index(shed) if shed.size else None,
                       dispatch, angles, flows, res.objective, res.raw.iterations, resid)


def _balance_residual(case: NetworkCase, shed, dispatch, flows) -> float:
    net = {b.id: case.fixed_injection(b.id) for b in case.buses}
    for g, pg in zip(case.generators, dispatch):
        net[g.bus] += pg
    for ld, d in zip(case.loads, shed):
        net[ld.bus] -= ld.dmax - d
    for line in case.lines:
        net[line.from_bus] -= flows[line.id]
        net[line.to_bus] += flows[line.id]
    return max((abs(v) for v in net.values()), default=0.0)


def solve_mls(case: NetworkCase, *, eps: float | None = None, p: float | None = None,
              settings: SolverSettings | None = None) -> MlsSolution:
    """Solve the base (neither given), fair (``eps``) or p-norm (``p``) MLS."""
    if eps is not None and p is not None:
        raise ValueError("give eps or p, not both")
    if eps is not None:
        model = build_fair_mls(case, eps)
    elif p is not None:
        model = build_pnorm_mls(case, p)
    else:
        model = build_mls(case)
    return solve_model(model, settings)
