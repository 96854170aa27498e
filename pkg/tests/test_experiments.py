import math

import pytest

import epsfair.experiments as ex
from epsfair.experiments import (
    INFEASIBLE,
    OPTIMAL,
    UNKNOWN,
    BaseInfeasibleError,
    SweepReport,
    SweepRow,
    UnknownStatusError,
    counts_nondecreasing,
    efficiency_loss,
    eps_for_efficiency,
    eps_max,
    eps_max_scan,
    eps_sweep,
    format_csv,
    infeasibility_table,
    monotonicity_audit,
    parse_csv,
    pnorm_sweep,
    read_csv,
    export_csv,
)
from epsfair.fairness import eps_from_jain, jain_index
from epsfair.grid import DamageScenario, apply_damage, bundled_case, generate_scenarios
from epsfair.solver import Status

UNEQUAL_EPS_MAX = eps_from_jain(0.9, 2)  # the fairest feasible shed is (6, 3)


@pytest.fixture(scope="module")
def case14():
    return bundled_case()


@pytest.fixture(scope="module")
def scen14(case14):
    return generate_scenarios(case14, 5, 5, seed=7)


def test_efficiency_loss():
    assert efficiency_loss(4, 2) == 50.0
    assert efficiency_loss(2, 2) == 0.0
    assert efficiency_loss(1, 0) is None
    assert efficiency_loss(None, 2) is None


def test_symmetric_sweep(sym_case):
    rep = eps_sweep(sym_case, [DamageScenario(0, ())], (0.0, 0.5, 1.0))
    assert [r.status for r in rep.rows] == [OPTIMAL] * 3
    for r in rep.rows:
        assert r.z == pytest.approx(2.0, abs=1e-6)
        assert r.eta_r_pct == pytest.approx(0.0, abs=1e-4)


def test_sweep_grid_shape(case14, scen14):
    rep = eps_sweep(case14, scen14, (0.0, 0.5, 1.0), seed=7)
    assert len(rep.rows) == len(scen14) * 3
    assert rep.scenario_ids() == [s.id for s in scen14]
    assert all(r.eta_r_pct == 0.0 for r in rep.rows if r.param == 0.0)
    assert rep.loads == 11 and rep.seed == 7
    assert monotonicity_audit(rep).ok()
    summary = rep.summary()
    assert [s["param"] for s in summary] == [0.0, 0.5, 1.0]
    assert sum(s["optimal"] + s["infeasible"] + s["unknown"] for s in summary) == len(rep.rows)


def test_sweep_validation(sym_case):
    scen = [DamageScenario(0, ())]
    with pytest.raises(ValueError, match="baseline"):
        eps_sweep(sym_case, scen, (0.5, 1.0))
    with pytest.raises(ValueError):
        eps_sweep(sym_case, scen, (0.0, 1.5))
    with pytest.raises(ValueError):
        eps_sweep(sym_case, scen, (0.0, 0.0))
    with pytest.raises(ValueError):
        pnorm_sweep(sym_case, scen, (1.0, 3.0))


def test_parallel_rows_match_serial(case14, scen14):
    a = eps_sweep(case14, scen14[:3], (0.0, 0.9), jobs=1)
    b = eps_sweep(case14, scen14[:3], (0.0, 0.9), jobs=2)
    assert a.rows == b.rows


def test_pnorm_sweep(case14, scen14):
    rep = pnorm_sweep(case14, scen14[:2], (1.0, 2.0, math.inf))
    assert rep.kind == "p" and len(rep.rows) == 6
    for sid in rep.scenario_ids():
        rows = rep.rows_for(sid)
        # the utilitarian solution sheds least
        assert all(r.z >= rows[0].z - 1e-6 for r in rows)
    with pytest.raises(ValueError):
        infeasibility_table(rep)


# -- CSV -------------------------------------------------------------------------

def test_csv_round_trip(tmp_path, case14, scen14):
    rep = eps_sweep(case14, scen14[:2], (0.0, 0.6, 1.0), seed=7, config={"k": "5", "seed": "7"})
    text = format_csv(rep)
    lines = text.splitlines()
    assert lines[0] == "# epsfair sweep report"
    header = next(ln for ln in lines if not ln.startswith("#"))
    assert header == ",".join(ex.CSV_COLUMNS)
    assert len([ln for ln in lines if not ln.startswith("#")]) == 1 + len(rep.rows)
    path = export_csv(rep, tmp_path / "r.csv")
    back = read_csv(path)
    assert format_csv(back) == text
    assert back.grid == rep.grid and back.seed == 7 and back.kind == "eps"
    assert [r.status for r in back.rows] == [r.status for r in rep.rows]


def test_csv_keeps_unknown_and_none(case14):
    rows = [SweepRow(0, "eps", 0.0, OPTIMAL, 1.5, 0.5, 0.0),
            SweepRow(0, "eps", 1.0, UNKNOWN, None, None, None)]
    rep = SweepReport("eps", rows, "abc", (0.0, 1.0), None, 2)
    back = parse_csv(format_csv(rep))
    assert back.rows == rows


# -- audits ----------------------------------------------------------------------

def _report(rows, kind="eps", n=2):
    grid = tuple(sorted({r.param for r in rows}))
    return SweepReport(kind, rows, "x", grid, None, n)


def test_audit_flags_synthetic_violations():
    rows = [
        SweepRow(0, "eps", 0.0, OPTIMAL, 2.0, 0.9, 0.0),
        SweepRow(0, "eps", 0.5, OPTIMAL, 1.5, 0.95, -33.3),   # z went down
        SweepRow(1, "eps", 0.0, OPTIMAL, 2.0, 0.9, 0.0),
        SweepRow(1, "eps", 0.5, INFEASIBLE, None, None, None),
        SweepRow(1, "eps", 1.0, OPTIMAL, 3.0, 1.0, 33.3),     # feasible after infeasible
        SweepRow(0, "eps", 1.0, OPTIMAL, 2.5, 0.6, 20.0),     # JI below w(1) = 1
    ]
    audit = monotonicity_audit(_report(rows))
    assert not audit.ok()
    assert [v[0] for v in audit.z_violations] == [0]
    assert audit.order_violations == [(1, 0.5, 1.0)]
    assert audit.bound_violations and audit.bound_violations[0][:2] == (0, 1.0)
    assert audit.eta_violations


def test_audit_skips_unknown_scenarios():
    rows = [SweepRow(0, "eps", 0.0, OPTIMAL, 2.0, 0.9, 0.0),
            SweepRow(0, "eps", 0.5, UNKNOWN, None, None, None),
            SweepRow(0, "eps", 1.0, OPTIMAL, 1.0, 1.0, -100.0)]
    audit = monotonicity_audit(_report(rows))
    assert audit.skipped_unknown == [0]
    assert audit.ok()
    table = infeasibility_table(_report(rows))
    assert [(t.infeasible, t.unknown, t.optimal) for t in table] == [(0, 0, 1), (0, 1, 0), (0, 0, 1)]


def test_pnorm_audit_lists_jain_decreases():
    rows = [SweepRow(0, "p", 1.0, OPTIMAL, 2.0, 0.8, 0.0),
            SweepRow(0, "p", 2.0, OPTIMAL, 2.1, 0.7, 4.7)]
    audit = monotonicity_audit(_report(rows, "p"))
    assert audit.jain_nonmonotone_scenarios == [0]
    assert audit.ok()


def test_counts_nondecreasing():
    rows = [SweepRow(0, "eps", 0.0, OPTIMAL, 1.0, 1.0, 0.0),
            SweepRow(0, "eps", 1.0, INFEASIBLE, None, None, None)]
    assert counts_nondecreasing(infeasibility_table(_report(rows)))
    swapped = [SweepRow(0, "eps", 0.0, INFEASIBLE, None, None, None),
               SweepRow(0, "eps", 1.0, OPTIMAL, 1.0, 1.0, 0.0)]
    assert not counts_nondecreasing(infeasibility_table(_report(swapped)))


def test_unknown_never_counted_infeasible(monkeypatch, sym_case):
    real = ex.solve_mls

    def flaky(case, *, eps=None, p=None, settings=None):
        sol = real(case, eps=eps, p=p, settings=settings)
        if eps == 0.5:
            sol.status = Status.NUMERICAL_FAILURE
        return sol

    monkeypatch.setattr(ex, "solve_mls", flaky)
    rep = eps_sweep(sym_case, [DamageScenario(0, ())], (0.0, 0.5, 1.0))
    assert [r.status for r in rep.rows] == [OPTIMAL, UNKNOWN, OPTIMAL]
    assert rep.rows[1].z is None
    assert infeasibility_table(rep)[1].infeasible == 0
    with pytest.raises(UnknownStatusError):
        eps_max_scan(sym_case, step=0.1, nested=False)


# -- eps_max ---------------------------------------------------------------------

def test_eps_max_symmetric_is_one(sym_case):
    res = eps_max(sym_case)
    assert res.eps_max == 1.0 and res.solves == 2


def test_eps_max_isolated_load(unequal_case):
    res = eps_max(unequal_case, [1])
    assert res.eps_max == pytest.approx(UNEQUAL_EPS_MAX, abs=1e-3)
    assert res.lo <= UNEQUAL_EPS_MAX <= res.hi
    assert res.solves <= 12
    scan = eps_max_scan(unequal_case, [1])
    assert scan.eps_max == pytest.approx(UNEQUAL_EPS_MAX, abs=1e-3)
    assert scan.lo <= UNEQUAL_EPS_MAX <= scan.hi
    assert abs(scan.eps_max - res.eps_max) <= 1e-3


def test_nested_scan_matches_full_scan(unequal_case):
    full = eps_max_scan(unequal_case, [1], step=0.01, nested=False)
    nested = eps_max_scan(unequal_case, [1], step=0.01)
    assert full.eps_max == nested.eps_max == 0.82
    assert nested.solves < full.solves


def test_eps_max_base_infeasible(sym_case, monkeypatch):
    monkeypatch.setattr(ex, "_feasible_at", lambda case, eps, settings: False)
    with pytest.raises(BaseInfeasibleError):
        eps_max(sym_case)
    with pytest.raises(ValueError):
        eps_max(sym_case, tol_eps=0)


def test_eps_max_on_14bus(case14):
    sc = DamageScenario(0, (1, 8, 9, 14, 19))
    res = eps_max(case14, sc)
    assert res.solves <= 12
    scan = eps_max_scan(case14, sc)
    assert abs(res.eps_max - scan.eps_max) <= 1e-3


def test_eps_for_efficiency(unequal_case):
    # on the cut fixture the base shed is (6, 0); eps only raises d3
    res = eps_for_efficiency(unequal_case, [1], max_loss_pct=10.0)
    z = 6.0 / (1 - 0.10)  # loss 10% at z = 6.667, i.e. d3 = 2/3
    d3 = z - 6.0
    target = eps_from_jain(jain_index([6.0, d3]), 2)
    assert res.eps_max == pytest.approx(target, abs=1.5e-3)
    with pytest.raises(ValueError):
        eps_for_efficiency(unequal_case, [1], max_loss_pct=-1)


def test_eps_max_scan_rejects_bad_step(sym_case):
    with pytest.raises(ValueError):
        eps_max_scan(sym_case, step=0.3)


def test_apply_damage_untouched(case14):
    before = case14.fingerprint()
    apply_damage(case14, [1, 2])
    assert case14.fingerprint() == before
