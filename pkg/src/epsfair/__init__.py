"""epsilon-fairness as one second-order cone constraint, with a small LP/SOCP
interior-point solver and a DC minimum-load-shedding case study."""

__version__ = "0.1.0"

from .conic import ConicProgram, LinearExpr, StandardConicForm, Variable
from .fairness import (
    alpha_utility,
    build_fairness_constraint,
    eps_from_jain,
    h_of_eps,
    is_at_least_eps_fair,
    jain_index,
    kappa,
    p_norm_utility,
    sample_stats,
    w_of_eps,
)
from .grid import (
    DamageScenario,
    NetworkCase,
    apply_damage,
    build_fair_mls,
    build_mls,
    build_pnorm_mls,
    bundled_case,
    generate_scenarios,
    parse_matpower_case,
    solve_mls,
)
from .solver import Solution, SolverSettings, Status, solve, solve_program
from .experiments import (
    SweepReport,
    SweepRow,
    eps_max,
    eps_sweep,
    export_csv,
    infeasibility_table,
    monotonicity_audit,
    pnorm_sweep,
    read_csv,
)
