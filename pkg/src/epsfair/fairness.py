"""Closed-form epsilon-fairness quantities.

A nonnegative utility vector ``u`` of length ``n`` is *at least eps-fair* when

    (1 - eps + eps * sqrt(n)) * ||u||_2 <= ||u||_1

The scaling ``kappa = 1 - eps + eps*sqrt(n)`` interpolates between the two
sides of the norm equivalence ``||u||_2 <= ||u||_1 <= sqrt(n) ||u||_2``.  The
condition is equivalent to a lower bound ``w(eps) = kappa**2 / n`` on the Jain
index and to an upper bound ``h(eps)`` on the squared coefficient of variation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conic import ConicProgram, ConstraintRef, LinearExpr, as_expr

#: Absolute tolerance on the SOC inequality when testing membership.  Matches
#: the solver's default feasibility tolerance.
FAIRNESS_TOL = 1e-8


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not (0.0 <= eps <= 1.0):
        raise ValueError(f"eps must lie in [0, 1], got {eps!r}")
    return eps


def _check_n(n: int, minimum: int = 1) -> int:
    if int(n) != n or n < minimum:
        raise ValueError(f"n must be an integer >= {minimum}, got {n!r}")
    return int(n)


def as_utility_vector(u) -> np.ndarray:
    """Validate and return ``u`` as a 1-d float array of nonnegative values."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("utility vector must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("utility vector has non-finite entries")
    if np.any(arr < 0):
        raise ValueError("utility vector must be nonnegative")
    return arr


def kappa(eps: float, n: int) -> float:
    """Return ``1 - eps + eps*sqrt(n)``, which ranges over ``[1, sqrt(n)]``."""
    eps = _check_eps(eps)
    n = _check_n(n)
    return 1.0 - eps + eps * math.sqrt(n)


def w_of_eps(eps: float, n: int) -> float:
    """Jain-index level equivalent to exact eps-fairness, ``kappa**2 / n``."""
    return kappa(eps, n) ** 2 / n


def eps_from_jain(jain: float, n: int) -> float:
    """Invert :func:`w_of_eps`: the eps whose Jain-index level is ``jain``."""
    n = _check_n(n, minimum=2)
    jain = float(jain)
    lo = 1.0 / n
    # admit rounding noise at the endpoints, then clamp
    slack = 1e-12
    if not (lo - slack <= jain <= 1.0 + slack):
        raise ValueError(f"Jain index must lie in [1/n, 1] = [{lo:.6g}, 1], got {jain!r}")
    jain = min(max(jain, lo), 1.0)
    eps = (math.sqrt(n * jain) - 1.0) / (math.sqrt(n) - 1.0)
    return min(max(eps, 0.0), 1.0)


def h_of_eps(eps: float, n: int) -> float:
    """Upper bound on the squared coefficient of variation implied by eps.

    Decreases strictly from ``n`` at ``eps=0`` to ``0`` at ``eps=1``.
    """
    n = _check_n(n, minimum=2)
    k = kappa(eps, n)
    return n / (n - 1.0) * (n / k**2 - 1.0)


def jain_index(u) -> float:
    """Jain et al. index ``(sum u)^2 / (n * sum u^2)``, in ``[1/n, 1]``.

    The all-zero vector has no well-defined index; it is assigned 1 (zero
    everywhere is perfectly equal).  Use :func:`jain_index_flagged` to learn
    whether that convention was applied.
    """
    return jain_index_flagged(u)[0]


def jain_index_flagged(u) -> tuple[float, bool]:
    """Return ``(index, degenerate)``; ``degenerate`` is True for ``u == 0``."""
    arr = as_utility_vector(u)
    sq = float(np.dot(arr, arr))
    if sq == 0.0:
        return 1.0, True
    total = float(arr.sum())
    value = total * total / (arr.size * sq)
    # cancellation can push a constant vector a hair above 1
    return min(value, 1.0), False


@dataclass(frozen=True)
class FairnessStats:
    """Dispersion summary of a utility vector.

    ``cv`` is ``None`` when the mean is zero.
    """

    n: int
    mean: float
    variance: float
    cv: float | None
    jain: float

    @property
    def cv_squared(self) -> float | None:
        return None if self.cv is None else self.cv**2


def sample_stats(u) -> FairnessStats:
    """Sample mean, variance (divisor ``n-1``), coefficient of variation, Jain index."""
    arr = as_utility_vector(u)
    n = arr.size
    if n < 2:
        raise ValueError("sample statistics need n >= 2")
    l1 = float(arr.sum())
    l2sq = float(np.dot(arr, arr))
    mean = l1 / n
    variance = max((l2sq - n * mean * mean) / (n - 1), 0.0)
    cv = None if mean == 0.0 else math.sqrt(variance) / mean
    return FairnessStats(n=n, mean=mean, variance=variance, cv=cv, jain=jain_index(arr))


def is_at_least_eps_fair(u, eps: float, tol: float = FAIRNESS_TOL) -> bool:
    """Test ``kappa(eps, n) * ||u||_2 <= ||u||_1 + tol``."""
    arr = as_utility_vector(u)
    k = kappa(eps, arr.size)
    return k * float(np.linalg.norm(arr)) <= float(arr.sum()) + tol


def build_fairness_constraint(
    program: ConicProgram,
    utilities: Sequence,
    eps: float,
    *,
    name: str = "fair",
) -> ConstraintRef:
    """Add ``kappa * ||u||_2 <= sum(u)`` to ``program`` as one SOC constraint.

    ``sum(u)`` stands in for ``||u||_1``, which is only valid when every
    utility expression is nonnegative on the feasible set.  When an entry is a
    bare variable its lower bound is checked; general expressions are the
    caller's responsibility.

    An epigraph variable ``t = sum(u) / kappa`` is introduced and the cone
    ``||u||_2 <= t`` is returned.  At ``eps == 1`` the cone only contains
    equal vectors, so ``u_i == u_0`` is added instead (it has no interior,
    which interior-point methods handle badly); the last equality is returned.
    """
    eps = _check_eps(eps)
    exprs = [as_expr(u) for u in utilities]
    if not exprs:
        raise ValueError("fairness constraint needs at least one utility")
    for e in exprs:
        var = e.single_variable()
        if var is not None and program.bounds(var)[0] < 0:
            raise ValueError(
                f"utility variable {program.var_name(var)} may be negative; "
                "the 1-norm identity needs nonnegative utilities"
            )
    if len(exprs) == 1:
        # kappa = 1 and |u| <= u is just u >= 0
        return program.add_ge(exprs[0], name=name)
    if eps == 1.0:
        # equality case of Cauchy-Schwarz: the cone has no interior, so state it linearly
        ref = None
        for i, e in enumerate(exprs[1:], start=1):
            ref = program.add_eq(e - exprs[0], name=f"{name}.equal[{i}]")
        return ref
    k = kappa(eps, len(exprs))
    total = LinearExpr.sum(exprs)
    t = program.add_variable(0.0, math.inf, name=f"{name}.t")
    program.add_eq(t - total * (1.0 / k), name=f"{name}.epigraph")
    return program.add_soc(t, exprs, name=name)


def alpha_utility(u, alpha: float) -> float:
    """alpha-fair utility; ``sum log u`` at ``alpha == 1``.  Evaluation only."""
    arr = as_utility_vector(u)
    alpha = float(alpha)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 1.0:
        if np.any(arr == 0):
            raise ValueError("alpha = 1 needs strictly positive utilities (log 0)")
        return float(np.sum(np.log(arr)))
    if alpha > 1.0 and np.any(arr == 0):
        raise ValueError(f"alpha = {alpha} needs strictly positive utilities (0 ** {1 - alpha})")
    return float(np.sum(arr ** (1.0 - alpha)) / (1.0 - alpha))


def p_norm_utility(u, p: float) -> float:
    """Negative p-norm, ``-||u||_p`` for ``p >= 1`` (``p = inf`` allowed)."""
    arr = as_utility_vector(u)
    p = float(p)
    if not p >= 1.0:
        raise ValueError(f"p must be >= 1, got {p!r}")
    if math.isinf(p):
        return -float(arr.max())
    return -float(np.linalg.norm(arr, ord=p))
