"""Homogeneous self-dual interior-point solver for LP + SOC standard forms.

Solves ``min c@x  s.t.  A@x == b,  x in K`` together with its dual
``max b@y  s.t.  A.T@y + s == c,  s in K*`` through the embedding

    A x - b tau            = 0
    -A.T y - s + c tau     = 0
    b@y - c@x - kappa      = 0,      (x, s) in K x K*,  tau, kappa >= 0

with a Mehrotra predictor-corrector path-following method and Nesterov-Todd
scaling.  A limit point with ``tau > 0`` is an optimal primal-dual pair; with
``kappa > 0`` it carries an infeasibility certificate.

Free columns are kept in the KKT system directly (no splitting): their block
of the scaling matrix is zero, the static regularisation keeps the matrix
nonsingular and a pivoting sparse LU plus iterative refinement keeps the
solves accurate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .certificates import verify_dual_infeasibility, verify_primal_infeasibility
from .cones import ConeLayout, NTScaling
from .conic import ConicProgram, LinearExpr, StandardConicForm, Variable, as_expr

logger = logging.getLogger(__name__)


class Status(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"

    @property
    def certified(self) -> bool:
        """True for outcomes backed by a convergence or certificate test."""
        return self in (Status.OPTIMAL, Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE)


@dataclass(frozen=True)
class SolverSettings:
    feastol: float = 1e-8
    gaptol: float = 1e-8
    certtol: float = 1e-8
    max_iter: int = 200
    regularization: float = 1e-10
    refine_steps: int = 5
    step_fraction: float = 0.99
    verbose: bool = False

    def __post_init__(self):
        for name in ("feastol", "gaptol", "certtol", "regularization"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive, got {value!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be an integer >= 1, got {self.max_iter!r}")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class Solution:
    """Outcome of :func:`solve` on a standard form.

    ``x``, ``y``, ``s`` are the primal point, equality multipliers and dual
    slacks.  For ``PRIMAL_INFEASIBLE`` the Farkas vector (unit 2-norm) is in
    ``certificate`` and in ``y``; for ``DUAL_INFEASIBLE`` the improving ray is
    in ``certificate`` and in ``x``.  ``objective`` is ``c@x`` and is only set
    for optimal outcomes.
    """

    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float | None
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    certificate: np.ndarray | None = None
    message: str = ""


class _KKT:
    """Quasi-definite system ``[[-(H + d I), A'], [A, d I]]`` with a fixed pattern.

    Only the ``H`` values change between iterations, so the COO-to-CSC
    permutation is computed once.  Factorised with SuperLU (threshold partial
    pivoting): free columns put a pivot of size ``d`` on the diagonal, and a
    fixed-order LDL' breaks down on those near convergence.
    """

    def __init__(self, A: sp.csc_matrix, layout: ConeLayout, reg: float, refine: int):
        m, n = A.shape
        self.m, self.n, self.reg, self.refine = m, n, reg, refine
        in_soc = np.zeros(n, dtype=bool)
        tl_r, tl_c = [], []
        for start, dim in layout.socs:
            in_soc[start:start + dim] = True
            idx = np.arange(start, start + dim)
            tl_r.append(np.repeat(idx, dim))
            tl_c.append(np.tile(idx, dim))
        self.diag_idx = np.flatnonzero(~in_soc)
        self.nonneg_pos = np.searchsorted(self.diag_idx, layout.nonneg)
        self.soc_diag_mask = [
            (np.repeat(np.arange(dim), dim) == np.tile(np.arange(dim), dim)) for _, dim in layout.socs
        ]
        Acoo = A.tocoo()
        rows = np.concatenate([self.diag_idx, *tl_r, Acoo.col, n + Acoo.row, n + np.arange(m)])
        cols = np.concatenate([self.diag_idx, *tl_c, n + Acoo.row, Acoo.col, n + np.arange(m)])
        nnz = rows.size
        marker = sp.coo_matrix((np.arange(1, nnz + 1, dtype=float), (rows, cols)), shape=(n + m, n + m)).tocsc()
        if marker.nnz != nnz:
            raise RuntimeError("KKT pattern has duplicate entries")
        self.perm = marker.data.astype(np.int64) - 1
        self.pattern = marker
        self.a_vals = Acoo.data.astype(float)
        self.tail = np.full(m, reg)
        self.solver = None
        self.matrix = None

    def factor(self, h_diag: np.ndarray, h_dense: list[np.ndarray]) -> None:
        diag = np.full(self.diag_idx.size, -self.reg)
        diag[self.nonneg_pos] -= h_diag
        dense = [-(blk.ravel() + self.reg * mask) for blk, mask in zip(h_dense, self.soc_diag_mask)]
        data = np.concatenate([diag, *dense, self.a_vals, self.a_vals, self.tail])
        mat = self.pattern.copy()
        mat.data = data[self.perm]
        self.matrix = mat
        self.solver = spla.splu(mat, permc_spec="COLAMD")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        z = self.solver.solve(rhs)
        sign = np.concatenate([np.full(self.n, self.reg), np.full(self.m, -self.reg)])
        scale = 1.0 + float(np.max(np.abs(rhs)))
        for _ in range(self.refine):
            resid = rhs - (self.matrix @ z + sign * z)
            if float(np.max(np.abs(resid))) <= 1e-15 * scale:
                break
            z = z + self.solver.solve(resid)
        return z


def _presolve(form: StandardConicForm, layout: ConeLayout):
    """Drop empty rows and empty free columns.

    Returns ``(keep_rows, keep_cols, early)``; ``early`` is a
    ``(status, certificate)`` pair when presolve alone decides the problem.
    """
    A = form.A
    m, n = A.shape
    row_nnz = np.bincount(A.indices[A.data != 0], minlength=m) if A.nnz else np.zeros(m, dtype=int)
    empty_rows = np.flatnonzero(row_nnz == 0)
    for r in empty_rows:
        if form.b[r] != 0.0:
            cert = np.zeros(m)
            cert[r] = math.copysign(1.0, form.b[r])
            return None, None, (Status.PRIMAL_INFEASIBLE, cert)
    col_nnz = np.diff(A.indptr) if A.nnz else np.zeros(n, dtype=int)
    empty_free = [j for j in layout.free if col_nnz[j] == 0]
    for j in empty_free:
        if form.c[j] != 0.0:
            ray = np.zeros(n)
            ray[j] = -math.copysign(1.0, form.c[j])
            return None, None, (Status.DUAL_INFEASIBLE, ray)
    keep_rows = np.setdiff1d(np.arange(m), empty_rows)
    keep_cols = np.setdiff1d(np.arange(n), np.array(empty_free, dtype=np.int64))
    return keep_rows, keep_cols, None


def solve(form: StandardConicForm, settings: SolverSettings | None = None) -> Solution:
    """Solve a standard conic form to optimality or an infeasibility certificate.

    Termination, with ``xh = x/tau`` etc.:

    * optimal: ``||A xh - b|| / (1 + ||b||) <= feastol``,
      ``||A.T yh + sh - c|| / (1 + ||c||) <= feastol`` and
      ``|c@xh - b@yh| / max(1, min(|c@xh|, |b@yh|)) <= gaptol``;
    * primal infeasible: ``kappa > tau``, ``b@y > 0``,
      the dual-cone violation of ``-A.T y`` is at most ``certtol/2 * b@y`` and the independent Farkas check
      passes (otherwise ``NUMERICAL_FAILURE``);
    * dual infeasible: the mirror-image test on ``x``.

    ``ITERATION_LIMIT`` and ``NUMERICAL_FAILURE`` carry no claim about the
    problem and must be treated as "unknown".
    """
    settings = settings or SolverSettings()
    layout = ConeLayout(form.cones)
    m, n = form.A.shape
    keep_rows, keep_cols, early = _presolve(form, layout)
    if early is not None:
        status, cert = early
        if status is Status.PRIMAL_INFEASIBLE:
            return Solution(status, np.zeros(n), cert, np.zeros(n), None, math.nan, math.nan, math.nan, 0,
                            certificate=cert, message="empty row with nonzero right-hand side")
        return Solution(status, cert, np.zeros(m), np.zeros(n), None, math.nan, math.nan, math.nan, 0,
                        certificate=cert, message="empty free column with nonzero cost")

    if keep_rows.size == m and keep_cols.size == n:
        sub_A, sub_b, sub_c, sub_layout = form.A, np.asarray(form.b, float), np.asarray(form.c, float), layout
    else:
        sub_A = form.A[keep_rows][:, keep_cols].tocsc()
        sub_b = np.asarray(form.b, float)[keep_rows]
        sub_c = np.asarray(form.c, float)[keep_cols]
        sub_layout = ConeLayout(_reduced_blocks(form.cones, keep_cols))

    res = _hsd(sub_A, sub_b, sub_c, sub_layout, settings)

    x = np.zeros(n)
    y = np.zeros(m)
    s = np.zeros(n)
    x[keep_cols] = res.x
    y[keep_rows] = res.y
    s[keep_cols] = res.s
    res.x, res.y, res.s = x, y, s
    if res.status is Status.PRIMAL_INFEASIBLE:
        res.certificate = y
        check = verify_primal_infeasibility(form.A, form.b, form.cones, y, settings.certtol)
        if not check.valid:
            res.status = Status.NUMERICAL_FAILURE
            res.message = f"Farkas check failed (margin {check.margin:.3g}, violation {check.violation:.3g})"
    elif res.status is Status.DUAL_INFEASIBLE:
        res.certificate = x
        check = verify_dual_infeasibility(form.A, form.c, form.cones, x, settings.certtol)
        if not check.valid:
            res.status = Status.NUMERICAL_FAILURE
            res.message = f"ray check failed (margin {check.margin:.3g}, violation {check.violation:.3g})"
    return res


def _reduced_blocks(cones, keep_cols):
    from .conic import FREE, ConeBlock

    keep = set(int(j) for j in keep_cols)
    out = []
    pos = 0
    for blk in cones:
        if blk.kind == FREE:
            dim = sum(1 for j in range(pos, pos + blk.dim) if j in keep)
            if dim:
                out.append(ConeBlock(FREE, dim))
        else:
            out.append(blk)
        pos += blk.dim
    return tuple(out)


def _dual_cone_gap(layout: ConeLayout, v: np.ndarray) -> float:
    worst = float(np.max(np.abs(v[layout.free]), initial=0.0))
    if layout.nonneg.size:
        worst = max(worst, float(np.max(-v[layout.nonneg])))
    for start, dim in layout.socs:
        worst = max(worst, float(np.linalg.norm(v[start + 1:start + dim])) - v[start])
    return max(worst, 0.0)


def _hsd(A: sp.csc_matrix, b: np.ndarray, c: np.ndarray, layout: ConeLayout,
         settings: SolverSettings) -> Solution:
    m, n = A.shape
    AT = A.T.tocsr()
    conic = layout.conic
    nu = layout.degree
    e = layout.identity()
    nb = float(np.linalg.norm(b))
    nc = float(np.linalg.norm(c))

    x = e.copy()
    s = e.copy()
    y = np.zeros(m)
    tau = kappa = 1.0

    kkt = _KKT(A, layout, settings.regularization, settings.refine_steps)
    rhs_cb = np.concatenate([c, b])
    pres = dres = gap = math.inf
    best_mu = math.inf
    stall = 0

    def finish(status, it, objective=None, message=""):
        return Solution(status, x / max(tau, 1e-300) if status is Status.OPTIMAL else x,
                        y / tau if status is Status.OPTIMAL else y,
                        s / tau if status is Status.OPTIMAL else s,
                        objective, pres, dres, gap, it, message=message)

    for it in range(settings.max_iter + 1):
        Ax = A @ x
        ATy = AT @ y
        rp = tau * b - Ax
        rd = tau * c - ATy - s
        cx, by = float(c @ x), float(b @ y)
        rg = kappa + cx - by
        mu = (float(x[conic] @ s[conic]) + tau * kappa) / (nu + 1)

        pres = float(np.linalg.norm(rp)) / tau / (1.0 + nb)
        dres = float(np.linalg.norm(rd)) / tau / (1.0 + nc)
        pobj, dobj = cx / tau, by / tau
        gap = abs(pobj - dobj)
        relgap = gap / max(1.0, min(abs(pobj), abs(dobj)))
        if settings.verbose:
            logger.info("it %3d  pobj %+.8e  dobj %+.8e  pres %.2e  dres %.2e  gap %.2e  tau %.2e  kappa %.2e  mu %.2e",
                        it, pobj, dobj, pres, dres, relgap, tau, kappa, mu)

        if pres <= settings.feastol and dres <= settings.feastol and relgap <= settings.gaptol:
            return finish(Status.OPTIMAL, it, objective=pobj)

        if kappa > tau:
            if by > 0:
                # -A'y must lie in K*; s is only one witness of that
                ares = _dual_cone_gap(layout, -ATy)
                if ares <= 0.5 * settings.certtol * by:
                    y_cert = y / np.linalg.norm(y)
                    out = finish(Status.PRIMAL_INFEASIBLE, it)
                    out.y = y_cert
                    return out
            if cx < 0:
                xres = float(np.linalg.norm(Ax))
                if xres <= 0.5 * settings.certtol * (-cx):
                    out = finish(Status.DUAL_INFEASIBLE, it)
                    out.x = x / np.linalg.norm(x)
                    return out

        if it == settings.max_iter:
            return finish(Status.ITERATION_LIMIT, it, message="iteration limit reached")

        if mu < 0.5 * best_mu:
            best_mu, stall = mu, 0
        else:
            stall += 1
            if stall >= 20:
                return finish(Status.NUMERICAL_FAILURE, it, message="no progress for 20 iterations")

        try:
            W = NTScaling.compute(layout, x, s)
            h_diag, h_dense = W.hessian_blocks()
            kkt.factor(h_diag, h_dense)
            u1 = kkt.solve(rhs_cb)
        except (ValueError, RuntimeError, FloatingPointError, ZeroDivisionError) as exc:
            return finish(Status.NUMERICAL_FAILURE, it, message=f"KKT factorisation failed: {exc}")
        dx1, dy1 = u1[:n], u1[n:]
        denom = float(c @ dx1 - b @ dy1) - kappa / tau
        lam = W.lam

        def direction(rc, rk, eta):
            wrc = W.apply(layout.jordan_divide(lam, rc))
            q = np.concatenate([eta * rd - wrc, eta * rp])
            u0 = kkt.solve(q)
            dx0, dy0 = u0[:n], u0[n:]
            dtau = (-eta * rg - rk / tau - float(c @ dx0) + float(b @ dy0)) / denom
            dx = dx0 + dtau * dx1
            dy = dy0 + dtau * dy1
            ds = wrc - W.apply(W.apply(dx))
            dkappa = (rk - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        def step_length(dx, ds, dtau, dkappa):
            alpha = min(layout.max_step(lam, W.apply(dx)),
                        layout.max_step(lam, W.apply(ds, inverse=True)))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        try:
            lamlam = layout.jordan_product(lam, lam)
            dx_a, dy_a, ds_a, dtau_a, dkappa_a = direction(-lamlam, -tau * kappa, 1.0)
            alpha_a = min(1.0, step_length(dx_a, ds_a, dtau_a, dkappa_a))
            sigma = min(1.0, max(0.0, (1.0 - alpha_a) ** 3))

            corr = layout.jordan_product(W.apply(ds_a, inverse=True), W.apply(dx_a))
            rc = -lamlam + sigma * mu * e - corr
            rk = -tau * kappa + sigma * mu - dtau_a * dkappa_a
            dx, dy, ds, dtau, dkappa = direction(rc, rk, 1.0 - sigma)
            alpha = min(1.0, settings.step_fraction * step_length(dx, ds, dtau, dkappa))
        except (ValueError, RuntimeError, FloatingPointError, ZeroDivisionError) as exc:
            return finish(Status.NUMERICAL_FAILURE, it, message=f"search direction failed: {exc}")

        if not np.all(np.isfinite(dx)) or not np.all(np.isfinite(dy)) or not math.isfinite(alpha):
            return finish(Status.NUMERICAL_FAILURE, it, message="non-finite search direction")
        if alpha < 1e-12:
            return finish(Status.NUMERICAL_FAILURE, it, message="step length collapsed")

        # rounding can put a full step on the cone boundary; back off until strictly inside
        for _ in range(40):
            x_new, s_new = x + alpha * dx, s + alpha * ds
            if (layout.is_interior(x_new) and layout.is_interior(s_new)
                    and tau + alpha * dtau > 0 and kappa + alpha * dkappa > 0):
                break
            alpha *= 0.5
        else:
            return finish(Status.NUMERICAL_FAILURE, it, message="could not stay inside the cone")
        x = x_new
        y = y + alpha * dy
        s = s_new
        s[layout.free] = 0.0
        tau += alpha * dtau
        kappa += alpha * dkappa

    raise AssertionError("unreachable")


@dataclass
class ProgramSolution:
    """Solver outcome mapped back onto a :class:`ConicProgram`'s variables."""

    status: Status
    objective: float | None
    values: np.ndarray | None
    raw: Solution = field(repr=False)
    form: StandardConicForm = field(repr=False)

    def value(self, item) -> float:
        if self.values is None:
            raise ValueError(f"no primal values for status {self.status.value}")
        if isinstance(item, Variable):
            return float(self.values[item.index])
        return as_expr(item).value(self.values)


def solve_program(program: ConicProgram, settings: SolverSettings | None = None) -> ProgramSolution:
    """Lower ``program``, solve it and map the result back."""
    form = program.to_standard_form()
    raw = solve(form, settings)
    if raw.status is Status.OPTIMAL:
        return ProgramSolution(raw.status, form.objective_value(raw.x), form.recover(raw.x), raw, form)
    return ProgramSolution(raw.status, None, None, raw, form)
