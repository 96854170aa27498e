"""Expression-based builder for LP + second-order-cone programs.

A :class:`ConicProgram` holds bounded scalar variables, a linear objective,
linear equalities ``expr == 0``, linear inequalities ``expr <= 0`` and SOC
constraints ``||v||_2 <= t``.  :func:`to_standard_form` lowers it to

    minimize    c @ x
    subject to  A @ x == b,   x in K

where ``K`` is an ordered product of free, nonnegative and second-order-cone
blocks laid out over the columns of ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Real
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

FREE = "free"
NONNEG = "nonneg"
SOC = "soc"


class Variable(NamedTuple):
    """Opaque handle to one scalar variable of a program."""

    index: int

    def _expr(self) -> "LinearExpr":
        return LinearExpr({self.index: 1.0})

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return as_expr(other) - self._expr()

    def __mul__(self, other):
        return self._expr() * other

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._expr() / other

    def __neg__(self):
        return -self._expr()


class LinearExpr:
    """Sparse affine expression ``sum(coef * var) + constant``."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: dict[int, float] | None = None, constant: float = 0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.constant = float(constant)

    @classmethod
    def sum(cls, items: Iterable) -> "LinearExpr":
        out = cls()
        for item in items:
            out._iadd(as_expr(item), 1.0)
        return out

    def _iadd(self, other: "LinearExpr", scale: float) -> None:
        for idx, coef in other.terms.items():
            self.terms[idx] = self.terms.get(idx, 0.0) + scale * coef
        self.constant += scale * other.constant

    def copy(self) -> "LinearExpr":
        return LinearExpr(self.terms, self.constant)

    def __add__(self, other):
        out = self.copy()
        out._iadd(as_expr(other), 1.0)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        out = self.copy()
        out._iadd(as_expr(other), -1.0)
        return out

    def __rsub__(self, other):
        out = as_expr(other).copy()
        out._iadd(self, -1.0)
        return out

    def __mul__(self, other):
        if not isinstance(other, Real):
            raise TypeError("linear expressions can only be scaled by real numbers")
        k = float(other)
        return LinearExpr({i: k * c for i, c in self.terms.items()}, k * self.constant)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def __neg__(self):
        return self * -1.0

    def single_variable(self) -> Variable | None:
        """The variable if this expression is exactly ``1 * var``."""
        if self.constant == 0.0 and len(self.terms) == 1:
            (idx, coef), = self.terms.items()
            if coef == 1.0:
                return Variable(idx)
        return None

    def value(self, values: np.ndarray) -> float:
        return self.constant + sum(c * float(values[i]) for i, c in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{c:+g}*x{i}" for i, c in sorted(self.terms.items())]
        if self.constant or not parts:
            parts.append(f"{self.constant:+g}")
        return "LinearExpr(" + " ".join(parts) + ")"


def as_expr(item) -> LinearExpr:
    if isinstance(item, LinearExpr):
        return item
    if isinstance(item, Variable):
        return LinearExpr({item.index: 1.0})
    if isinstance(item, Real):
        return LinearExpr(constant=float(item))
    raise TypeError(f"cannot convert {type(item).__name__} to a linear expression")


class ConstraintRef(NamedTuple):
    kind: str  # "eq", "le" or "soc"
    index: int


@dataclass
class _Soc:
    t: LinearExpr
    v: list[LinearExpr]
    name: str | None


class ConicProgram:
    """Mutable LP/SOCP model.  Lower it with :meth:`to_standard_form`."""

    def __init__(self, name: str = "program"):
        self.name = name
        self._lower: list[float] = []
        self._upper: list[float] = []
        self._names: list[str | None] = []
        self.equalities: list[tuple[LinearExpr, str | None]] = []
        self.inequalities: list[tuple[LinearExpr, str | None]] = []
        self.socs: list[_Soc] = []
        self.objective = LinearExpr()
        self.sense = "min"

    # -- variables ---------------------------------------------------------
    def add_variable(self, lower: float = -math.inf, upper: float = math.inf,
                     name: str | None = None) -> Variable:
        lower, upper = float(lower), float(upper)
        if math.isnan(lower) or math.isnan(upper):
            raise ValueError("variable bounds must not be NaN")
        if lower == math.inf or upper == -math.inf:
            raise ValueError(f"bounds [{lower}, {upper}] leave no admissible value")
        if lower > upper:
            raise ValueError(f"inverted bounds for {name or 'variable'}: lower {lower} > upper {upper}")
        self._lower.append(lower)
        self._upper.append(upper)
        self._names.append(name)
        return Variable(len(self._lower) - 1)

    def add_variables(self, count: int, lower: float = -math.inf, upper: float = math.inf,
                      name: str | None = None) -> list[Variable]:
        return [
            self.add_variable(lower, upper, None if name is None else f"{name}[{i}]")
            for i in range(count)
        ]

    @property
    def num_variables(self) -> int:
        return len(self._lower)

    def bounds(self, var: Variable) -> tuple[float, float]:
        self._check_var(var.index)
        return self._lower[var.index], self._upper[var.index]

    def var_name(self, var: Variable | int) -> str:
        idx = var.index if isinstance(var, Variable) else int(var)
        return self._names[idx] or f"x{idx}"

    def _check_var(self, idx: int) -> None:
        if not 0 <= idx < len(self._lower):
            raise KeyError(f"variable index {idx} does not belong to program {self.name!r}")

    def _check_expr(self, expr: LinearExpr) -> LinearExpr:
        expr = as_expr(expr)
        for idx, coef in expr.terms.items():
            self._check_var(idx)
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient on {self.var_name(idx)}")
        if not math.isfinite(expr.constant):
            raise ValueError("non-finite constant term")
        return expr

    # -- constraints -------------------------------------------------------
    def add_eq(self, lhs, rhs=0.0, name: str | None = None) -> ConstraintRef:
        """Add ``lhs == rhs``."""
        expr = self._check_expr(as_expr(lhs) - rhs)
        self.equalities.append((expr, name))
        return ConstraintRef("eq", len(self.equalities) - 1)

    def add_le(self, lhs, rhs=0.0, name: str | None = None) -> ConstraintRef:
        """Add ``lhs <= rhs``."""
        expr = self._check_expr(as_expr(lhs) - rhs)
        self.inequalities.append((expr, name))
        return ConstraintRef("le", len(self.inequalities) - 1)

    def add_ge(self, lhs, rhs=0.0, name: str | None = None) -> ConstraintRef:
        """Add ``lhs >= rhs``."""
        return self.add_le(as_expr(rhs) - lhs, 0.0, name)

    def add_soc(self, t, v: Sequence, name: str | None = None) -> ConstraintRef:
        """Add ``||v||_2 <= t``."""
        if len(v) == 0:
            raise ValueError("second-order cone constraint needs a nonempty vector part")
        t_expr = self._check_expr(as_expr(t))
        v_exprs = [self._check_expr(as_expr(e)) for e in v]
        self.socs.append(_Soc(t_expr, v_exprs, name))
        return ConstraintRef("soc", len(self.socs) - 1)

    def add_rotated_soc(self, u, a, b, name: str | None = None) -> ConstraintRef:
        """Add the hyperbolic constraint ``u**2 <= a * b`` with ``a, b >= 0``."""
        a, b = as_expr(a), as_expr(b)
        return self.add_soc(a + b, [as_expr(u) * 2.0, a - b], name=name)

    # -- objective ---------------------------------------------------------
    def set_objective(self, expr, sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ValueError(f"objective sense must be 'min' or 'max', got {sense!r}")
        self.objective = self._check_expr(as_expr(expr))
        self.sense = sense

    def minimize(self, expr) -> None:
        self.set_objective(expr, "min")

    def maximize(self, expr) -> None:
        self.set_objective(expr, "max")

    def to_standard_form(self) -> "StandardConicForm":
        return to_standard_form(self)

    # -- debugging ---------------------------------------------------------
    def dump(self) -> str:
        """Human-readable listing of variables, constraints and cones."""

        def fmt(e: LinearExpr) -> str:
            parts = [f"{c:+.6g} {self.var_name(i)}" for i, c in sorted(e.terms.items())]
            if e.constant or not parts:
                parts.append(f"{e.constant:+.6g}")
            return " ".join(parts)

        lines = [f"program {self.name}", f"{self.sense}imize {fmt(self.objective)}", "variables:"]
        for i in range(self.num_variables):
            lines.append(f"  {self.var_name(i)} in [{self._lower[i]:.6g}, {self._upper[i]:.6g}]")
        lines.append("equalities:")
        for expr, name in self.equalities:
            lines.append(f"  {name or '-'}: {fmt(expr)} == 0")
        lines.append("inequalities:")
        for expr, name in self.inequalities:
            lines.append(f"  {name or '-'}: {fmt(expr)} <= 0")
        lines.append("cones:")
        for soc in self.socs:
            vec = ", ".join(fmt(e) for e in soc.v)
            lines.append(f"  {soc.name or '-'}: || [{vec}] ||_2 <= {fmt(soc.t)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    dim: int


@dataclass(frozen=True)
class StandardConicForm:
    """``min c@x  s.t.  A@x == b,  x in K`` plus the map back to the program.

    Original variable ``i`` equals ``offset[i] + scale[i] * x[column[i]]``, or
    just ``offset[i]`` when ``column[i] == -1`` (fixed variables).  The
    original objective equals ``obj_sign * (c @ x) + obj_offset``.
    """

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple[ConeBlock, ...]
    column: np.ndarray
    scale: np.ndarray
    offset: np.ndarray
    obj_sign: float = 1.0
    obj_offset: float = 0.0
    row_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if sum(blk.dim for blk in self.cones) != self.A.shape[1]:
            raise ValueError("cone layout does not cover the columns of A")
        if self.c.shape != (self.A.shape[1],) or self.b.shape != (self.A.shape[0],):
            raise ValueError("c/b shapes do not match A")
        for arr in (self.c, self.b, self.column, self.scale, self.offset):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def recover(self, x: np.ndarray) -> np.ndarray:
        """Original-variable values from a standard-form point."""
        x = np.asarray(x, dtype=float)
        vals = self.offset.copy()
        has_col = self.column >= 0
        vals[has_col] += self.scale[has_col] * x[self.column[has_col]]
        return vals

    def objective_value(self, x: np.ndarray) -> float:
        return self.obj_sign * float(self.c @ x) + self.obj_offset


class _Lowering:
    """Column allocator: free, nonnegative and SOC columns get final indices
    only after every constraint has been visited."""

    def __init__(self):
        self.n_free = 0
        self.n_nonneg = 0
        self.soc_dims: list[int] = []
        self.rows: list[tuple[list[tuple[tuple, float]], float]] = []
        self.row_names: list[str] = []

    def free(self) -> tuple:
        self.n_free += 1
        return (0, self.n_free - 1)

    def nonneg(self) -> tuple:
        self.n_nonneg += 1
        return (1, self.n_nonneg - 1)

    def soc_block(self, dim: int) -> list[tuple]:
        self.soc_dims.append(dim)
        blk = len(self.soc_dims) - 1
        return [(2, blk, j) for j in range(dim)]

    def add_row(self, entries, rhs: float, name: str) -> None:
        self.rows.append((entries, rhs))
        self.row_names.append(name)

    def final_index(self) -> dict:
        index = {}
        for j in range(self.n_free):
            index[(0, j)] = j
        base = self.n_free
        for j in range(self.n_nonneg):
            index[(1, j)] = base + j
        base += self.n_nonneg
        for blk, dim in enumerate(self.soc_dims):
            for j in range(dim):
                index[(2, blk, j)] = base + j
            base += dim
        return index


def to_standard_form(program: ConicProgram) -> StandardConicForm:
    """Lower ``program`` to standard conic form.

    * free variables become free columns; fixed variables become constants;
    * a finite lower (upper) bound shifts (reflects) the variable onto a
      nonnegative column; a box adds a second nonnegative slack with
      ``s_low + s_up == upper - lower``;
    * ``expr <= 0`` gets a nonnegative slack, equalities are kept as rows;
    * each SOC constraint gets its own cone block of auxiliary columns tied
      to ``t`` and ``v`` by equality rows;
    * a maximization objective is negated.

    The output depends only on the program contents, so lowering twice gives
    bit-identical arrays.
    """
    low = _Lowering()
    nvar = program.num_variables
    var_handle: list[tuple | None] = [None] * nvar
    scale = np.zeros(nvar)
    offset = np.zeros(nvar)

    for i in range(nvar):
        lo, up = program._lower[i], program._upper[i]
        name = program.var_name(i)
        if lo == up:
            offset[i] = lo
        elif math.isinf(lo) and math.isinf(up):
            var_handle[i], scale[i] = low.free(), 1.0
        elif math.isinf(up):
            var_handle[i], scale[i], offset[i] = low.nonneg(), 1.0, lo
        elif math.isinf(lo):
            var_handle[i], scale[i], offset[i] = low.nonneg(), -1.0, up
        else:
            h = low.nonneg()
            var_handle[i], scale[i], offset[i] = h, 1.0, lo
            low.add_row([(h, 1.0), (low.nonneg(), 1.0)], up - lo, f"box:{name}")

    def substitute(expr: LinearExpr) -> tuple[list[tuple[tuple, float]], float]:
        entries = []
        const = expr.constant
        for idx in sorted(expr.terms):
            coef = expr.terms[idx]
            const += coef * offset[idx]
            h = var_handle[idx]
            if h is not None and coef != 0.0:
                entries.append((h, coef * scale[idx]))
        return entries, const

    for k, (expr, name) in enumerate(program.equalities):
        entries, const = substitute(expr)
        low.add_row(entries, -const, name or f"eq{k}")

    for k, (expr, name) in enumerate(program.inequalities):
        entries, const = substitute(expr)
        entries.append((low.nonneg(), 1.0))
        low.add_row(entries, -const, name or f"le{k}")

    for k, soc in enumerate(program.socs):
        label = soc.name or f"soc{k}"
        handles = low.soc_block(1 + len(soc.v))
        for j, expr in enumerate([soc.t, *soc.v]):
            entries, const = substitute(expr)
            row = [(handles[j], 1.0)] + [(h, -c) for h, c in entries]
            low.add_row(row, const, f"{label}[{j}]")

    index = low.final_index()
    ncol = len(index)

    rows, cols, vals = [], [], []
    b = np.zeros(len(low.rows))
    for r, (entries, rhs) in enumerate(low.rows):
        b[r] = rhs
        for h, coef in entries:
            rows.append(r)
            cols.append(index[h])
            vals.append(coef)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(len(low.rows), ncol)).tocsc()
    A.sum_duplicates()
    A.sort_indices()

    obj_entries, obj_const = substitute(program.objective)
    sign = 1.0 if program.sense == "min" else -1.0
    c = np.zeros(ncol)
    for h, coef in obj_entries:
        c[index[h]] += sign * coef

    column = np.array([-1 if h is None else index[h] for h in var_handle], dtype=np.int64)

    cones = []
    if low.n_free:
        cones.append(ConeBlock(FREE, low.n_free))
    if low.n_nonneg:
        cones.append(ConeBlock(NONNEG, low.n_nonneg))
    cones.extend(ConeBlock(SOC, d) for d in low.soc_dims)

    return StandardConicForm(
        c=c, A=A, b=b, cones=tuple(cones), column=column, scale=scale, offset=offset,
        obj_sign=sign, obj_offset=obj_const, row_names=tuple(low.row_names),
    )
