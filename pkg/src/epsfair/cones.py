"""Cone arithmetic for the interior-point solver.

Only the symmetric cones needed here: the nonnegative orthant and the
second-order (Lorentz) cone ``{(t, v) : ||v||_2 <= t}``.  Free columns carry
no cone constraint; their dual slack is identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conic import FREE, NONNEG, SOC, ConeBlock


class ConeLayout:
    """Index bookkeeping for an ordered product of cone blocks."""

    def __init__(self, blocks: tuple[ConeBlock, ...] | list[ConeBlock]):
        free, nonneg, socs = [], [], []
        pos = 0
        for blk in blocks:
            if blk.dim <= 0:
                raise ValueError(f"cone block {blk} has nonpositive dimension")
            if blk.kind == FREE:
                free.extend(range(pos, pos + blk.dim))
            elif blk.kind == NONNEG:
                nonneg.extend(range(pos, pos + blk.dim))
            elif blk.kind == SOC:
                socs.append((pos, blk.dim))
            else:
                raise ValueError(f"unsupported cone kind {blk.kind!r}")
            pos += blk.dim
        self.blocks = tuple(blocks)
        self.n = pos
        self.free = np.array(free, dtype=np.int64)
        self.nonneg = np.array(nonneg, dtype=np.int64)
        self.socs = socs
        self.conic = np.array(
            sorted(set(range(pos)) - set(free)), dtype=np.int64
        )
        #: barrier degree: one per orthant coordinate and per SOC block
        self.degree = len(nonneg) + len(socs)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        e[self.nonneg] = 1.0
        for start, _ in self.socs:
            e[start] = 1.0
        return e

    def jordan_product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        nn = self.nonneg
        out[nn] = u[nn] * v[nn]
        for start, dim in self.socs:
            su, sv = u[start:start + dim], v[start:start + dim]
            out[start] = su @ sv
            out[start + 1:start + dim] = su[0] * sv[1:] + sv[0] * su[1:]
        return out

    def jordan_divide(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Solve ``lam o u = r`` for ``u`` (``lam`` in the cone interior)."""
        out = np.zeros(self.n)
        nn = self.nonneg
        out[nn] = r[nn] / lam[nn]
        for start, dim in self.socs:
            l0, l1 = lam[start], lam[start + 1:start + dim]
            r0, r1 = r[start], r[start + 1:start + dim]
            det = soc_det(l0, l1)
            u0 = (l0 * r0 - l1 @ r1) / det
            out[start] = u0
            out[start + 1:start + dim] = (r1 - u0 * l1) / l0
        return out

    def max_step(self, lam: np.ndarray, d: np.ndarray) -> float:
        """Largest ``alpha`` with ``lam + alpha*d`` in the cone (``inf`` if unbounded).

        ``lam`` must be interior.  For SOC blocks the step is read off the
        eigenvalues of ``d`` expressed in the frame where ``lam`` is the
        identity.
        """
        alpha = math.inf
        nn = self.nonneg
        if nn.size:
            dn = d[nn]
            neg = dn < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-lam[nn][neg] / dn[neg])))
        for start, dim in self.socs:
            l0, l1 = lam[start], lam[start + 1:start + dim]
            d0, d1 = d[start], d[start + 1:start + dim]
            lnorm = math.sqrt(soc_det(l0, l1))
            b0, b1 = l0 / lnorm, l1 / lnorm
            prod = b0 * d0 - b1 @ d1
            rho0 = prod / lnorm
            factor = (prod + d0) / (b0 + 1.0)
            rho1 = (d1 - factor * b1) / lnorm
            worst = float(np.linalg.norm(rho1)) - rho0
            if worst > 0:
                alpha = min(alpha, 1.0 / worst)
        return alpha

    def is_interior(self, v: np.ndarray) -> bool:
        if self.nonneg.size and np.any(v[self.nonneg] <= 0):
            return False
        for start, dim in self.socs:
            if not (v[start] > 0 and soc_det(v[start], v[start + 1:start + dim]) > 0):
                return False
        return True


def soc_det(t: float, v: np.ndarray) -> float:
    """``t**2 - ||v||**2`` computed as a product to limit cancellation."""
    nv = float(np.linalg.norm(v))
    return (t - nv) * (t + nv)


@dataclass
class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W x = W^{-1} s = lam``.

    Orthant part: ``W = diag(sqrt(s/x))``.  SOC block: ``W = eta * Wbar`` with
    ``Wbar = [[w0, w1'], [w1, I + w1 w1'/(1 + w0)]]``.
    """

    layout: ConeLayout
    d: np.ndarray  # orthant diagonal, indexed like layout.nonneg
    eta: list[float]
    wbar: list[np.ndarray]
    lam: np.ndarray

    @classmethod
    def compute(cls, layout: ConeLayout, x: np.ndarray, s: np.ndarray) -> "NTScaling":
        nn = layout.nonneg
        d = np.sqrt(s[nn] / x[nn])
        lam = np.zeros(layout.n)
        lam[nn] = np.sqrt(s[nn] * x[nn])
        etas, wbars = [], []
        for start, dim in layout.socs:
            xb = x[start:start + dim]
            sb = s[start:start + dim]
            xr = math.sqrt(soc_det(xb[0], xb[1:]))
            sr = math.sqrt(soc_det(sb[0], sb[1:]))
            xn, sn = xb / xr, sb / sr
            gamma = math.sqrt((1.0 + float(xn @ sn)) / 2.0)
            w = sn.copy()
            w[0] += xn[0]
            w[1:] -= xn[1:]
            w /= 2.0 * gamma
            eta = math.sqrt(sr / xr)
            etas.append(eta)
            wbars.append(w)
        scaling = cls(layout, d, etas, wbars, lam)
        for k, (start, dim) in enumerate(layout.socs):
            blk = scaling._apply_block(k, x[start:start + dim], inverse=False)
            # det(W x) = det(x)^(1/2) det(s)^(1/2) exactly; rebuild lam_0 from it
            xr = math.sqrt(soc_det(x[start], x[start + 1:start + dim]))
            sr = math.sqrt(soc_det(s[start], s[start + 1:start + dim]))
            blk[0] = math.sqrt(float(blk[1:] @ blk[1:]) + xr * sr)
            lam[start:start + dim] = blk
        return scaling

    def _apply_block(self, k: int, v: np.ndarray, inverse: bool) -> np.ndarray:
        w = self.wbar[k]
        w0, w1 = w[0], w[1:]
        v0, v1 = v[0], v[1:]
        dot = float(w1 @ v1)
        out = np.empty_like(v)
        if not inverse:
            out[0] = w0 * v0 + dot
            out[1:] = v1 + (v0 + dot / (1.0 + w0)) * w1
            return self.eta[k] * out
        out[0] = w0 * v0 - dot
        out[1:] = v1 - (v0 - dot / (1.0 + w0)) * w1
        return out / self.eta[k]

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        """``W v`` (or ``W^{-1} v``) on the conic coordinates; zero elsewhere."""
        lay = self.layout
        out = np.zeros(lay.n)
        nn = lay.nonneg
        out[nn] = v[nn] / self.d if inverse else v[nn] * self.d
        for k, (start, dim) in enumerate(lay.socs):
            out[start:start + dim] = self._apply_block(k, v[start:start + dim], inverse)
        return out

    def hessian_blocks(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """``W^2``: orthant diagonal and one dense matrix per SOC block."""
        dense = []
        for k, w in enumerate(self.wbar):
            w0, w1 = w[0], w[1:]
            dim = w.size
            mat = np.empty((dim, dim))
            mat[0, 0] = w0
            mat[0, 1:] = w1
            mat[1:, 0] = w1
            mat[1:, 1:] = np.eye(dim - 1) + np.outer(w1, w1) / (1.0 + w0)
            dense.append(self.eta[k] ** 2 * (mat @ mat))
        return self.d**2, dense
