"""Standalone checks for infeasibility certificates.

Deliberately independent of the solver internals: cones are re-derived from
the block layout and every test is a direct evaluation of the Farkas
conditions on the raw problem data.

For ``min c@x  s.t.  A@x == b,  x in K``:

* a *primal* certificate is ``y`` with ``b@y > 0`` and ``-A.T@y`` in the dual
  cone ``K*``: any feasible ``x`` would give ``b@y = y@A@x = -(-A.T@y)@x <= 0``;
* a *dual* certificate is a ray ``x`` in ``K`` with ``A@x == 0`` and
  ``c@x < 0``.

The free cone's dual is ``{0}``; the orthant and the SOC are self-dual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CertificateCheck:
    valid: bool
    margin: float     # b@y (or -c@x) after normalising the certificate to unit 2-norm
    violation: float  # worst cone-membership / equality violation, same normalisation

    def __bool__(self) -> bool:
        return self.valid


def dual_cone_violation(v: np.ndarray, cones) -> float:
    """Largest violation of ``v in K*`` over all blocks (0 when inside)."""
    worst = 0.0
    pos = 0
    for blk in cones:
        seg = np.asarray(v[pos:pos + blk.dim], dtype=float)
        if blk.kind == "free":
            worst = max(worst, float(np.max(np.abs(seg))))
        elif blk.kind == "nonneg":
            worst = max(worst, float(np.max(-seg, initial=0.0)))
        elif blk.kind == "soc":
            worst = max(worst, float(np.hypot.reduce(seg[1:]) - seg[0]) if seg.size > 1 else -seg[0])
        else:
            raise ValueError(f"unknown cone kind {blk.kind!r}")
        pos += blk.dim
    return worst


def primal_cone_violation(v: np.ndarray, cones) -> float:
    """Largest violation of ``v in K`` (free blocks are unconstrained)."""
    worst = 0.0
    pos = 0
    for blk in cones:
        seg = np.asarray(v[pos:pos + blk.dim], dtype=float)
        if blk.kind == "nonneg":
            worst = max(worst, float(np.max(-seg, initial=0.0)))
        elif blk.kind == "soc":
            worst = max(worst, float(np.hypot.reduce(seg[1:]) - seg[0]) if seg.size > 1 else -seg[0])
        elif blk.kind != "free":
            raise ValueError(f"unknown cone kind {blk.kind!r}")
        pos += blk.dim
    return max(worst, 0.0)


def verify_primal_infeasibility(A, b, cones, y, tol: float = 1e-8) -> CertificateCheck:
    """Check a Farkas certificate ``y`` for ``{A x = b, x in K}`` being empty.

    ``y`` is scaled to unit 2-norm; it is accepted when ``b@y > 0`` and the
    cone violation of ``-A.T@y`` is at most ``tol * b@y`` (so the violation is
    measured relative to the separation it certifies).
    """
    y = np.asarray(y, dtype=float)
    norm = float(np.linalg.norm(y))
    if not np.isfinite(norm) or norm == 0.0:
        return CertificateCheck(False, 0.0, float("inf"))
    y = y / norm
    margin = float(np.asarray(b) @ y)
    violation = dual_cone_violation(-(A.T @ y), cones)
    valid = margin > 0.0 and violation <= tol * margin
    return CertificateCheck(valid, margin, violation)


def verify_dual_infeasibility(A, c, cones, x, tol: float = 1e-8) -> CertificateCheck:
    """Check an improving ray ``x``: ``x in K``, ``A x = 0``, ``c@x < 0``."""
    x = np.asarray(x, dtype=float)
    norm = float(np.linalg.norm(x))
    if not np.isfinite(norm) or norm == 0.0:
        return CertificateCheck(False, 0.0, float("inf"))
    x = x / norm
    margin = -float(np.asarray(c) @ x)
    eq = float(np.max(np.abs(A @ x), initial=0.0))
    violation = max(eq, primal_cone_violation(x, cones))
    valid = margin > 0.0 and violation <= tol * margin
    return CertificateCheck(valid, margin, violation)
