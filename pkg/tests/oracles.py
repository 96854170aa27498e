"""Reference computations used by the tests, written without the package.

Nothing here imports the solver or the model builders: the grid oracle
works on the closed-form feasible set of the radial 3-bus fixtures, and the
LP oracle enumerates vertices with dense linear algebra.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

THREE_BUS = """\
function mpc = threebus
% radial fixture: generator at bus 1, loads at buses 2 and 3
mpc.version = '2';
mpc.baseMVA = 1;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t1\t1\t1.1\t0.9;
\t2\t1\t{d2}\t0\t0\t0\t1\t1\t0\t1\t1\t1.1\t0.9;
\t3\t1\t{d3}\t0\t0\t0\t1\t1\t0\t1\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t0\t0\t1\t1\t1\t{gmax}\t0;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t{c2}\t0\t0\t0\t0\t1\t-360\t360;
\t1\t3\t0\t0.1\t0\t{c3}\t0\t0\t0\t0\t1\t-360\t360;
];
"""


def three_bus_text(c2=5, c3=5, d2=6, d3=6, gmax=10) -> str:
    return THREE_BUS.format(c2=c2, c3=c3, d2=d2, d3=d3, gmax=gmax)


def radial_grid_oracle(caps, demands, gmax, step=1e-3, eps=None, p=1.0, chunk=400):
    """Exhaustive search over sheds on a ``step`` lattice for the radial fixture.

    Each load bus hangs off the generator bus on its own line, so (by KCL)
    load ``i`` can be served at most ``caps[i]`` and the generator covers the
    total served demand.  ``None`` entries in ``caps`` mark a removed line.
    Minimises ``||d||_p`` (``p = 1`` is total shed) subject to optional
    ``kappa*||d||_2 <= sum(d)``.  Returns ``(value, d)`` with ties broken by
    the smallest total shed, or ``None`` when no lattice point is feasible.
    """
    d2max, d3max = demands
    g2 = np.round(np.arange(0.0, d2max + step / 2, step), 12)
    g3 = np.round(np.arange(0.0, d3max + step / 2, step), 12)
    best = None
    n = 2
    kap = None if eps is None else 1 - eps + eps * math.sqrt(n)
    for start in range(0, g2.size, chunk):
        a = g2[start:start + chunk][:, None]
        b = g3[None, :]
        ok = np.ones((a.size, b.size), dtype=bool)
        for cap, dmax, d in ((caps[0], d2max, a), (caps[1], d3max, b)):
            served = dmax - d
            limit = 0.0 if cap is None else cap
            ok &= served <= limit + 1e-12
        ok &= (d2max - a) + (d3max - b) <= gmax + 1e-12
        if kap is not None:
            ok &= kap * np.hypot(a, b) <= a + b + 1e-9
        if not ok.any():
            continue
        if math.isinf(p):
            val = np.maximum(a, b)
        elif p == 1:
            val = a + b
        else:
            val = (a**p + b**p) ** (1.0 / p)
        val = np.where(ok, np.broadcast_to(val, ok.shape), np.inf)
        tot = np.where(ok, np.broadcast_to(a + b, ok.shape), np.inf)
        i, j = np.unravel_index(np.lexsort((tot.ravel(), val.ravel()))[0], ok.shape)
        cand = (float(val[i, j]), float(tot[i, j]), (float(a[i, 0]), float(b[0, j])))
        if best is None or cand[:2] < best[:2]:
            best = cand
    if best is None:
        return None
    return best[0], best[2]


def lp_vertex_oracle(c, G, h, E=None, f=None, tol=1e-9):
    """``min c@x  s.t.  G x <= h,  E x == f`` by enumerating basic solutions.

    The feasible set must be bounded.  Returns ``(value, x)`` or ``None`` when
    no vertex is feasible (the polytope is empty).
    """
    c = np.asarray(c, float)
    G = np.asarray(G, float)
    h = np.asarray(h, float)
    n = c.size
    E = np.zeros((0, n)) if E is None else np.asarray(E, float)
    f = np.zeros(0) if f is None else np.asarray(f, float)
    need = n - E.shape[0]
    combos = np.array(list(itertools.combinations(range(G.shape[0]), need)), dtype=int)
    if combos.size == 0:
        combos = np.zeros((1, 0), dtype=int)
    M = np.concatenate([np.broadcast_to(E, (len(combos),) + E.shape), G[combos]], axis=1)
    r = np.concatenate([np.broadcast_to(f, (len(combos), f.size)), h[combos]], axis=1)
    cond = np.linalg.cond(M)
    good = cond < 1e10
    if not good.any():
        return None
    X = np.linalg.solve(M[good], r[good][..., None])[..., 0]
    scale = 1.0 + np.abs(h)
    feas = np.all(X @ G.T <= h + tol * scale, axis=1)
    if E.shape[0]:
        feas &= np.all(np.abs(X @ E.T - f) <= tol * (1 + np.abs(f)), axis=1)
    if not feas.any():
        return None
    vals = X[feas] @ c
    k = int(np.argmin(vals))
    return float(vals[k]), X[feas][k]


def random_lp(rng, n=None):
    """Bounded random LP data: box rows on every variable plus a few random cuts."""
    n = n or int(rng.integers(1, 7))
    m = int(rng.integers(1, 5))
    c = rng.normal(size=n).round(3)
    G = rng.normal(size=(m, n)).round(3)
    # half the instances have an interior point at the origin, the rest may be empty
    h = rng.normal(size=m).round(3) + (1.0 if rng.random() < 0.5 else 0.0)
    box = float(rng.integers(1, 6))
    n_eq = int(rng.integers(0, 2)) if n >= 2 else 0
    E = rng.normal(size=(n_eq, n)).round(3)
    f = rng.normal(size=n_eq).round(3)
    return c, G, h, box, E, f
